//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. A name filter may be passed as the first
//! non-flag argument.

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use infsig::eval::{
    f1_at_known_ratio, influence_loor_correlation, loor_oracle, per_epoch_detection, ratio_sweep,
};
use infsig::glitch::ErrorEntry;
use infsig::influence::tracin;
use infsig::model::{evaluate_accuracy, last_layer_gradient, train, Params};
use infsig::pipeline::{fit, inject, prepare, read_results_csv, run_experiment, run_pipeline};
use infsig::rng::ChaCha8Rng;
use infsig::signals::{compute, Scope};
use infsig::{
    data::{make_blobs, stratified_split},
    ErrorTable, ExperimentConfig, GlitchType, InfluenceMode, InfluenceTensor, ModelConfig,
    SampleId, Signal, SignalRanking,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs")
}

fn uniform_benchmark() -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join("uniform_sweep.toml")).unwrap()
}

// ---------------------------------------------------------------------------

/// Central differences of the cross-entropy loss over every last-layer
/// parameter, in the `k x (h + 1)` layout of `to_matrix`.
fn finite_difference_gradient(params: &Params, x: &[f64], y: usize) -> Vec<f64> {
    let shape = params.shape;
    let (k, h) = (shape.classes, shape.penultimate_width());
    let off = shape.last_layer_offset();
    let step = 1e-5;
    let mut out = Vec::with_capacity(k * (h + 1));
    for c in 0..k {
        for col in 0..=h {
            let idx = if col < h { off + c * h + col } else { off + k * h + c };
            let mut plus = params.clone();
            plus.values[idx] += step;
            let mut minus = params.clone();
            minus.values[idx] -= step;
            out.push((plus.loss(x, y) - minus.loss(x, y)) / (2.0 * step));
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_matches_finite_differences() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    let mut cases = [0usize; 2];
    for (a, count) in cases.iter_mut().enumerate() {
        while *count < 100 {
            let dims = rng.random_range(2..=6);
            let classes = rng.random_range(2..=5);
            let data = make_blobs(80, dims, classes, rng.random_range(1.0..5.0), rng.random()).unwrap();
            let seed = rng.random();
            let config = if a == 0 {
                ModelConfig::logistic(0.2, 4, 16, seed)
            } else {
                ModelConfig::mlp(rng.random_range(4..=24), 0.1, 4, 16, seed)
            };
            let trail = train(&data, &config).unwrap();
            for _ in 0..10 {
                let t = rng.random_range(0..trail.epochs());
                let params = &trail.checkpoints[t].params;
                let i = rng.random_range(0..data.len());
                let label = rng.random_range(0..classes);
                let analytic = last_layer_gradient(params, data.row(i), label).unwrap().to_matrix();
                let numeric = finite_difference_gradient(params, data.row(i), label);
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(p, q)| p - q).collect();
                let rel = norm(&diff) / norm(&analytic).max(norm(&numeric));
                worst = worst.max(rel);
                *count += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-5 && elapsed < Duration::from_secs(10),
        format!(
            "{} logistic + {} mlp cases, worst relative error {worst:.2e}, {:.2}s",
            cases[0],
            cases[1],
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn random_pipeline(rng: &mut ChaCha8Rng, seed: u64) -> ExperimentConfig {
    let classes = rng.random_range(2..=4);
    let architecture = if rng.random_bool(0.5) {
        format!("architecture = 'mlp'\nhidden_units = {}", rng.random_range(4..=16))
    } else {
        "architecture = 'logistic'".to_string()
    };
    let glitch = match rng.random_range(0..3) {
        0 => format!("type = 'uniform_noise'\nepsilon = {}", rng.random_range(0.05..0.3)),
        1 => format!("type = 'class_dependent_noise'\nepsilon = {}", rng.random_range(0.1..0.4)),
        _ => format!(
            "type = 'outlier'\nepsilon = {}\ncorruption = 'brightness'\nmagnitude = 3.0",
            rng.random_range(0.05..0.2)
        ),
    };
    let text = format!(
        "name = 'prop'\nseed = {seed}\ninfluence_mode = '{}'\n\
         [data]\nsource = 'blobs'\nn = {}\ndims = {}\nclasses = {classes}\nseparation = {}\n\
         [model]\n{architecture}\nlearning_rate = {}\nepochs = {}\nbatch_size = {}\n\
         [[glitches]]\n{glitch}\n",
        if rng.random_bool(0.5) { "paper" } else { "checkpoint" },
        rng.random_range(60..=160),
        rng.random_range(2..=5),
        rng.random_range(1.0..5.0),
        rng.random_range(0.05..0.5),
        rng.random_range(2..=5),
        [4, 8, 16, 32][rng.random_range(0..4)],
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

/// `|a - b| <= 1e-9 * sum |terms|`.
fn sums_agree(total: f64, terms: impl Iterator<Item = f64>) -> bool {
    let (mut sum, mut scale) = (0.0, 0.0);
    for t in terms {
        sum += t;
        scale += t.abs();
    }
    (total - sum).abs() <= 1e-9 * scale
}

fn all_orders(
    tensor: &InfluenceTensor,
    train_labels: &[usize],
    val_labels: &[usize],
) -> Vec<Vec<SampleId>> {
    let scopes = std::iter::once(Scope::Cumulative).chain((0..tensor.epochs()).map(Scope::Epoch));
    let scopes: Vec<Scope> = scopes.collect();
    let mut out = Vec::new();
    for signal in Signal::ALL {
        for &scope in &scopes {
            out.push(compute(signal, tensor, train_labels, val_labels, scope).unwrap().order);
        }
    }
    out
}

fn tracin_algebra_holds_on_random_pipelines() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut negative, mut non_additive, mut reordered, mut checked_orders) = (0, 0, 0, 0);
    for run in 0..50u64 {
        let config = random_pipeline(&mut rng, run);
        let split = prepare(&config).unwrap();
        let (train_set, _) = inject(&config, &split.train, split.validation.max_id()).unwrap();
        let trail = fit(&config, &train_set).unwrap();
        let mode = config.influence_mode;
        let tensor = tracin(&trail, &train_set, &split.validation, mode).unwrap();
        let (n, m, epochs) = (tensor.n_train(), tensor.n_val(), tensor.epochs());

        negative += tensor.per_epoch_self.iter().chain(&tensor.cumulative_self).filter(|v| **v < 0.0).count();
        for i in 0..n {
            if !sums_agree(tensor.cumulative_self[i], (0..epochs).map(|t| tensor.epoch_self(t)[i])) {
                non_additive += 1;
            }
            for j in 0..m {
                let terms = (0..epochs).map(|t| tensor.epoch_slice(t)[i * m + j]);
                if !sums_agree(tensor.cumulative_at(i, j), terms) {
                    non_additive += 1;
                }
            }
        }

        let val_labels = split.validation.labels();
        let base = all_orders(&tensor, train_set.labels(), val_labels);
        for c in [0.5, 2.0, 10.0] {
            let scaled = tracin(&trail.with_scaled_learning_rates(c), &train_set, &split.validation, mode).unwrap();
            let orders = all_orders(&scaled, train_set.labels(), val_labels);
            reordered += base.iter().zip(&orders).filter(|(a, b)| a != b).count();
            checked_orders += orders.len();
        }
    }
    let elapsed = start.elapsed();
    outcome(
        negative == 0 && non_additive == 0 && reordered == 0 && elapsed < Duration::from_secs(120),
        format!(
            "50 pipelines: {negative} negative self-influence values, {non_additive} non-additive entries, \
             {reordered}/{checked_orders} rankings changed under learning-rate scaling, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn loor_agreement_on_convex_instances() -> Outcome {
    let start = Instant::now();
    let mut rhos = Vec::new();
    for seed in 0..10u64 {
        let data = make_blobs(24, 2, 2, 2.0, seed).unwrap().standardized();
        let split = stratified_split(&data, 2.0 / 3.0, seed).unwrap();
        assert_eq!((split.train.len(), split.validation.len()), (16, 8));
        let config = ModelConfig::logistic(0.1, 30, 16, seed);
        let trail = train(&split.train, &config).unwrap();
        let tensor = tracin(&trail, &split.train, &split.validation, InfluenceMode::Paper).unwrap();
        let records = loor_oracle(&split.train, &split.validation, &config).unwrap();
        rhos.push(influence_loor_correlation(&tensor, &records).unwrap());
    }
    let ok = rhos.iter().filter(|r| **r >= 0.6).count();
    let listed: Vec<String> = rhos.iter().map(|r| format!("{r:.3}")).collect();
    let elapsed = start.elapsed();
    outcome(
        ok >= 8 && elapsed < Duration::from_secs(300),
        format!("Spearman >= 0.6 on {ok}/10 seeds [{}]", listed.join(" ")),
    )
}

// ---------------------------------------------------------------------------

fn cancellation_hides_glitch_from_mi_but_not_aai() -> Outcome {
    // sample 0 is glitched: +/- contributions that cancel exactly over epochs
    let epoch0 = [2.0, -1.0, 1.0, 0.5, 0.5, 0.5, 0.2, 0.1];
    let epoch1 = [2.0, -3.0, 0.5, 0.0, 0.25, 0.25, 0.1, 0.1];
    let self0 = [1.0, 1.0, 1.0, 1.0];
    let per_epoch: Vec<f64> = epoch0.iter().chain(&epoch1).copied().collect();
    let per_epoch_self: Vec<f64> = self0.iter().chain(&self0).copied().collect();
    let tensor = InfluenceTensor::from_epochs(
        InfluenceMode::Paper,
        vec![10, 11, 12, 13],
        vec![20, 21],
        per_epoch,
        per_epoch_self,
    )
    .unwrap();
    let labels = [0, 0, 1, 1];
    let mi = compute(Signal::Mi, &tensor, &labels, &[0, 1], Scope::Cumulative).unwrap();
    let aai = compute(Signal::Aai, &tensor, &labels, &[0, 1], Scope::Cumulative).unwrap();
    let mi_score = mi.score_of(10).unwrap();
    let aai_score = aai.score_of(10).unwrap();
    let pass = mi_score == 0.0 && aai_score > 0.0 && mi.order.last() == Some(&10) && aai.order[0] == 10;
    outcome(
        pass,
        format!(
            "glitched sample: MI = {mi_score}, AAI = {aai_score}; MI order {:?}, AAI order {:?}",
            mi.order, aai.order
        ),
    )
}

// ---------------------------------------------------------------------------

fn self_influence_leads_on_uniform_noise() -> Outcome {
    let start = Instant::now();
    let config = uniform_benchmark();
    let table = ratio_sweep(&config, &[0.1], &[0, 1, 2, 3, 4], |_| Ok(())).unwrap();
    let mean = |s| table.mean_f1(s, 0.1).unwrap();
    let si = mean(Signal::Si);
    let others: Vec<(Signal, f64)> = [Signal::Mi, Signal::Aai, Signal::GdClass]
        .into_iter()
        .map(|s| (s, mean(s)))
        .collect();
    let pass = si >= 0.8 && others.iter().all(|(_, f)| si >= *f) && start.elapsed() < Duration::from_secs(600);
    let listed: Vec<String> = others.iter().map(|(s, f)| format!("{s} {f:.3}")).collect();
    outcome(
        pass,
        format!("mean F1 at 10% noise: SI {si:.3}, {}", listed.join(", ")),
    )
}

fn self_influence_improves_with_ratio() -> Outcome {
    let config = uniform_benchmark();
    let table = ratio_sweep(&config, &[0.01, 0.3], &[0, 1, 2, 3, 4], |_| Ok(())).unwrap();
    let low = table.mean_f1(Signal::Si, 0.01).unwrap();
    let high = table.mean_f1(Signal::Si, 0.3).unwrap();
    let per_seed = |ratio: f64| -> Vec<String> {
        table
            .rows
            .iter()
            .filter(|r| r.signal == Signal::Si && r.ratio == ratio && r.epoch_scope == Scope::Cumulative)
            .map(|r| format!("{:.4}", r.f1))
            .collect()
    };
    outcome(
        high >= low,
        format!(
            "mean SI F1 at 0.30 = {high:.5} [{}], at 0.01 = {low:.5} [{}]",
            per_seed(0.3).join(" "),
            per_seed(0.01).join(" ")
        ),
    )
}

// ---------------------------------------------------------------------------

fn near_ca_config(seed: u64) -> ExperimentConfig {
    let ratio = 0.1 / 2.1;
    ExperimentConfig::from_toml_str(&format!(
        "name = 'near-ca'\nseed = {seed}\nsignals = ['SI']\n\
         [data]\nsource = 'blobs'\nn = 600\ndims = 2\nclasses = 3\nseparation = 1.0\n\
         [model]\narchitecture = 'logistic'\nlearning_rate = 0.1\nepochs = 10\nbatch_size = 16\n\
         [[glitches]]\ntype = 'near_ca'\nepsilon = {ratio}\nsource_class = 0\n"
    ))
    .unwrap()
}

fn best_epoch_beats_cumulative_on_near_ca() -> Outcome {
    let (mut ge, mut strict) = (0, 0);
    let mut listed = Vec::new();
    for seed in 0..5 {
        let e = run_experiment(&near_ca_config(seed)).unwrap();
        let det = per_epoch_detection(&e.tensor, &e.errors, Signal::Si, e.train.labels(), e.split.validation.labels())
            .unwrap();
        let (best, cumulative) = (det.max_epoch_f1(), det.cumulative.f1);
        ge += usize::from(best >= cumulative);
        strict += usize::from(best > cumulative);
        listed.push(format!(
            "seed {seed}: max {best:.3} (epoch {}) vs cumulative {cumulative:.3}, epoch 0 {:.3}",
            det.best_epoch(),
            det.per_epoch[0].f1
        ));
    }
    outcome(
        ge == 5,
        format!("max >= cumulative on {ge}/5, strictly on {strict}/5; {}", listed.join("; ")),
    )
}

fn accuracy_on_clustered_anomalies() -> Outcome {
    let mut near = Vec::new();
    let mut far = Vec::new();
    let far_base = ExperimentConfig::load(&configs_dir().join("far_ca.toml")).unwrap();
    for seed in 0..5 {
        let e = run_experiment(&near_ca_config(seed)).unwrap();
        near.push(evaluate_accuracy(&e.trail, &e.train, Some(&e.errors.glitched_ids())).unwrap());
        let config = ExperimentConfig {
            seed,
            ..far_base.clone()
        };
        let e = run_experiment(&config).unwrap();
        far.push(evaluate_accuracy(&e.trail, &e.train, Some(&e.errors.glitched_ids())).unwrap());
    }
    let near_ok = near.iter().filter(|a| **a <= 0.2).count();
    let far_ok = far.iter().filter(|a| **a >= 0.9).count();
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        near_ok >= 3 && far_ok >= 3,
        format!(
            "near_ca accuracy <= 0.2 on {near_ok}/5 [{}], far_ca accuracy >= 0.9 on {far_ok}/5 [{}]",
            fmt(&near),
            fmt(&far)
        ),
    )
}

// ---------------------------------------------------------------------------

fn random_ranking_f1_matches_base_rate() -> Outcome {
    let (n, k, shuffles) = (1000u64, 100u64, 1000);
    let truth = ErrorTable::new(
        (0..n)
            .map(|id| {
                if id < k {
                    ErrorEntry {
                        sample_id: id,
                        glitch_type: GlitchType::UniformNoise,
                        original_label: Some(0),
                    }
                } else {
                    ErrorEntry::clean(id)
                }
            })
            .collect(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut ids: Vec<SampleId> = (0..n).collect();
    let mut total = 0.0;
    for _ in 0..shuffles {
        ids.shuffle(&mut rng);
        let scores: Vec<f64> = (0..n).rev().map(|s| s as f64).collect();
        let ranking = SignalRanking::new(Signal::Si, Scope::Cumulative, ids.clone(), scores).unwrap();
        total += f1_at_known_ratio(&ranking, &truth).unwrap().f1;
    }
    let mean = total / shuffles as f64;
    let expected = k as f64 / n as f64;
    outcome(
        (mean - expected).abs() <= 0.02,
        format!("mean F1 over {shuffles} shuffles = {mean:.4}, k/n = {expected}"),
    )
}

// ---------------------------------------------------------------------------

fn repeated_runs_are_byte_identical() -> Outcome {
    let config_path = configs_dir().join("minimal.toml");
    let config = ExperimentConfig::load(&config_path).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["lib-a", "lib-b"] {
        let out = dir.path().join(name);
        run_pipeline(&config, &out).unwrap();
        outputs.push(std::fs::read(out.join("results.csv")).unwrap());
    }
    for name in ["cli-a", "cli-b"] {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_infsig"))
            .arg("run")
            .arg("--config")
            .arg(&config_path)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(std::fs::read(out.join("results.csv")).unwrap());
    }
    let rows = read_results_csv(&dir.path().join("lib-a/results.csv")).unwrap().len();
    let identical = outputs.windows(2).all(|w| w[0] == w[1]);
    let distinct: HashSet<&Vec<u8>> = outputs.iter().collect();
    outcome(
        identical && rows > 0,
        format!(
            "4 runs (2 library, 2 CLI), {rows} result rows, {} distinct results.csv",
            distinct.len()
        ),
    )
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    ("gradient_matches_finite_differences", gradient_matches_finite_differences),
    ("tracin_algebra_holds_on_random_pipelines", tracin_algebra_holds_on_random_pipelines),
    ("loor_agreement_on_convex_instances", loor_agreement_on_convex_instances),
    ("cancellation_hides_glitch_from_mi_but_not_aai", cancellation_hides_glitch_from_mi_but_not_aai),
    ("self_influence_leads_on_uniform_noise", self_influence_leads_on_uniform_noise),
    ("self_influence_improves_with_ratio", self_influence_improves_with_ratio),
    ("best_epoch_beats_cumulative_on_near_ca", best_epoch_beats_cumulative_on_near_ca),
    ("accuracy_on_clustered_anomalies", accuracy_on_clustered_anomalies),
    ("random_ranking_f1_matches_base_rate", random_ranking_f1_matches_base_rate),
    ("repeated_runs_are_byte_identical", repeated_runs_are_byte_identical),
];

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let listing = std::env::args().any(|a| a == "--list");
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in CRITERIA {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        if listing {
            println!("{name}: test");
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            result.detail
        );
        failed += usize::from(!result.pass);
    }
    if !listing {
        println!("acceptance: {} passed, {failed} failed", ran - failed);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
