//! Detection scoring, per-epoch analysis, glitch-ratio sweeps and the
//! leave-one-out retraining oracle.
//!
//! Detection follows the known-ratio protocol: with `k` glitched samples in
//! the error table, the top `k` of a ranking are flagged, so precision, recall
//! and F1 coincide and equal `|flagged ∩ glitched| / k`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::data::{Dataset, SampleId};
use crate::error::{Error, Result};
use crate::glitch::{ErrorTable, GlitchType};
use crate::influence::InfluenceTensor;
use crate::model::{train, Architecture, ModelConfig};
use crate::pipeline::{run_experiment, ExperimentConfig, ResultRow};
use crate::signals::{compute, Scope, Signal, SignalRanking};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub signal: Signal,
    /// `None` when the error table mixes several glitch types.
    pub glitch_type: Option<GlitchType>,
    pub glitch_ratio: f64,
    pub epoch_scope: Scope,
    pub f1: f64,
    pub flagged_ids: Vec<SampleId>,
    pub seed: Option<u64>,
}

fn check_same_ids(ranking: &SignalRanking, truth: &ErrorTable) -> Result<()> {
    let mut a: Vec<SampleId> = ranking.ids.clone();
    let mut b: Vec<SampleId> = truth.entries().iter().map(|e| e.sample_id).collect();
    a.sort_unstable();
    b.sort_unstable();
    if a != b {
        return Err(Error::IdMismatch(format!(
            "ranking covers {} samples, error table {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Flag the top-k of the ranking, `k` being the number of glitched samples.
pub fn f1_at_known_ratio(ranking: &SignalRanking, truth: &ErrorTable) -> Result<DetectionResult> {
    check_same_ids(ranking, truth)?;
    let glitched: HashSet<SampleId> = truth.glitched_ids().into_iter().collect();
    let k = glitched.len();
    if k == 0 {
        return Err(Error::invalid("the error table contains no glitched sample"));
    }
    let flagged: Vec<SampleId> = ranking.order[..k].to_vec();
    let hits = flagged.iter().filter(|id| glitched.contains(id)).count();
    Ok(DetectionResult {
        signal: ranking.signal,
        glitch_type: truth.dominant_type(),
        glitch_ratio: truth.ratio(),
        epoch_scope: ranking.scope,
        f1: hits as f64 / k as f64,
        flagged_ids: flagged,
        seed: None,
    })
}

/// Precision, recall and F1 when the top `fraction` of the ranking is flagged.
/// Exploratory only; the known-ratio protocol is [`f1_at_known_ratio`].
pub fn prf_at_fraction(ranking: &SignalRanking, truth: &ErrorTable, fraction: f64) -> Result<(f64, f64, f64)> {
    check_same_ids(ranking, truth)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("fraction must lie in (0, 1]"));
    }
    let glitched: HashSet<SampleId> = truth.glitched_ids().into_iter().collect();
    if glitched.is_empty() {
        return Err(Error::invalid("the error table contains no glitched sample"));
    }
    let take = ((fraction * ranking.order.len() as f64).ceil() as usize).max(1);
    let hits = ranking.order[..take].iter().filter(|id| glitched.contains(id)).count() as f64;
    let precision = hits / take as f64;
    let recall = hits / glitched.len() as f64;
    let f1 = if hits == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerEpochDetection {
    pub per_epoch: Vec<DetectionResult>,
    pub cumulative: DetectionResult,
}

impl PerEpochDetection {
    pub fn max_epoch_f1(&self) -> f64 {
        self.per_epoch.iter().map(|r| r.f1).fold(0.0, f64::max)
    }

    /// First epoch reaching the maximum F1.
    pub fn best_epoch(&self) -> usize {
        let best = self.max_epoch_f1();
        self.per_epoch.iter().position(|r| r.f1 == best).unwrap_or(0)
    }
}

/// Re-score the signal on every epoch slice and on the cumulative tensor.
pub fn per_epoch_detection(
    tensor: &InfluenceTensor,
    truth: &ErrorTable,
    signal: Signal,
    train_labels: &[usize],
    val_labels: &[usize],
) -> Result<PerEpochDetection> {
    let per_epoch = (0..tensor.epochs())
        .map(|t| {
            let r = compute(signal, tensor, train_labels, val_labels, Scope::Epoch(t))?;
            f1_at_known_ratio(&r, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    let r = compute(signal, tensor, train_labels, val_labels, Scope::Cumulative)?;
    Ok(PerEpochDetection {
        per_epoch,
        cumulative: f1_at_known_ratio(&r, truth)?,
    })
}

/// Mean F1 of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanCell {
    pub dataset: String,
    pub model: String,
    pub glitch_type: String,
    pub ratio: f64,
    pub signal: Signal,
    pub epoch_scope: Scope,
    pub mean_f1: f64,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<MeanCell>,
}

impl SweepTable {
    pub fn mean_f1(&self, signal: Signal, ratio: f64) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.signal == signal && c.ratio == ratio && c.epoch_scope == Scope::Cumulative)
            .map(|c| c.mean_f1)
    }

    /// Long-format plot data: `dataset, model, glitch_type, ratio, signal,
    /// epoch_scope, mean_f1, runs`.
    pub fn write_plot_csv(&self, path: &Path) -> Result<()> {
        write_cells_csv(&self.cells, path)
    }
}

pub(crate) fn write_cells_csv(cells: &[MeanCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "dataset",
        "model",
        "glitch_type",
        "ratio",
        "signal",
        "epoch_scope",
        "mean_f1",
        "runs",
    ])?;
    for c in cells {
        w.write_record([
            c.dataset.clone(),
            c.model.clone(),
            c.glitch_type.clone(),
            c.ratio.to_string(),
            c.signal.to_string(),
            c.epoch_scope.to_string(),
            c.mean_f1.to_string(),
            c.runs.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Average F1 over seeds for every (dataset, model, glitch, ratio, signal, scope).
pub fn mean_cells(rows: &[ResultRow]) -> Vec<MeanCell> {
    type Key = (String, String, String, u64, Signal, Scope);
    let mut groups: BTreeMap<Key, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let key = (
            r.dataset.clone(),
            r.model.clone(),
            r.glitch_type.clone(),
            r.ratio.to_bits(),
            r.signal,
            r.epoch_scope,
        );
        let g = groups.entry(key).or_insert((0.0, 0));
        g.0 += r.f1;
        g.1 += 1;
    }
    groups
        .into_iter()
        .map(|((dataset, model, glitch_type, ratio, signal, epoch_scope), (sum, runs))| MeanCell {
            dataset,
            model,
            glitch_type,
            ratio: f64::from_bits(ratio),
            signal,
            epoch_scope,
            mean_f1: sum / runs as f64,
            runs,
        })
        .collect()
}

/// Worker-pool size from `INFSIG_WORKERS`, defaulting to the core count.
pub fn worker_count() -> usize {
    std::env::var("INFSIG_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run the pipeline for every (ratio, seed) pair, overriding the ratio of
/// the configuration's single glitch. Experiments run on a bounded worker
/// pool; `on_rows` receives each experiment's rows in (ratio, seed) order as
/// soon as all earlier experiments have finished.
pub fn ratio_sweep(
    config: &ExperimentConfig,
    ratios: &[f64],
    seeds: &[u64],
    mut on_rows: impl FnMut(&[ResultRow]) -> Result<()> + Send,
) -> Result<SweepTable> {
    if config.glitches.len() != 1 {
        return Err(Error::invalid("a ratio sweep needs exactly one glitch specification"));
    }
    if ratios.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("a ratio sweep needs at least one ratio and one seed"));
    }
    let jobs: Vec<(f64, u64)> = ratios
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let mut cfgs = Vec::with_capacity(jobs.len());
    for &(ratio, seed) in &jobs {
        let mut c = config.clone();
        c.glitches[0].epsilon = ratio;
        c.seed = seed;
        c.validate()?;
        cfgs.push(c);
    }

    struct Sink<F> {
        done: BTreeMap<usize, Vec<ResultRow>>,
        next: usize,
        out: Vec<ResultRow>,
        on_rows: F,
        failed: Option<Error>,
    }
    let sink = Mutex::new(Sink {
        done: BTreeMap::new(),
        next: 0,
        out: Vec::new(),
        on_rows: &mut on_rows,
        failed: None,
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let results: Vec<Result<()>> = pool.install(|| {
        cfgs.par_iter()
            .enumerate()
            .map(|(idx, cfg)| {
                let rows = run_experiment(cfg)?.rows;
                let mut s = sink.lock().expect("sink poisoned");
                s.done.insert(idx, rows);
                loop {
                    let next = s.next;
                    let Some(rows) = s.done.remove(&next) else { break };
                    if s.failed.is_none() {
                        if let Err(e) = (s.on_rows)(&rows) {
                            s.failed = Some(e);
                        }
                    }
                    s.out.extend(rows);
                    s.next += 1;
                }
                Ok(())
            })
            .collect()
    });
    for r in results {
        r?;
    }
    let sink = sink.into_inner().expect("sink poisoned");
    if let Some(e) = sink.failed {
        return Err(e);
    }
    let cells = mean_cells(&sink.out);
    Ok(SweepTable {
        rows: sink.out,
        cells,
    })
}

/// Loss change on one probe when one training sample is left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoorRecord {
    pub removed_id: SampleId,
    pub probe_id: SampleId,
    /// Probe loss after retraining without the sample, minus the baseline loss.
    pub loss_delta: f64,
}

pub const LOOR_MAX_SAMPLES: usize = 64;

fn loor_check(train: &Dataset, config: &ModelConfig) -> Result<()> {
    if train.len() > LOOR_MAX_SAMPLES {
        return Err(Error::invalid(format!(
            "leave-one-out retraining is limited to {LOOR_MAX_SAMPLES} samples, got {}",
            train.len()
        )));
    }
    if train.len() < 2 {
        return Err(Error::invalid("leave-one-out retraining needs at least 2 samples"));
    }
    if config.architecture != Architecture::Logistic {
        return Err(Error::invalid("leave-one-out retraining requires the logistic model"));
    }
    if config.batch_size < train.len() {
        return Err(Error::invalid(
            "leave-one-out retraining requires full-batch training (batch_size >= n)",
        ));
    }
    Ok(())
}

/// Config used for a full-batch run on `n` samples.
pub fn full_batch(config: &ModelConfig, n: usize) -> ModelConfig {
    ModelConfig {
        batch_size: n,
        ..config.clone()
    }
}

/// Exact leave-one-out retraining: one baseline run plus one run per removed
/// sample, all with the same seed (hence the same initialisation). Probes may
/// be the training set itself, which yields the self-removal deltas.
pub fn loor_oracle(train_set: &Dataset, probes: &Dataset, config: &ModelConfig) -> Result<Vec<LoorRecord>> {
    loor_check(train_set, config)?;
    let n = train_set.len();
    let baseline = train(train_set, &full_batch(config, n))?.final_params;
    let base_loss: Vec<f64> = (0..probes.len())
        .map(|j| baseline.loss(probes.row(j), probes.label(j)))
        .collect();
    let mut records = Vec::with_capacity(n * probes.len());
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&r| r != i).collect();
        let reduced = train_set.select(&keep);
        let params = train(&reduced, &full_batch(config, n - 1))?.final_params;
        for j in 0..probes.len() {
            records.push(LoorRecord {
                removed_id: train_set.id(i),
                probe_id: probes.id(j),
                loss_delta: params.loss(probes.row(j), probes.label(j)) - base_loss[j],
            });
        }
    }
    Ok(records)
}

/// Average ranks (1-based), ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Spearman correlation between cumulative train-to-validation influence and
/// the matching LOOR deltas.
pub fn influence_loor_correlation(tensor: &InfluenceTensor, records: &[LoorRecord]) -> Result<f64> {
    let train_pos: std::collections::HashMap<SampleId, usize> =
        tensor.train_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let val_pos: std::collections::HashMap<SampleId, usize> =
        tensor.val_ids.iter().enumerate().map(|(j, &id)| (id, j)).collect();
    let mut inf = Vec::with_capacity(records.len());
    let mut loor = Vec::with_capacity(records.len());
    for r in records {
        let (Some(&i), Some(&j)) = (train_pos.get(&r.removed_id), val_pos.get(&r.probe_id)) else {
            return Err(Error::IdMismatch(format!(
                "record ({}, {}) not covered by the tensor",
                r.removed_id, r.probe_id
            )));
        };
        inf.push(tensor.cumulative_at(i, j));
        loor.push(r.loss_delta);
    }
    Ok(spearman(&inf, &loor))
}
