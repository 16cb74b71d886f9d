use infsig::data::{make_blobs, stratified_split, Dataset};
use infsig::eval::loor_oracle;
use infsig::influence::{epoch_influence, tracin, InfluenceMode};
use infsig::model::{train, Architecture, Checkpoint, CheckpointTrail, ModelConfig, Params, Shape};

fn one_feature_logistic(values: Vec<f64>) -> Params {
    Params {
        shape: Shape {
            architecture: Architecture::Logistic,
            input_dim: 1,
            hidden: 0,
            classes: 2,
        },
        values,
    }
}

fn single_checkpoint_trail(params: Params, ids: Vec<u64>, batch_of: Vec<u32>, lr: f64) -> CheckpointTrail {
    CheckpointTrail {
        train_ids: ids,
        checkpoints: vec![Checkpoint {
            epoch: 0,
            params: params.clone(),
            learning_rate: lr,
            batch_of,
        }],
        final_params: params,
        epoch_losses: vec![],
    }
}

fn points(xs: &[f64], labels: &[usize], first_id: u64) -> Dataset {
    let ids = (first_id..first_id + xs.len() as u64).collect();
    Dataset::new(xs.to_vec(), 1, labels.to_vec(), ids, 2).unwrap()
}

#[test]
fn hand_computed_entry_for_one_feature_logistic() {
    // weights (0.5, -0.5), zero bias: logits at x are (x/2, -x/2), so
    // p0(ln 3) = 3/4 and p0(-ln 3) = 1/4.
    // g_i = (-1/4, 1/4) (x) (ln 3, 1), g_j = (-3/4, 3/4) (x) (-ln 3, 1)
    // <g_j, g_i> = (3/16 + 3/16) * (1 - ln^2 3)
    let l3 = 3f64.ln();
    let params = one_feature_logistic(vec![0.5, -0.5, 0.0, 0.0]);
    let train_set = points(&[l3], &[0], 0);
    let probe = points(&[-l3], &[0], 10);
    let expected_dot = 0.375 * (1.0 - l3 * l3);

    let trail = single_checkpoint_trail(params.clone(), vec![0], vec![0], 0.1);
    let m = epoch_influence(&trail, &train_set, &probe, 0, InfluenceMode::Paper).unwrap();
    assert!((m.get(0, 0) - 0.1 * expected_dot).abs() < 1e-12);

    // a batch of two halves the paper-mode entry and leaves checkpoint mode alone
    let pair = points(&[l3, l3], &[0, 0], 0);
    let trail = single_checkpoint_trail(params, vec![0, 1], vec![0, 0], 0.1);
    let paper = epoch_influence(&trail, &pair, &probe, 0, InfluenceMode::Paper).unwrap();
    let checkpoint = epoch_influence(&trail, &pair, &probe, 0, InfluenceMode::Checkpoint).unwrap();
    assert!((paper.get(1, 0) - 0.05 * expected_dot).abs() < 1e-12);
    assert!((checkpoint.get(1, 0) - 0.1 * expected_dot).abs() < 1e-12);
}

#[test]
fn saturated_sample_has_a_zero_row() {
    // logit gap of 800 makes the softmax exactly one-hot for class 0
    let params = one_feature_logistic(vec![400.0, -400.0, 0.0, 0.0]);
    let train_set = points(&[1.0, -0.2], &[0, 1], 0);
    let probes = points(&[0.3, -0.7, 0.1], &[0, 1, 1], 10);
    let trail = single_checkpoint_trail(params, vec![0, 1], vec![0, 0], 0.5);
    let m = epoch_influence(&trail, &train_set, &probes, 0, InfluenceMode::Paper).unwrap();
    assert!(m.row(0).iter().all(|v| *v == 0.0));
    assert!(m.row(1).iter().any(|v| *v != 0.0));
}

fn trained(arch: Architecture, epochs: usize) -> (Dataset, Dataset, CheckpointTrail) {
    let data = make_blobs(90, 3, 3, 3.0, 5).unwrap().standardized();
    let split = stratified_split(&data, 0.7, 5).unwrap();
    let config = match arch {
        Architecture::Logistic => ModelConfig::logistic(0.2, epochs, 16, 1),
        Architecture::Mlp => ModelConfig::mlp(8, 0.1, epochs, 16, 1),
    };
    let trail = train(&split.train, &config).unwrap();
    (split.train, split.validation, trail)
}

#[test]
fn kernel_is_a_symmetric_gram_matrix_after_removing_row_weights() {
    for arch in [Architecture::Logistic, Architecture::Mlp] {
        let (train_set, _, trail) = trained(arch, 3);
        let n = train_set.len();
        for (t, cp) in trail.checkpoints.iter().enumerate() {
            let sizes = cp.batch_sizes();
            let m = epoch_influence(&trail, &train_set, &train_set, t, InfluenceMode::Paper).unwrap();
            let w = |i: usize| cp.learning_rate / sizes[cp.batch_of[i] as usize] as f64;
            for i in 0..n {
                for j in 0..i {
                    let a = m.get(i, j) / w(i);
                    let b = m.get(j, i) / w(j);
                    assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
                }
            }
        }
    }
}

#[test]
fn self_channel_is_the_kernel_diagonal() {
    let (train_set, validation, trail) = trained(Architecture::Mlp, 4);
    let tensor = tracin(&trail, &train_set, &validation, InfluenceMode::Paper).unwrap();
    for t in 0..trail.epochs() {
        let m = epoch_influence(&trail, &train_set, &train_set, t, InfluenceMode::Paper).unwrap();
        for i in 0..train_set.len() {
            assert_eq!(m.get(i, i), tensor.epoch_self(t)[i]);
            assert!(m.get(i, i) >= 0.0);
        }
    }
}

#[test]
fn single_epoch_cumulative_equals_its_slice() {
    let (train_set, validation, trail) = trained(Architecture::Logistic, 1);
    let tensor = tracin(&trail, &train_set, &validation, InfluenceMode::Checkpoint).unwrap();
    assert_eq!(tensor.cumulative, tensor.epoch_slice(0));
    assert_eq!(tensor.cumulative_self, tensor.epoch_self(0));
}

#[test]
fn learning_rate_scaling_scales_every_entry() {
    let (train_set, validation, trail) = trained(Architecture::Mlp, 3);
    let base = tracin(&trail, &train_set, &validation, InfluenceMode::Paper).unwrap();
    let scaled = tracin(&trail.with_scaled_learning_rates(2.0), &train_set, &validation, InfluenceMode::Paper).unwrap();
    for (a, b) in base.cumulative.iter().zip(&scaled.cumulative) {
        assert_eq!(2.0 * a, *b);
    }
}

#[test]
fn mismatched_ids_and_epochs_are_rejected() {
    let (train_set, validation, trail) = trained(Architecture::Logistic, 2);
    assert!(tracin(&trail, &validation, &validation, InfluenceMode::Paper).is_err());
    assert!(epoch_influence(&trail, &train_set, &validation, 2, InfluenceMode::Paper).is_err());
}

#[test]
fn influence_sign_agrees_with_leave_one_out_on_a_convex_instance() {
    let data = make_blobs(24, 2, 2, 2.0, 0).unwrap().standardized();
    let split = stratified_split(&data, 2.0 / 3.0, 0).unwrap();
    let config = ModelConfig::logistic(0.1, 30, 16, 0);
    let trail = train(&split.train, &config).unwrap();
    let tensor = tracin(&trail, &split.train, &split.validation, InfluenceMode::Paper).unwrap();
    let records = loor_oracle(&split.train, &split.validation, &config).unwrap();

    let m = split.validation.len();
    let mut magnitudes: Vec<f64> = tensor.cumulative.iter().map(|v| v.abs()).collect();
    magnitudes.sort_by(f64::total_cmp);
    let median = magnitudes[magnitudes.len() / 2];
    let (mut agree, mut total) = (0, 0);
    for (k, r) in records.iter().enumerate() {
        let inf = tensor.cumulative_at(k / m, k % m);
        if inf.abs() > median {
            total += 1;
            agree += usize::from(inf.signum() == r.loss_delta.signum());
        }
    }
    assert!(agree as f64 >= 0.8 * total as f64, "{agree}/{total}");
}
