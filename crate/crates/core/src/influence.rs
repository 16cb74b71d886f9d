//! Dynamic (TracIn) influence restricted to last-layer gradients.
//!
//! For a training sample `z_i` and a probe `z_j` the influence at epoch `t` is
//!
//! ```text
//! I_t(z_i -> z_j) = eta_t / |B_t(i)| * <g(z_j, theta_t), g(z_i, theta_t)>
//! ```
//!
//! where `theta_t` is the epoch-start checkpoint, `B_t(i)` the batch holding
//! `z_i` that epoch and `g` the flattened last-layer gradient. The cumulative
//! influence sums the epoch terms. [`InfluenceMode::Checkpoint`] drops the
//! `1 / |B_t(i)|` factor.
//!
//! Gradients are evaluated once per epoch at the epoch-start snapshot, not at
//! every minibatch step; this is the usual checkpoint approximation of the
//! per-step sum.
//!
//! Values are accumulated in 64-bit floats in a fixed index order, so tensors
//! are bit-reproducible.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleId};
use crate::error::{Error, Result};
use crate::model::{last_layer_gradient, Checkpoint, CheckpointTrail, LastLayerGradient, LeReader, LeWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMode {
    /// `eta_t / |B_t(i)|` weighting.
    #[default]
    Paper,
    /// `eta_t` weighting, no batch-size factor.
    Checkpoint,
}

impl InfluenceMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InfluenceMode::Paper => "paper",
            InfluenceMode::Checkpoint => "checkpoint",
        }
    }
}

impl fmt::Display for InfluenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InfluenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(InfluenceMode::Paper),
            "checkpoint" => Ok(InfluenceMode::Checkpoint),
            _ => Err(Error::invalid(format!("unknown influence mode `{s}`"))),
        }
    }
}

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Matrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Per-epoch and cumulative train-to-probe and self influence.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceTensor {
    pub mode: InfluenceMode,
    pub train_ids: Vec<SampleId>,
    pub val_ids: Vec<SampleId>,
    /// `T x n x m`, row-major.
    pub per_epoch: Vec<f64>,
    /// `T x n`.
    pub per_epoch_self: Vec<f64>,
    /// `n x m`.
    pub cumulative: Vec<f64>,
    /// `n`.
    pub cumulative_self: Vec<f64>,
}

impl InfluenceTensor {
    pub fn epochs(&self) -> usize {
        if self.train_ids.is_empty() {
            0
        } else {
            self.per_epoch_self.len() / self.train_ids.len()
        }
    }

    pub fn n_train(&self) -> usize {
        self.train_ids.len()
    }

    pub fn n_val(&self) -> usize {
        self.val_ids.len()
    }

    /// Train-to-validation slice of one epoch (`n x m`).
    pub fn epoch_slice(&self, t: usize) -> &[f64] {
        let nm = self.n_train() * self.n_val();
        &self.per_epoch[t * nm..(t + 1) * nm]
    }

    pub fn epoch_self(&self, t: usize) -> &[f64] {
        let n = self.n_train();
        &self.per_epoch_self[t * n..(t + 1) * n]
    }

    pub fn cumulative_at(&self, i: usize, j: usize) -> f64 {
        self.cumulative[i * self.n_val() + j]
    }

    /// Assemble a tensor from per-epoch slices (`T x n x m` and `T x n`,
    /// row-major); cumulative values are their sums.
    pub fn from_epochs(
        mode: InfluenceMode,
        train_ids: Vec<SampleId>,
        val_ids: Vec<SampleId>,
        per_epoch: Vec<f64>,
        per_epoch_self: Vec<f64>,
    ) -> Result<InfluenceTensor> {
        let (n, m) = (train_ids.len(), val_ids.len());
        if n == 0 || !per_epoch_self.len().is_multiple_of(n) {
            return Err(Error::invalid("self influence must hold T x n values"));
        }
        let epochs = per_epoch_self.len() / n;
        if epochs == 0 || per_epoch.len() != epochs * n * m {
            return Err(Error::invalid(format!(
                "expected {} train-to-validation values, got {}",
                epochs * n * m,
                per_epoch.len()
            )));
        }
        if let Some(v) = per_epoch.iter().chain(&per_epoch_self).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("influence value {v}")));
        }
        let mut cumulative = vec![0.0; n * m];
        let mut cumulative_self = vec![0.0; n];
        for t in 0..epochs {
            for (acc, v) in cumulative.iter_mut().zip(&per_epoch[t * n * m..(t + 1) * n * m]) {
                *acc += v;
            }
            for (acc, v) in cumulative_self.iter_mut().zip(&per_epoch_self[t * n..(t + 1) * n]) {
                *acc += v;
            }
        }
        Ok(InfluenceTensor {
            mode,
            train_ids,
            val_ids,
            per_epoch,
            per_epoch_self,
            cumulative,
            cumulative_self,
        })
    }

    /// Rebuild with every value multiplied by `c` (equivalent to scaling every
    /// recorded learning rate by `c`).
    pub fn scaled(&self, c: f64) -> InfluenceTensor {
        let s = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<_>>();
        InfluenceTensor {
            per_epoch: s(&self.per_epoch),
            per_epoch_self: s(&self.per_epoch_self),
            cumulative: s(&self.cumulative),
            cumulative_self: s(&self.cumulative_self),
            ..self.clone()
        }
    }
}

fn gradients_at(cp: &Checkpoint, data: &Dataset) -> Result<Vec<LastLayerGradient>> {
    (0..data.len())
        .map(|i| last_layer_gradient(&cp.params, data.row(i), data.label(i)))
        .collect()
}

/// Weight of every training row at one checkpoint.
fn row_weights(cp: &Checkpoint, mode: InfluenceMode) -> Vec<f64> {
    match mode {
        InfluenceMode::Checkpoint => vec![cp.learning_rate; cp.batch_of.len()],
        InfluenceMode::Paper => {
            let sizes = cp.batch_sizes();
            cp.batch_of
                .iter()
                .map(|&b| cp.learning_rate / sizes[b as usize] as f64)
                .collect()
        }
    }
}

fn check_probes(train: &Dataset, probes: &Dataset) -> Result<()> {
    if probes.ids() == train.ids() {
        return Ok(());
    }
    let t: HashSet<SampleId> = train.ids().iter().copied().collect();
    if let Some(id) = probes.ids().iter().find(|id| t.contains(id)) {
        return Err(Error::IdMismatch(format!(
            "probe {id} is also a training sample; pass the training set itself for self influence"
        )));
    }
    if probes.dims() != train.dims() {
        return Err(Error::invalid("probe and training dimensionality differ"));
    }
    Ok(())
}

/// Influence of every training sample on every probe at one epoch (`n x m`).
pub fn epoch_influence(
    trail: &CheckpointTrail,
    train: &Dataset,
    probes: &Dataset,
    epoch: usize,
    mode: InfluenceMode,
) -> Result<Matrix> {
    trail.check_ids(train)?;
    check_probes(train, probes)?;
    let cp = trail.checkpoints.get(epoch).ok_or_else(|| {
        Error::invalid(format!("epoch {epoch} out of range 0..{}", trail.epochs()))
    })?;
    let train_grads = gradients_at(cp, train)?;
    let probe_grads = gradients_at(cp, probes)?;
    let weights = row_weights(cp, mode);
    let (n, m) = (train.len(), probes.len());
    let mut values = Vec::with_capacity(n * m);
    for (gi, w) in train_grads.iter().zip(&weights) {
        for gj in &probe_grads {
            values.push(w * gj.dot(gi));
        }
    }
    Ok(Matrix { rows: n, cols: m, values })
}

/// Full TracIn tensor: train-to-validation influence and self influence for
/// every epoch, plus their sums over epochs.
pub fn tracin(
    trail: &CheckpointTrail,
    train: &Dataset,
    validation: &Dataset,
    mode: InfluenceMode,
) -> Result<InfluenceTensor> {
    trail.check_ids(train)?;
    check_probes(train, validation)?;
    let (n, m, epochs) = (train.len(), validation.len(), trail.epochs());
    let mut per_epoch = Vec::with_capacity(epochs * n * m);
    let mut per_epoch_self = Vec::with_capacity(epochs * n);
    for cp in &trail.checkpoints {
        // validation gradients are cached per epoch; training rows stream past them
        let val_grads = gradients_at(cp, validation)?;
        let weights = row_weights(cp, mode);
        for i in 0..n {
            let gi = last_layer_gradient(&cp.params, train.row(i), train.label(i))?;
            let w = weights[i];
            per_epoch.extend(val_grads.iter().map(|gj| w * gj.dot(&gi)));
            per_epoch_self.push(w * gi.norm_squared());
        }
    }
    InfluenceTensor::from_epochs(
        mode,
        train.ids().to_vec(),
        validation.ids().to_vec(),
        per_epoch,
        per_epoch_self,
    )
}

// Binary tensor container, little-endian:
//
//   magic      8 bytes "INFTENSR"
//   version    u32     1
//   mode       u8      0 = paper, 1 = checkpoint
//   epochs     u32     T
//   n          u64
//   m          u64
//   train ids  n x u64
//   val ids    m x u64
//   per_epoch  T*n*m x f64 (epoch, train row, validation column)
//   self       T*n x f64
//   cumulative n*m x f64
//   cum. self  n x f64
const TENSOR_MAGIC: &[u8; 8] = b"INFTENSR";
const TENSOR_VERSION: u32 = 1;

impl InfluenceTensor {
    pub fn write_to(&self, w: impl Write) -> std::io::Result<()> {
        let mut w = LeWriter(std::io::BufWriter::new(w));
        w.bytes(TENSOR_MAGIC)?;
        w.u32(TENSOR_VERSION)?;
        w.u8(match self.mode {
            InfluenceMode::Paper => 0,
            InfluenceMode::Checkpoint => 1,
        })?;
        w.u32(self.epochs() as u32)?;
        w.u64(self.n_train() as u64)?;
        w.u64(self.n_val() as u64)?;
        for &id in self.train_ids.iter().chain(&self.val_ids) {
            w.u64(id)?;
        }
        w.f64s(&self.per_epoch)?;
        w.f64s(&self.per_epoch_self)?;
        w.f64s(&self.cumulative)?;
        w.f64s(&self.cumulative_self)?;
        w.0.flush()
    }

    pub fn read_from(r: impl Read) -> Result<InfluenceTensor> {
        let bad = |message: String| Error::Format {
            what: "influence tensor",
            message,
        };
        let io = |e: std::io::Error| bad(format!("truncated or unreadable: {e}"));
        let mut r = LeReader(std::io::BufReader::new(r));
        if &r.array::<8>().map_err(io)? != TENSOR_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32().map_err(io)?;
        if version != TENSOR_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let mode = match r.u8().map_err(io)? {
            0 => InfluenceMode::Paper,
            1 => InfluenceMode::Checkpoint,
            other => return Err(bad(format!("unknown mode tag {other}"))),
        };
        let t = r.u32().map_err(io)? as usize;
        let n = r.u64().map_err(io)? as usize;
        let m = r.u64().map_err(io)? as usize;
        let mut ids = |count: usize| (0..count).map(|_| r.u64()).collect::<std::io::Result<Vec<_>>>();
        let train_ids = ids(n).map_err(io)?;
        let val_ids = ids(m).map_err(io)?;
        Ok(InfluenceTensor {
            mode,
            train_ids,
            val_ids,
            per_epoch: r.f64s(t * n * m).map_err(io)?,
            per_epoch_self: r.f64s(t * n).map_err(io)?,
            cumulative: r.f64s(n * m).map_err(io)?,
            cumulative_self: r.f64s(n).map_err(io)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(f).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<InfluenceTensor> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }

    /// Inspection export: `sample_id, self_influence, v<id>...` with one row per
    /// training sample holding the cumulative values.
    pub fn write_cumulative_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["sample_id".to_string(), "self_influence".to_string()];
        header.extend(self.val_ids.iter().map(|id| format!("v{id}")));
        w.write_record(&header)?;
        let m = self.n_val();
        for (i, id) in self.train_ids.iter().enumerate() {
            let mut rec = vec![id.to_string(), self.cumulative_self[i].to_string()];
            rec.extend(self.cumulative[i * m..(i + 1) * m].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::data::stratified_split;
    use crate::model::{train, ModelConfig};

    fn setup() -> (CheckpointTrail, Dataset, Dataset) {
        let data = make_blobs(60, 3, 3, 3.0, 4).unwrap();
        let split = stratified_split(&data, 0.75, 4).unwrap();
        let trail = train(&split.train, &ModelConfig::mlp(6, 0.2, 3, 10, 4)).unwrap();
        (trail, split.train, split.validation)
    }

    #[test]
    fn cumulative_is_epoch_sum() {
        let (trail, tr, va) = setup();
        let t = tracin(&trail, &tr, &va, InfluenceMode::Paper).unwrap();
        let (n, m) = (tr.len(), va.len());
        for i in 0..n {
            for j in 0..m {
                let s: f64 = (0..3).map(|e| t.epoch_slice(e)[i * m + j]).sum();
                assert!((s - t.cumulative_at(i, j)).abs() <= 1e-9 * s.abs().max(1e-300));
            }
            assert!(t.cumulative_self[i] >= 0.0);
        }
    }

    #[test]
    fn epoch_influence_matches_tensor_slice() {
        let (trail, tr, va) = setup();
        let t = tracin(&trail, &tr, &va, InfluenceMode::Checkpoint).unwrap();
        let e1 = epoch_influence(&trail, &tr, &va, 1, InfluenceMode::Checkpoint).unwrap();
        assert_eq!(e1.values.as_slice(), t.epoch_slice(1));
        assert!(epoch_influence(&trail, &tr, &va, 3, InfluenceMode::Paper).is_err());
    }

    #[test]
    fn self_kernel_is_weighted_gram() {
        let (trail, tr, _) = setup();
        let e = epoch_influence(&trail, &tr, &tr, 2, InfluenceMode::Paper).unwrap();
        let w = row_weights(&trail.checkpoints[2], InfluenceMode::Paper);
        let n = tr.len();
        for i in 0..n {
            for j in 0..n {
                let a = e.get(i, j) / w[i];
                let b = e.get(j, i) / w[j];
                assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn overlapping_probes_are_rejected() {
        let (trail, tr, _) = setup();
        let partial = tr.select(&[0, 1, 2]);
        assert!(matches!(
            tracin(&trail, &tr, &partial, InfluenceMode::Paper),
            Err(Error::IdMismatch(_))
        ));
        assert!(tracin(&trail, &partial, &partial, InfluenceMode::Paper).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let (trail, tr, va) = setup();
        let t = tracin(&trail, &tr, &va, InfluenceMode::Paper).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(InfluenceTensor::read_from(buf.as_slice()).unwrap(), t);
        assert!(InfluenceTensor::read_from(&buf[..20]).is_err());
    }
}
