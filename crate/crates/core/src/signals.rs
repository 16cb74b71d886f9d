//! Influence signals: per-sample aggregations of an [`InfluenceTensor`].
//!
//! | signal   | score of training sample `i`                                   |
//! |----------|----------------------------------------------------------------|
//! | SI       | self influence `I(z_i -> z_i)`                                 |
//! | MI       | `sum_j I(z_i -> z_j)` over validation samples (signed)         |
//! | AAI      | `(1/m) sum_j |I(z_i -> z_j)|`                                  |
//! | GD-class | `min_c sum_{j : y_j = c} I(z_i -> z_j)` over validation classes |
//!
//! Every signal follows the same orientation: a higher score means a more
//! suspicious sample. Rankings sort by descending score and break ties by
//! ascending sample id.

use std::cmp::Ordering;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SampleId;
use crate::error::{Error, Result};
use crate::influence::InfluenceTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Signal {
    #[serde(rename = "SI")]
    Si,
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "AAI")]
    Aai,
    #[serde(rename = "GD-class")]
    GdClass,
}

impl Signal {
    pub const ALL: [Signal; 4] = [Signal::Si, Signal::Mi, Signal::Aai, Signal::GdClass];

    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Si => "SI",
            Signal::Mi => "MI",
            Signal::Aai => "AAI",
            Signal::GdClass => "GD-class",
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Signal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Signal::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown signal `{s}`")))
    }
}

/// Which part of the tensor a score is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    Cumulative,
    Epoch(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Cumulative => f.write_str("cumulative"),
            Scope::Epoch(t) => write!(f, "epoch_{t}"),
        }
    }
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cumulative" {
            return Ok(Scope::Cumulative);
        }
        s.strip_prefix("epoch_")
            .and_then(|t| t.parse().ok())
            .map(Scope::Epoch)
            .ok_or_else(|| Error::invalid(format!("unknown scope `{s}`")))
    }
}

/// How GD-class restricts validation samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdClassVariant {
    /// Minimum over validation classes of the class-restricted sums.
    #[default]
    MinOverClasses,
    /// Sum over validation samples sharing the training sample's label.
    SameClass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalRanking {
    pub signal: Signal,
    pub scope: Scope,
    pub ids: Vec<SampleId>,
    pub scores: Vec<f64>,
    /// Sample ids by descending score, ties by ascending id.
    pub order: Vec<SampleId>,
}

impl SignalRanking {
    pub fn new(signal: Signal, scope: Scope, ids: Vec<SampleId>, scores: Vec<f64>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::invalid("one score per sample required"));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{signal} score of sample {}", ids[i])));
        }
        let order = rank(&ids, &scores);
        Ok(Self {
            signal,
            scope,
            ids,
            scores,
            order,
        })
    }

    pub fn score_of(&self, id: SampleId) -> Option<f64> {
        self.ids.iter().position(|&x| x == id).map(|i| self.scores[i])
    }

    /// 1-based rank of every sample, aligned with `ids`.
    pub fn ranks(&self) -> Vec<usize> {
        let pos: std::collections::HashMap<SampleId, usize> =
            self.order.iter().enumerate().map(|(r, &id)| (id, r + 1)).collect();
        self.ids.iter().map(|id| pos[id]).collect()
    }
}

/// Sample ids sorted by descending score, ties broken by ascending id.
pub fn rank(ids: &[SampleId], scores: &[f64]) -> Vec<SampleId> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[a].cmp(&ids[b]),
        other => other,
    });
    idx.into_iter().map(|i| ids[i]).collect()
}

fn scope_slice(tensor: &InfluenceTensor, scope: Scope) -> Result<&[f64]> {
    match scope {
        Scope::Cumulative => Ok(&tensor.cumulative),
        Scope::Epoch(t) if t < tensor.epochs() => Ok(tensor.epoch_slice(t)),
        Scope::Epoch(t) => Err(Error::invalid(format!(
            "epoch {t} out of range 0..{}",
            tensor.epochs()
        ))),
    }
}

fn per_row(tensor: &InfluenceTensor, scope: Scope, f: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
    let m = tensor.n_val();
    if m == 0 {
        return Err(Error::invalid("the tensor has no validation columns"));
    }
    let slice = scope_slice(tensor, scope)?;
    Ok(slice.chunks_exact(m).map(f).collect())
}

pub fn self_influence(tensor: &InfluenceTensor, scope: Scope) -> Result<SignalRanking> {
    let n = tensor.n_train();
    let scores = match scope {
        Scope::Cumulative => tensor.cumulative_self.clone(),
        Scope::Epoch(t) if t < tensor.epochs() => tensor.epoch_self(t).to_vec(),
        Scope::Epoch(t) => {
            return Err(Error::invalid(format!("epoch {t} out of range 0..{}", tensor.epochs())))
        }
    };
    if scores.len() != n {
        return Err(Error::invalid("the tensor has no self-influence channel"));
    }
    SignalRanking::new(Signal::Si, scope, tensor.train_ids.clone(), scores)
}

pub fn marginal_influence(tensor: &InfluenceTensor, scope: Scope) -> Result<SignalRanking> {
    let scores = per_row(tensor, scope, |row| row.iter().sum())?;
    SignalRanking::new(Signal::Mi, scope, tensor.train_ids.clone(), scores)
}

pub fn average_absolute_influence(tensor: &InfluenceTensor, scope: Scope) -> Result<SignalRanking> {
    let m = tensor.n_val() as f64;
    let scores = per_row(tensor, scope, |row| row.iter().map(|v| v.abs()).sum::<f64>() / m)?;
    SignalRanking::new(Signal::Aai, scope, tensor.train_ids.clone(), scores)
}

pub fn gd_class(
    tensor: &InfluenceTensor,
    train_labels: &[usize],
    val_labels: &[usize],
    scope: Scope,
    variant: GdClassVariant,
) -> Result<SignalRanking> {
    if train_labels.len() != tensor.n_train() || val_labels.len() != tensor.n_val() {
        return Err(Error::IdMismatch(
            "label vectors are not aligned with the tensor".into(),
        ));
    }
    let classes = val_labels
        .iter()
        .chain(train_labels)
        .max()
        .map_or(0, |&c| c + 1);
    let mut present = vec![false; classes];
    for &c in val_labels {
        present[c] = true;
    }
    if !present.iter().any(|&p| p) {
        return Err(Error::invalid("no class is represented in the validation set"));
    }
    let m = tensor.n_val();
    let slice = scope_slice(tensor, scope)?;
    let scores = slice
        .chunks_exact(m)
        .zip(train_labels)
        .map(|(row, &yi)| {
            let mut partial = vec![0.0; classes];
            for (v, &c) in row.iter().zip(val_labels) {
                partial[c] += v;
            }
            match variant {
                GdClassVariant::MinOverClasses => partial
                    .iter()
                    .zip(&present)
                    .filter(|(_, &p)| p)
                    .map(|(v, _)| *v)
                    .fold(f64::INFINITY, f64::min),
                GdClassVariant::SameClass => partial[yi],
            }
        })
        .collect();
    SignalRanking::new(Signal::GdClass, scope, tensor.train_ids.clone(), scores)
}

/// Compute any signal with the default GD-class variant.
pub fn compute(
    signal: Signal,
    tensor: &InfluenceTensor,
    train_labels: &[usize],
    val_labels: &[usize],
    scope: Scope,
) -> Result<SignalRanking> {
    match signal {
        Signal::Si => self_influence(tensor, scope),
        Signal::Mi => marginal_influence(tensor, scope),
        Signal::Aai => average_absolute_influence(tensor, scope),
        Signal::GdClass => gd_class(
            tensor,
            train_labels,
            val_labels,
            scope,
            GdClassVariant::MinOverClasses,
        ),
    }
}

/// Write rankings as `sample_id, signal, epoch_scope, score, rank` rows.
pub fn write_rankings_csv(rankings: &[SignalRanking], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sample_id", "signal", "epoch_scope", "score", "rank"])?;
    for r in rankings {
        let ranks = r.ranks();
        for ((id, score), rank) in r.ids.iter().zip(&r.scores).zip(ranks) {
            w.write_record([
                id.to_string(),
                r.signal.to_string(),
                r.scope.to_string(),
                score.to_string(),
                rank.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read rankings written by [`write_rankings_csv`], one per (signal, scope)
/// in order of first appearance.
pub fn read_rankings_csv(path: &Path) -> Result<Vec<SignalRanking>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut groups: Vec<((Signal, Scope), Vec<SampleId>, Vec<f64>)> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |column: &str| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            message: "unparseable value".into(),
        };
        if rec.len() != 5 {
            return Err(bad("*"));
        }
        let id: SampleId = rec[0].parse().map_err(|_| bad("sample_id"))?;
        let signal: Signal = rec[1].parse().map_err(|_| bad("signal"))?;
        let scope: Scope = rec[2].parse().map_err(|_| bad("epoch_scope"))?;
        let score: f64 = rec[3].parse().map_err(|_| bad("score"))?;
        let key = (signal, scope);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => {
                g.1.push(id);
                g.2.push(score);
            }
            None => groups.push((key, vec![id], vec![score])),
        }
    }
    groups
        .into_iter()
        .map(|((signal, scope), ids, scores)| SignalRanking::new(signal, scope, ids, scores))
        .collect()
}
