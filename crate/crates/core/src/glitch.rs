//! Glitch injection.
//!
//! Five contamination mechanisms, each a pure function of its inputs and seed
//! that returns the contaminated training set together with an [`ErrorTable`]
//! holding one ground-truth entry per resulting sample:
//!
//! * uniform class noise: each label flips with probability `epsilon` to one of
//!   the other `k - 1` classes chosen uniformly, so `P(y' = j | y = i) =
//!   epsilon / (k - 1)` for `j != i`;
//! * class-dependent noise: only samples of one source class may flip, and
//!   they always flip to one target class;
//! * near-clustered anomalies: one class is downsampled until it is a rare
//!   minority, and its survivors are the anomalies;
//! * far-clustered anomalies: samples of one class of a foreign dataset are
//!   merged into the training set under a single random host label;
//! * outliers: selected rows get a brightness offset or a stripe block.
//!
//! Magnitudes are in feature units (standard deviations for standardized or
//! blob data).
//!
//! Injectors can be chained with [`ErrorTable::chain`]: a sample glitched by an
//! earlier injector stays glitched, a later glitch type overrides an earlier
//! one, and the earliest known original label is kept.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleId};
use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlitchType {
    UniformNoise,
    ClassDependentNoise,
    NearCa,
    FarCa,
    Outlier,
    Clean,
}

impl GlitchType {
    pub const ALL: [GlitchType; 6] = [
        GlitchType::UniformNoise,
        GlitchType::ClassDependentNoise,
        GlitchType::NearCa,
        GlitchType::FarCa,
        GlitchType::Outlier,
        GlitchType::Clean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GlitchType::UniformNoise => "uniform_noise",
            GlitchType::ClassDependentNoise => "class_dependent_noise",
            GlitchType::NearCa => "near_ca",
            GlitchType::FarCa => "far_ca",
            GlitchType::Outlier => "outlier",
            GlitchType::Clean => "clean",
        }
    }

    pub fn is_label_flip(self) -> bool {
        matches!(self, GlitchType::UniformNoise | GlitchType::ClassDependentNoise)
    }
}

impl fmt::Display for GlitchType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GlitchType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GlitchType::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown glitch type `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Brightness,
    Stripe,
}

impl FromStr for Corruption {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brightness" => Ok(Corruption::Brightness),
            "stripe" => Ok(Corruption::Stripe),
            _ => Err(Error::invalid(format!("unknown corruption `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorEntry {
    pub sample_id: SampleId,
    pub glitch_type: GlitchType,
    /// Label before a flip; `None` for every other glitch type.
    pub original_label: Option<usize>,
}

impl ErrorEntry {
    pub fn clean(sample_id: SampleId) -> Self {
        Self {
            sample_id,
            glitch_type: GlitchType::Clean,
            original_label: None,
        }
    }

    pub fn is_glitched(&self) -> bool {
        self.glitch_type != GlitchType::Clean
    }
}

/// Ground truth for one contaminated training set, in dataset row order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ErrorTable {
    entries: Vec<ErrorEntry>,
}

impl ErrorTable {
    pub fn new(entries: Vec<ErrorEntry>) -> Self {
        Self { entries }
    }

    pub fn all_clean(data: &Dataset) -> Self {
        Self::new(data.ids().iter().map(|&id| ErrorEntry::clean(id)).collect())
    }

    pub fn entries(&self) -> &[ErrorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn glitched_ids(&self) -> Vec<SampleId> {
        self.entries
            .iter()
            .filter(|e| e.is_glitched())
            .map(|e| e.sample_id)
            .collect()
    }

    pub fn glitched_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_glitched()).count()
    }

    pub fn ratio(&self) -> f64 {
        if self.entries.is_empty() {
            0.0
        } else {
            self.glitched_count() as f64 / self.entries.len() as f64
        }
    }

    /// The glitch type shared by every glitched entry, if there is exactly one.
    pub fn dominant_type(&self) -> Option<GlitchType> {
        let mut kinds = self.entries.iter().filter(|e| e.is_glitched()).map(|e| e.glitch_type);
        let first = kinds.next()?;
        kinds.all(|k| k == first).then_some(first)
    }

    pub fn get(&self, id: SampleId) -> Option<&ErrorEntry> {
        self.entries.iter().find(|e| e.sample_id == id)
    }

    /// Check the table against the dataset it annotates.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.entries.len() != data.len() {
            return Err(Error::IdMismatch(format!(
                "error table has {} entries for {} samples",
                self.entries.len(),
                data.len()
            )));
        }
        let index = data.index_map();
        for e in &self.entries {
            let Some(&row) = index.get(&e.sample_id) else {
                return Err(Error::IdMismatch(format!(
                    "error table references unknown sample {}",
                    e.sample_id
                )));
            };
            if e.glitch_type.is_label_flip() && e.original_label == Some(data.label(row)) {
                return Err(Error::invalid(format!(
                    "sample {} is marked as flipped but keeps its original label",
                    e.sample_id
                )));
            }
        }
        Ok(())
    }

    /// Combine with the table of an injector applied after this one. `later`
    /// must cover the dataset produced by that injector.
    pub fn chain(&self, later: &ErrorTable) -> ErrorTable {
        let earlier: HashMap<SampleId, &ErrorEntry> =
            self.entries.iter().map(|e| (e.sample_id, e)).collect();
        let entries = later
            .entries
            .iter()
            .map(|e| match earlier.get(&e.sample_id) {
                Some(prev) if !e.is_glitched() => **prev,
                Some(prev) if prev.is_glitched() => ErrorEntry {
                    original_label: prev.original_label.or(e.original_label),
                    ..*e
                },
                _ => *e,
            })
            .collect();
        ErrorTable { entries }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "is_glitched", "glitch_type", "original_label"])?;
        for e in &self.entries {
            w.write_record([
                e.sample_id.to_string(),
                u8::from(e.is_glitched()).to_string(),
                e.glitch_type.to_string(),
                e.original_label.map(|l| l.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<ErrorTable> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::Reader::from_reader(file);
        let mut entries = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |column: &str, message: String| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: column.to_string(),
                message,
            };
            if rec.len() != 4 {
                return Err(bad("*", format!("expected 4 fields, got {}", rec.len())));
            }
            let sample_id = rec[0]
                .parse()
                .map_err(|_| bad("sample_id", format!("`{}` is not an id", &rec[0])))?;
            let glitch_type: GlitchType = rec[2].parse().map_err(|e: Error| bad("glitch_type", e.to_string()))?;
            let flagged = match &rec[1] {
                "0" => false,
                "1" => true,
                other => return Err(bad("is_glitched", format!("`{other}` is not 0/1"))),
            };
            if flagged != (glitch_type != GlitchType::Clean) {
                return Err(bad("is_glitched", "flag disagrees with glitch_type".into()));
            }
            let original_label = if rec[3].is_empty() {
                None
            } else {
                Some(
                    rec[3]
                        .parse()
                        .map_err(|_| bad("original_label", format!("`{}` is not a class", &rec[3])))?,
                )
            };
            entries.push(ErrorEntry {
                sample_id,
                glitch_type,
                original_label,
            });
        }
        Ok(ErrorTable { entries })
    }
}

/// Declarative description of one injector call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlitchSpec {
    #[serde(rename = "type")]
    pub glitch_type: GlitchType,
    /// Flip probability for label noise, target ratio for the other injectors.
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<Corruption>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GlitchSpec {
    pub fn new(glitch_type: GlitchType, epsilon: f64) -> Self {
        Self {
            glitch_type,
            epsilon,
            source_class: None,
            target_class: None,
            corruption: None,
            magnitude: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if let (Some(s), Some(t)) = (self.source_class, self.target_class) {
            if s == t {
                return Err(Error::invalid("source and target class must differ"));
            }
        }
        match self.glitch_type {
            GlitchType::Clean => Err(Error::invalid("`clean` is not an injector")),
            GlitchType::Outlier => {
                if self.corruption.is_none() {
                    return Err(Error::invalid("outlier injection needs a corruption"));
                }
                match self.magnitude {
                    Some(m) if m > 0.0 && m.is_finite() => Ok(()),
                    _ => Err(Error::invalid("outlier injection needs a positive magnitude")),
                }
            }
            _ => Ok(()),
        }
    }

    /// Run the injector. `foreign` supplies the far-cluster pool for `far_ca`,
    /// whose class is taken from `source_class` (default 0).
    pub fn apply(
        &self,
        train: &Dataset,
        foreign: Option<&Dataset>,
        seed: u64,
    ) -> Result<(Dataset, ErrorTable)> {
        self.apply_with_first_id(train, foreign, None, seed)
    }

    /// As [`GlitchSpec::apply`], with ids of merged far_ca samples starting
    /// at `first_id` or above (used to keep them clear of validation ids).
    pub fn apply_with_first_id(
        &self,
        train: &Dataset,
        foreign: Option<&Dataset>,
        first_id: Option<SampleId>,
        seed: u64,
    ) -> Result<(Dataset, ErrorTable)> {
        self.validate()?;
        let seed = self.seed.unwrap_or(seed);
        match self.glitch_type {
            GlitchType::UniformNoise => inject_uniform_noise(train, self.epsilon, seed),
            GlitchType::ClassDependentNoise => inject_class_dependent_noise(
                train,
                self.epsilon,
                self.source_class,
                self.target_class,
                seed,
            ),
            GlitchType::NearCa => inject_near_ca(train, self.epsilon, self.source_class, seed),
            GlitchType::FarCa => {
                let foreign = foreign
                    .ok_or_else(|| Error::invalid("far_ca injection needs a foreign dataset"))?;
                inject_far_ca(train, foreign, self.source_class.unwrap_or(0), self.epsilon, first_id, seed)
            }
            GlitchType::Outlier => inject_outliers(
                train,
                self.epsilon,
                self.corruption.unwrap_or(Corruption::Brightness),
                self.magnitude.unwrap_or(0.0),
                seed,
            ),
            GlitchType::Clean => unreachable!("rejected by validate"),
        }
    }
}

fn check_probability(epsilon: f64) -> Result<()> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    Ok(())
}

fn flips_to_table(train: &Dataset, flips: &[(usize, usize)], kind: GlitchType) -> ErrorTable {
    let mut entries: Vec<ErrorEntry> = train.ids().iter().map(|&id| ErrorEntry::clean(id)).collect();
    for &(row, original) in flips {
        entries[row] = ErrorEntry {
            sample_id: train.id(row),
            glitch_type: kind,
            original_label: Some(original),
        };
    }
    ErrorTable::new(entries)
}

/// Flip every label independently with probability `epsilon` to a uniformly
/// chosen different class.
pub fn inject_uniform_noise(
    train: &Dataset,
    epsilon: f64,
    seed: u64,
) -> Result<(Dataset, ErrorTable)> {
    check_probability(epsilon)?;
    let k = train.class_count();
    let mut rng = seeded(seed, Stream::UniformNoise);
    let mut labels = train.labels().to_vec();
    let mut flips = Vec::new();
    for (row, label) in labels.iter_mut().enumerate() {
        if rng.random::<f64>() < epsilon {
            let r = rng.random_range(0..k - 1);
            let original = *label;
            *label = if r >= original { r + 1 } else { r };
            flips.push((row, original));
        }
    }
    let table = flips_to_table(train, &flips, GlitchType::UniformNoise);
    Ok((train.with_labels(labels)?, table))
}

/// Flip samples of `source_class` to `target_class` with probability
/// `epsilon`. Missing classes are drawn uniformly at random (distinct).
pub fn inject_class_dependent_noise(
    train: &Dataset,
    epsilon: f64,
    source_class: Option<usize>,
    target_class: Option<usize>,
    seed: u64,
) -> Result<(Dataset, ErrorTable)> {
    check_probability(epsilon)?;
    let k = train.class_count();
    let mut rng = seeded(seed, Stream::ClassNoise);
    let source = match source_class {
        Some(s) => s,
        None => {
            // keep clear of a fixed target
            let pool: Vec<usize> = (0..k).filter(|&c| Some(c) != target_class).collect();
            *pool.choose(&mut rng).expect("k >= 2")
        }
    };
    let target = match target_class {
        Some(t) => t,
        None => {
            let r = rng.random_range(0..k - 1);
            if r >= source {
                r + 1
            } else {
                r
            }
        }
    };
    if source >= k || target >= k {
        return Err(Error::invalid(format!(
            "classes {source} -> {target} outside 0..{k}"
        )));
    }
    if source == target {
        return Err(Error::invalid("source and target class must differ"));
    }
    if train.class_sizes()[source] == 0 {
        return Err(Error::invalid(format!("source class {source} is empty")));
    }
    let mut labels = train.labels().to_vec();
    let mut flips = Vec::new();
    for (row, label) in labels.iter_mut().enumerate() {
        if *label != source {
            continue;
        }
        if rng.random::<f64>() < epsilon {
            *label = target;
            flips.push((row, source));
        }
    }
    let table = flips_to_table(train, &flips, GlitchType::ClassDependentNoise);
    Ok((train.with_labels(labels)?, table))
}

/// Number of victim samples `x` that makes `x / (rest + x)` closest to `ratio`.
pub fn near_ca_retained_count(rest: usize, ratio: f64) -> usize {
    (ratio * rest as f64 / (1.0 - ratio)).round() as usize
}

/// Downsample one class until its survivors make up `target_ratio` of the
/// resulting training set. Survivors are marked `near_ca`.
pub fn inject_near_ca(
    train: &Dataset,
    target_ratio: f64,
    victim_class: Option<usize>,
    seed: u64,
) -> Result<(Dataset, ErrorTable)> {
    if !(target_ratio > 0.0 && target_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "near_ca ratio must lie in (0, 1), got {target_ratio}"
        )));
    }
    let k = train.class_count();
    let mut rng = seeded(seed, Stream::NearCa);
    let victim = victim_class.unwrap_or_else(|| rng.random_range(0..k));
    if victim >= k {
        return Err(Error::invalid(format!("victim class {victim} outside 0..{k}")));
    }
    let mut members = train.class_indices().swap_remove(victim);
    let rest = train.len() - members.len();
    let keep = near_ca_retained_count(rest, target_ratio);
    if keep == 0 {
        return Err(Error::invalid(format!(
            "ratio {target_ratio} retains no sample of class {victim}"
        )));
    }
    if keep >= members.len() {
        return Err(Error::invalid(format!(
            "class {victim} ({} samples) is already at or below ratio {target_ratio}",
            members.len()
        )));
    }
    members.shuffle(&mut rng);
    let mut retained_victims = members[..keep].to_vec();
    retained_victims.sort_unstable();
    let retained: std::collections::HashSet<usize> = retained_victims.iter().copied().collect();
    let rows: Vec<usize> = (0..train.len())
        .filter(|&i| train.label(i) != victim || retained.contains(&i))
        .collect();
    let out = train.select(&rows);
    let entries = rows
        .iter()
        .map(|&i| {
            if retained.contains(&i) {
                ErrorEntry {
                    sample_id: train.id(i),
                    glitch_type: GlitchType::NearCa,
                    original_label: None,
                }
            } else {
                ErrorEntry::clean(train.id(i))
            }
        })
        .collect();
    Ok((out, ErrorTable::new(entries)))
}

/// Number of foreign samples `x` that makes `x / (n + x)` closest to `ratio`.
pub fn far_ca_injected_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64 / (1.0 - ratio)).round() as usize
}

/// Merge samples of `foreign_class` from `foreign` into `train` so that they
/// make up `ratio` of the result. All merged samples share one label drawn
/// uniformly from the host classes and receive fresh ids, counting up from
/// `first_id` or from one past the largest training id, whichever is larger.
pub fn inject_far_ca(
    train: &Dataset,
    foreign: &Dataset,
    foreign_class: usize,
    ratio: f64,
    first_id: Option<SampleId>,
    seed: u64,
) -> Result<(Dataset, ErrorTable)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("far_ca ratio must lie in (0, 1), got {ratio}")));
    }
    if foreign.dims() != train.dims() {
        return Err(Error::invalid(format!(
            "foreign data has {} features, training data has {}",
            foreign.dims(),
            train.dims()
        )));
    }
    let pool: Vec<usize> = (0..foreign.len())
        .filter(|&i| foreign.label(i) == foreign_class)
        .collect();
    if pool.is_empty() {
        return Err(Error::invalid(format!("foreign class {foreign_class} is empty")));
    }
    let count = far_ca_injected_count(train.len(), ratio);
    if count == 0 {
        return Err(Error::invalid(format!("ratio {ratio} injects no sample")));
    }
    if count > pool.len() {
        return Err(Error::invalid(format!(
            "need {count} foreign samples of class {foreign_class}, only {} available",
            pool.len()
        )));
    }
    let mut rng = seeded(seed, Stream::FarCa);
    let label = rng.random_range(0..train.class_count());
    let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|p| pool[p])
        .collect();
    picked.sort_unstable();
    let first_id = train.max_id().map_or(0, |m| m + 1).max(first_id.unwrap_or(0));
    let ids: Vec<SampleId> = (first_id..first_id + count as SampleId).collect();
    let mut features = Vec::with_capacity(count * train.dims());
    for &p in &picked {
        features.extend_from_slice(foreign.row(p));
    }
    let injected = Dataset::new(
        features,
        train.dims(),
        vec![label; count],
        ids.clone(),
        train.class_count(),
    )?;
    let out = train.concat(&injected)?;
    let mut entries: Vec<ErrorEntry> = train.ids().iter().map(|&id| ErrorEntry::clean(id)).collect();
    entries.extend(ids.into_iter().map(|sample_id| ErrorEntry {
        sample_id,
        glitch_type: GlitchType::FarCa,
        original_label: None,
    }));
    Ok((out, ErrorTable::new(entries)))
}

/// Width of the stripe block for `d` features.
pub fn stripe_width(d: usize) -> usize {
    ((d as f64) / 4.0).round() as usize
}

/// Corrupt `round(ratio * n)` uniformly chosen rows. `Brightness` adds
/// `magnitude` to every feature; `Stripe` sets one contiguous block of
/// `round(d / 4)` features (same position for every corrupted row) to
/// `magnitude`. Labels are untouched.
pub fn inject_outliers(
    train: &Dataset,
    ratio: f64,
    corruption: Corruption,
    magnitude: f64,
    seed: u64,
) -> Result<(Dataset, ErrorTable)> {
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::invalid(format!(
            "corruption magnitude must be positive, got {magnitude}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("outlier ratio must lie in (0, 1), got {ratio}")));
    }
    let d = train.dims();
    if corruption == Corruption::Stripe && d < 4 {
        return Err(Error::invalid(format!(
            "stripe corruption needs at least 4 features, got {d}"
        )));
    }
    let count = (ratio * train.len() as f64).round() as usize;
    if count == 0 {
        return Err(Error::invalid(format!("ratio {ratio} corrupts no sample")));
    }
    let mut rng = seeded(seed, Stream::Outliers);
    let width = stripe_width(d);
    let start = rng.random_range(0..=d - width.min(d));
    let mut rows: Vec<usize> = index::sample(&mut rng, train.len(), count).into_vec();
    rows.sort_unstable();
    let mut features = train.features().to_vec();
    for &r in &rows {
        let row = &mut features[r * d..(r + 1) * d];
        match corruption {
            Corruption::Brightness => row.iter_mut().for_each(|v| *v += magnitude),
            Corruption::Stripe => row[start..start + width].iter_mut().for_each(|v| *v = magnitude),
        }
    }
    let mut entries: Vec<ErrorEntry> = train.ids().iter().map(|&id| ErrorEntry::clean(id)).collect();
    for &r in &rows {
        entries[r].glitch_type = GlitchType::Outlier;
    }
    Ok((train.with_features(features)?, ErrorTable::new(entries)))
}
