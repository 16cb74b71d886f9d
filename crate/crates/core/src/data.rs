//! Datasets: CSV ingestion, Gaussian blob synthesis and stratified sampling.
//!
//! A [`Dataset`] is an immutable row-major feature matrix with dense class
//! labels and a stable, unique identifier per sample. Every transform in the
//! crate preserves identifiers, so a sample can be traced from ingestion
//! through injection, training and ranking.
//!
//! Persisted datasets are CSV files with one column per feature (`f0`, `f1`,
//! ...), a `__label__` column holding the dense class index and a
//! `__sample_id__` column.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

pub type SampleId = u64;

pub const SAMPLE_ID_COLUMN: &str = "__sample_id__";
pub const LABEL_COLUMN: &str = "__label__";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dims: usize,
    labels: Vec<usize>,
    ids: Vec<SampleId>,
    class_count: usize,
}

impl Dataset {
    /// Build a dataset from a row-major feature buffer.
    pub fn new(
        features: Vec<f64>,
        dims: usize,
        labels: Vec<usize>,
        ids: Vec<SampleId>,
        class_count: usize,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::invalid(format!(
                "a dataset needs at least 2 classes, got {class_count}"
            )));
        }
        if dims == 0 {
            return Err(Error::invalid("a dataset needs at least one feature"));
        }
        let n = labels.len();
        if features.len() != n * dims {
            return Err(Error::invalid(format!(
                "feature buffer holds {} values, expected {n}x{dims}",
                features.len()
            )));
        }
        if ids.len() != n {
            return Err(Error::invalid(format!(
                "{} sample ids for {n} rows",
                ids.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature {} of row {}",
                pos % dims,
                pos / dims
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{class_count}"
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(*id) {
                return Err(Error::invalid(format!("duplicate sample id {id}")));
            }
        }
        Ok(Self {
            features,
            dims,
            labels,
            ids,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.dims)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn id(&self, i: usize) -> SampleId {
        self.ids[i]
    }

    pub fn max_id(&self) -> Option<SampleId> {
        self.ids.iter().copied().max()
    }

    /// Row index for every sample id.
    pub fn index_map(&self) -> HashMap<SampleId, usize> {
        self.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.class_count];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Row indices grouped by class, each group in ascending row order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dims);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Dataset {
            features,
            dims: self.dims,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            class_count: self.class_count,
        }
    }

    /// Same features and ids, new labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(
            self.features.clone(),
            self.dims,
            labels,
            self.ids.clone(),
            self.class_count,
        )
    }

    pub fn with_features(&self, features: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            features,
            self.dims,
            self.labels.clone(),
            self.ids.clone(),
            self.class_count,
        )
    }

    /// Append rows from another dataset with the same dimensionality.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.dims != self.dims {
            return Err(Error::invalid(format!(
                "cannot concatenate {}-dimensional rows onto a {}-dimensional dataset",
                other.dims, self.dims
            )));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        Dataset::new(
            features,
            self.dims,
            labels,
            ids,
            self.class_count.max(other.class_count),
        )
    }

    /// Apply `x * scale + shift` to every feature value.
    pub fn affine(&self, scale: f64, shift: f64) -> Result<Dataset> {
        self.with_features(self.features.iter().map(|v| v * scale + shift).collect())
    }

    /// Per-column zero mean / unit variance; zero-variance columns become all zero.
    pub fn standardized(&self) -> Dataset {
        let mut out = self.clone();
        standardize_columns(&mut out.features, self.dims);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.dims).map(|j| format!("f{j}")).collect();
        header.push(LABEL_COLUMN.to_string());
        header.push(SAMPLE_ID_COLUMN.to_string());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            rec.push(self.ids[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a dataset written by [`Dataset::write_csv`]. The class count is
    /// `max(label) + 1` unless `class_count` is given.
    pub fn read_csv(path: &Path, class_count: Option<usize>) -> Result<Dataset> {
        let mut r = open_csv(path)?;
        let header = r.headers()?.clone();
        let label_col = column_index(&header, LABEL_COLUMN, path)?;
        let id_col = column_index(&header, SAMPLE_ID_COLUMN, path)?;
        let feature_cols: Vec<usize> = (0..header.len())
            .filter(|&c| c != label_col && c != id_col)
            .collect();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut ids = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            for &c in &feature_cols {
                features.push(parse_f64(&rec[c], path, row, &header[c])?);
            }
            labels.push(parse_int(&rec[label_col], path, row, LABEL_COLUMN)? as usize);
            ids.push(parse_int(&rec[id_col], path, row, SAMPLE_ID_COLUMN)?);
        }
        let k = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Dataset::new(features, feature_cols.len(), labels, ids, k)
    }
}

pub(crate) fn standardize_columns(features: &mut [f64], dims: usize) {
    let n = features.len() / dims;
    if n == 0 {
        return;
    }
    for j in 0..dims {
        let mean = (0..n).map(|i| features[i * dims + j]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| {
                let c = features[i * dims + j] - mean;
                c * c
            })
            .sum::<f64>()
            / n as f64;
        let std = var.sqrt();
        let scale = if std > 0.0 { std } else { 1.0 };
        for i in 0..n {
            let v = &mut features[i * dims + j];
            *v = (*v - mean) / scale;
        }
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn column_index(header: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format {
            what: "csv header",
            message: format!("{} has no `{name}` column", path.display()),
        })
}

fn parse_f64(cell: &str, path: &Path, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: format!("`{cell}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            message: format!("`{cell}` parses to a non-finite value"),
        });
    }
    Ok(v)
}

fn parse_int(cell: &str, path: &Path, row: usize, column: &str) -> Result<u64> {
    cell.trim().parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message: format!("`{cell}` is not a non-negative integer"),
    })
}

/// Load a raw CSV file: header row required, one label column, every other
/// column numeric. Labels are re-encoded densely in first-appearance order,
/// features are standardized per column and sample ids follow row order.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut r = open_csv(path)?;
    let header = r.headers()?.clone();
    let label_col = column_index(&header, label_column, path)?;
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != label_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::Format {
            what: "csv header",
            message: format!("{} has no feature columns", path.display()),
        });
    }
    let mut encoding: HashMap<String, usize> = HashMap::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        for &c in &feature_cols {
            features.push(parse_f64(&rec[c], path, row, &header[c])?);
        }
        let next = encoding.len();
        labels.push(*encoding.entry(rec[label_col].to_string()).or_insert(next));
    }
    if encoding.len() < 2 {
        return Err(Error::invalid(format!(
            "{} contains {} class(es); at least 2 are required",
            path.display(),
            encoding.len()
        )));
    }
    let dims = feature_cols.len();
    standardize_columns(&mut features, dims);
    let ids = (0..labels.len() as SampleId).collect();
    Dataset::new(features, dims, labels, ids, encoding.len())
}

const CENTER_ATTEMPTS: usize = 1_000;
const LAYOUT_ATTEMPTS: usize = 100;

/// Place `k` centers uniformly in `[-half_width, half_width]^d`, pairwise at
/// least `separation` apart.
pub(crate) fn place_centers(
    k: usize,
    d: usize,
    separation: f64,
    half_width: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<f64>>> {
    'layout: for _ in 0..LAYOUT_ATTEMPTS {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
        while centers.len() < k {
            let mut placed = false;
            for _ in 0..CENTER_ATTEMPTS {
                let c: Vec<f64> = (0..d)
                    .map(|_| rng.random_range(-half_width..=half_width))
                    .collect();
                if centers.iter().all(|o| euclidean(o, &c) >= separation) {
                    centers.push(c);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'layout;
            }
        }
        return Ok(centers);
    }
    Err(Error::invalid(format!(
        "could not place {k} centers {separation} apart in a {d}-dimensional box of half-width {half_width}"
    )))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `k` isotropic unit-variance Gaussian clusters with centers pairwise at
/// least `separation` apart and class sizes differing by at most one.
///
/// Centers are drawn in a box of half-width `separation * max(1, k^(1/d))`.
/// Rows are shuffled so sample ids carry no class information. Features are
/// left in cluster units (within-class standard deviation 1).
pub fn make_blobs(n: usize, d: usize, k: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::invalid("make_blobs needs at least 2 classes"));
    }
    if n < 2 * k {
        return Err(Error::invalid(format!(
            "make_blobs needs n >= 2k, got n={n}, k={k}"
        )));
    }
    if d == 0 {
        return Err(Error::invalid("make_blobs needs d >= 1"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be a positive finite number"));
    }
    let half_width = separation * (k as f64).powf(1.0 / d as f64).max(1.0);
    let centers = place_centers(k, d, separation, half_width, &mut seeded(seed, Stream::BlobCenters))?;

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut rng = seeded(seed, Stream::BlobSamples);
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n * d);
    for &l in &labels {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            features.push(centers[l][j] + z);
        }
    }
    Dataset::new(features, d, labels, (0..n as SampleId).collect(), k)
}

fn check_fraction(fraction: f64, what: &str) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("{what} must lie in (0, 1], got {fraction}")));
    }
    Ok(())
}

/// Draw `round(fraction * class size)` samples uniformly from every class.
/// The output keeps the source row order.
pub fn stratified_subsample(data: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    check_fraction(fraction, "subsample fraction")?;
    let mut rng = seeded(seed, Stream::Subsample);
    let mut keep = Vec::new();
    for (c, mut members) in data.class_indices().into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if fraction * (members.len() as f64) < 1.0 {
            return Err(Error::invalid(format!(
                "fraction {fraction} empties class {c} ({} samples)",
                members.len()
            )));
        }
        let take = ((fraction * members.len() as f64).round() as usize).clamp(1, members.len());
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..take]);
    }
    keep.sort_unstable();
    Ok(data.select(&keep))
}

/// Train / validation pair with disjoint sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: Dataset,
    pub validation: Dataset,
}

/// Stratified split: every class contributes `round(train_fraction * size)`
/// samples to the training part (clamped so both parts keep at least one).
pub fn stratified_split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = seeded(seed, Stream::Split);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (c, mut members) in data.class_indices().into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::invalid(format!(
                "class {c} has {} sample(s); a split needs at least 2 per class",
                members.len()
            )));
        }
        let take = ((train_fraction * members.len() as f64).round() as usize)
            .clamp(1, members.len() - 1);
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..take]);
        validation.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    Ok(SplitPair {
        train: data.select(&train),
        validation: data.select(&validation),
    })
}
