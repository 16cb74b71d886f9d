//! Declarative experiments: configuration, in-memory runs and the cached
//! on-disk stage pipeline.
//!
//! A run goes ingest → subsample → split → inject → train → influence →
//! signals → evaluate. On disk the stages persist into six directories
//! (`prepare`, `inject`, `train`, `influence`, `signals`, `evaluate`), each
//! named `<stage>-<key>` where the key hashes the stage's configuration
//! together with its upstream keys. A stage whose directory holds a manifest
//! matching its files is skipped on the next run.
//!
//! Seeds for every random step are derived from the experiment seed, so one
//! number reproduces a run. Relative paths are resolved against the working
//! directory.
//!
//! Configuration schema (TOML):
//!
//! ```toml
//! name = "minimal"
//! seed = 7
//! signals = ["SI", "MI", "AAI", "GD-class"]   # default: all four
//! influence_mode = "paper"                    # or "checkpoint"
//! per_epoch = true                            # also score every epoch slice
//! record_runtime = false                      # fill runtime_ms (breaks byte-identity)
//!
//! [data]
//! source = "blobs"                            # or "csv" with path / label_column
//! n = 200
//! dims = 2
//! classes = 3
//! separation = 4.0
//! subsample_fraction = 1.0
//! train_fraction = 0.8
//! order = "subsample_then_split"              # or "split_then_subsample"
//!
//! [foreign]                                   # far_ca pool, same keys as [data] sources
//! source = "blobs"
//! n = 100
//! dims = 2
//! classes = 2
//! separation = 1.0
//! shift = 12.0
//!
//! [model]
//! architecture = "logistic"                   # or "mlp" with hidden_units
//! learning_rate = 0.1
//! epochs = 5
//! batch_size = 16
//!
//! [[glitches]]
//! type = "uniform_noise"
//! epsilon = 0.1
//!
//! [sweep]
//! ratios = [0.01, 0.1, 0.3]
//! seeds = [0, 1, 2, 3, 4]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{self, check_evaluation_chain, ArtifactMeta};
use crate::data::{load_csv, make_blobs, stratified_split, stratified_subsample, Dataset, SampleId, SplitPair};
use crate::error::{Error, Result};
use crate::eval::{f1_at_known_ratio, mean_cells, write_cells_csv};
use crate::glitch::{ErrorTable, GlitchSpec, GlitchType};
use crate::influence::{tracin, InfluenceMode, InfluenceTensor};
use crate::model::{train, CheckpointTrail, ModelConfig};
use crate::rng::derive_seed;
use crate::signals::{compute, read_rankings_csv, write_rankings_csv, Scope, Signal, SignalRanking};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Blobs,
    Csv,
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn yes() -> bool {
    true
}

fn default_train_fraction() -> f64 {
    0.8
}

fn all_signals() -> Vec<Signal> {
    Signal::ALL.to_vec()
}

/// Where samples come from: the blob generator or a CSV file. Features are
/// mapped through `x * scale + shift` after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub source: SourceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Fixed generator seed; derived from the experiment seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_column: Option<String>,
    /// Standardize generated blobs to zero mean, unit variance per feature
    /// before the affine map. CSV sources are always standardized on ingest.
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub scale: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shift: f64,
}

impl DataSource {
    pub fn blobs(n: usize, dims: usize, classes: usize, separation: f64) -> Self {
        Self {
            source: SourceKind::Blobs,
            n: Some(n),
            dims: Some(dims),
            classes: Some(classes),
            separation: Some(separation),
            seed: None,
            path: None,
            label_column: None,
            standardize: true,
            scale: 1.0,
            shift: 0.0,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, label_column: &str) -> Self {
        Self {
            source: SourceKind::Csv,
            path: Some(path.into()),
            label_column: Some(label_column.to_string()),
            n: None,
            dims: None,
            classes: None,
            separation: None,
            seed: None,
            standardize: true,
            scale: 1.0,
            shift: 0.0,
        }
    }

    /// Short dataset label used in result tables.
    pub fn name(&self) -> String {
        match self.source {
            SourceKind::Blobs => "blobs".into(),
            SourceKind::Csv => self
                .path
                .as_deref()
                .and_then(Path::file_stem)
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{what}: {m}")));
        if !(self.scale.is_finite() && self.scale != 0.0 && self.shift.is_finite()) {
            return bad("scale must be finite and non-zero, shift finite".into());
        }
        match self.source {
            SourceKind::Blobs => {
                let (Some(n), Some(d), Some(k), Some(sep)) = (self.n, self.dims, self.classes, self.separation)
                else {
                    return bad("blobs need n, dims, classes and separation".into());
                };
                if k < 2 || d == 0 || n < 2 * k || !(sep > 0.0 && sep.is_finite()) {
                    return bad(format!("invalid blob parameters n={n} dims={d} classes={k} separation={sep}"));
                }
            }
            SourceKind::Csv => {
                let Some(path) = &self.path else {
                    return bad("a csv source needs a path".into());
                };
                if !path.is_file() {
                    return bad(format!("{} does not exist", path.display()));
                }
            }
        }
        Ok(())
    }

    pub fn load(&self, default_seed: u64) -> Result<Dataset> {
        let data = match self.source {
            SourceKind::Blobs => {
                let blobs = make_blobs(
                    self.n.unwrap_or(0),
                    self.dims.unwrap_or(0),
                    self.classes.unwrap_or(0),
                    self.separation.unwrap_or(0.0),
                    self.seed.unwrap_or(default_seed),
                )?;
                if self.standardize {
                    blobs.standardized()
                } else {
                    blobs
                }
            }
            SourceKind::Csv => {
                let path = self
                    .path
                    .as_deref()
                    .ok_or_else(|| Error::Config("a csv source needs a path".into()))?;
                load_csv(path, self.label_column.as_deref().unwrap_or("label"))?
            }
        };
        if self.scale == 1.0 && self.shift == 0.0 {
            Ok(data)
        } else {
            data.affine(self.scale, self.shift)
        }
    }

    /// Hash of the inputs that determine the loaded data.
    fn fingerprint(&self) -> Result<serde_json::Value> {
        let file = match (&self.source, &self.path) {
            (SourceKind::Csv, Some(p)) => Some(artifact::sha256_file(p)?),
            _ => None,
        };
        Ok(json!({ "source": self, "file": file }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitOrder {
    #[default]
    SubsampleThenSplit,
    SplitThenSubsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default = "one")]
    pub subsample_fraction: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub order: SplitOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "all_signals")]
    pub signals: Vec<Signal>,
    #[serde(default)]
    pub influence_mode: InfluenceMode,
    #[serde(default = "yes")]
    pub per_epoch: bool,
    #[serde(default)]
    pub record_runtime: bool,
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreign: Option<DataSource>,
    /// `model.seed` is mixed into the training seed derived from `seed`.
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub glitches: Vec<GlitchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("name must not be empty".into()));
        }
        self.data.source.validate("data")?;
        if !(self.data.subsample_fraction > 0.0 && self.data.subsample_fraction <= 1.0) {
            return Err(Error::Config("data.subsample_fraction must lie in (0, 1]".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must lie in (0, 1)".into()));
        }
        if let Some(f) = &self.foreign {
            f.validate("foreign")?;
        }
        self.model
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        for (i, g) in self.glitches.iter().enumerate() {
            g.validate()
                .map_err(|e| Error::Config(format!("glitches[{i}]: {e}")))?;
            if g.glitch_type == GlitchType::FarCa && self.foreign.is_none() {
                return Err(Error::Config(format!(
                    "glitches[{i}]: far_ca needs a [foreign] data source"
                )));
            }
        }
        if self.signals.is_empty() {
            return Err(Error::Config("signals must not be empty".into()));
        }
        if let Some(s) = &self.sweep {
            if self.glitches.len() != 1 {
                return Err(Error::Config("a sweep needs exactly one glitch specification".into()));
            }
            if s.ratios.is_empty() || s.seeds.is_empty() {
                return Err(Error::Config("sweep ratios and seeds must not be empty".into()));
            }
            if let Some(r) = s.ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
                return Err(Error::Config(format!("sweep ratio {r} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn train_config(&self) -> ModelConfig {
        ModelConfig {
            seed: derive_seed(self.seed, "train") ^ self.model.seed,
            ..self.model.clone()
        }
    }

    /// Labels attached to every result row of this experiment.
    pub fn row_context(&self, errors: &ErrorTable) -> RowContext {
        let (glitch_type, ratio) = match self.glitches.as_slice() {
            [] => ("clean".to_string(), 0.0),
            [g] => (g.glitch_type.to_string(), g.epsilon),
            _ => ("mixed".to_string(), errors.ratio()),
        };
        RowContext {
            dataset: self.data.source.name(),
            model: self.model.architecture.to_string(),
            glitch_type,
            ratio,
            seed: self.seed,
        }
    }
}

/// Ingest, subsample and split.
pub fn prepare(config: &ExperimentConfig) -> Result<SplitPair> {
    let seed = config.seed;
    let full = config.data.source.load(derive_seed(seed, "data"))?;
    let frac = config.data.subsample_fraction;
    let sub = |d: Dataset, tag: &str| -> Result<Dataset> {
        if frac < 1.0 {
            stratified_subsample(&d, frac, derive_seed(seed, tag))
        } else {
            Ok(d)
        }
    };
    let split_seed = derive_seed(seed, "split");
    match config.data.order {
        SplitOrder::SubsampleThenSplit => {
            stratified_split(&sub(full, "subsample")?, config.data.train_fraction, split_seed)
        }
        SplitOrder::SplitThenSubsample => {
            let s = stratified_split(&full, config.data.train_fraction, split_seed)?;
            Ok(SplitPair {
                train: sub(s.train, "subsample-train")?,
                validation: sub(s.validation, "subsample-validation")?,
            })
        }
    }
}

/// Apply the glitch list in order, chaining the error tables. Merged far_ca
/// samples get ids above `reserved_max` (the largest validation id).
pub fn inject(
    config: &ExperimentConfig,
    clean_train: &Dataset,
    reserved_max: Option<SampleId>,
) -> Result<(Dataset, ErrorTable)> {
    let foreign = match &config.foreign {
        Some(f) if config.glitches.iter().any(|g| g.glitch_type == GlitchType::FarCa) => {
            Some(f.load(derive_seed(config.seed, "foreign"))?)
        }
        _ => None,
    };
    let mut data = clean_train.clone();
    let mut errors = ErrorTable::all_clean(&data);
    for (i, g) in config.glitches.iter().enumerate() {
        let first_id = reserved_max.map(|m| m + 1);
        let seed = derive_seed(config.seed, &format!("inject-{i}"));
        let (next, table) = g.apply_with_first_id(&data, foreign.as_ref(), first_id, seed)?;
        errors = errors.chain(&table);
        data = next;
    }
    Ok((data, errors))
}

pub fn fit(config: &ExperimentConfig, train_set: &Dataset) -> Result<CheckpointTrail> {
    train(train_set, &config.train_config())
}

/// Rankings for every configured signal: cumulative first, then each epoch
/// when `per_epoch` is set.
pub fn rank_signals(
    config: &ExperimentConfig,
    tensor: &InfluenceTensor,
    train_labels: &[usize],
    val_labels: &[usize],
) -> Result<Vec<SignalRanking>> {
    let mut scopes = vec![Scope::Cumulative];
    if config.per_epoch {
        scopes.extend((0..tensor.epochs()).map(Scope::Epoch));
    }
    let mut out = Vec::new();
    for &signal in &config.signals {
        for &scope in &scopes {
            out.push(compute(signal, tensor, train_labels, val_labels, scope)?);
        }
    }
    Ok(out)
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub glitch_type: String,
    pub ratio: f64,
    pub seed: u64,
    pub signal: Signal,
    pub epoch_scope: Scope,
    pub f1: f64,
    pub runtime_ms: u64,
}

pub const RESULT_COLUMNS: [&str; 9] = [
    "dataset",
    "model",
    "glitch_type",
    "ratio",
    "seed",
    "signal",
    "epoch_scope",
    "f1",
    "runtime_ms",
];

/// Descriptive columns shared by all rows of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RowContext {
    pub dataset: String,
    pub model: String,
    pub glitch_type: String,
    pub ratio: f64,
    pub seed: u64,
}

impl RowContext {
    /// Glitch columns read off the error table itself.
    pub fn from_errors(dataset: &str, model: &str, seed: u64, errors: &ErrorTable) -> Self {
        let glitch_type = match (errors.glitched_count(), errors.dominant_type()) {
            (0, _) => "clean".to_string(),
            (_, Some(t)) => t.to_string(),
            (_, None) => "mixed".to_string(),
        };
        Self {
            dataset: dataset.to_string(),
            model: model.to_string(),
            glitch_type,
            ratio: errors.ratio(),
            seed,
        }
    }
}

pub fn score_rankings(
    ctx: &RowContext,
    rankings: &[SignalRanking],
    errors: &ErrorTable,
    runtime_ms: u64,
) -> Result<Vec<ResultRow>> {
    rankings
        .iter()
        .map(|r| {
            let d = f1_at_known_ratio(r, errors)?;
            Ok(ResultRow {
                dataset: ctx.dataset.clone(),
                model: ctx.model.clone(),
                glitch_type: ctx.glitch_type.clone(),
                ratio: ctx.ratio,
                seed: ctx.seed,
                signal: d.signal,
                epoch_scope: d.epoch_scope,
                f1: d.f1,
                runtime_ms,
            })
        })
        .collect()
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.dataset.clone(),
            r.model.clone(),
            r.glitch_type.clone(),
            r.ratio.to_string(),
            r.seed.to_string(),
            r.signal.to_string(),
            r.epoch_scope.to_string(),
            r.f1.to_string(),
            r.runtime_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |column: &str| Error::Parse {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            message: "unparseable value".into(),
        };
        if rec.len() != RESULT_COLUMNS.len() {
            return Err(bad("*"));
        }
        rows.push(ResultRow {
            dataset: rec[0].to_string(),
            model: rec[1].to_string(),
            glitch_type: rec[2].to_string(),
            ratio: rec[3].parse().map_err(|_| bad("ratio"))?,
            seed: rec[4].parse().map_err(|_| bad("seed"))?,
            signal: rec[5].parse().map_err(|_| bad("signal"))?,
            epoch_scope: rec[6].parse().map_err(|_| bad("epoch_scope"))?,
            f1: rec[7].parse().map_err(|_| bad("f1"))?,
            runtime_ms: rec[8].parse().map_err(|_| bad("runtime_ms"))?,
        });
    }
    Ok(rows)
}

/// Everything an in-memory run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// Train/validation split before contamination.
    pub split: SplitPair,
    pub train: Dataset,
    pub errors: ErrorTable,
    pub trail: CheckpointTrail,
    pub tensor: InfluenceTensor,
    pub rankings: Vec<SignalRanking>,
    pub rows: Vec<ResultRow>,
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

/// Run every stage in memory without touching the disk.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let start = Instant::now();
    let split = staged("prepare", prepare(config))?;
    let (train_set, errors) = staged(
        "inject",
        inject(config, &split.train, split.validation.max_id()),
    )?;
    let trail = staged("train", fit(config, &train_set))?;
    let tensor = staged(
        "influence",
        tracin(&trail, &train_set, &split.validation, config.influence_mode),
    )?;
    let rankings = staged(
        "signals",
        rank_signals(config, &tensor, train_set.labels(), split.validation.labels()),
    )?;
    let runtime = if config.record_runtime {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let rows = staged(
        "evaluate",
        score_rankings(&config.row_context(&errors), &rankings, &errors, runtime),
    )?;
    Ok(Experiment {
        split,
        train: train_set,
        errors,
        trail,
        tensor,
        rankings,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: &'static str,
    pub status: StageStatus,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub stages: Vec<StageOutcome>,
    /// Copy of the evaluation table at the top of the output directory.
    pub results: PathBuf,
}

impl RunReport {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Skipped)
    }

    pub fn dir(&self, stage: &str) -> Option<&Path> {
        self.stages
            .iter()
            .find(|s| s.stage == stage)
            .map(|s| s.dir.as_path())
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Manifest {
    stage: String,
    key: String,
    files: BTreeMap<String, String>,
}

const MANIFEST: &str = "manifest.json";

struct Stages<'a> {
    out: &'a Path,
    outcomes: Vec<StageOutcome>,
}

impl Stages<'_> {
    /// Run `build` into `<out>/<stage>-<key>` unless an intact manifest is
    /// already there. Returns the stage key and directory.
    fn run(
        &mut self,
        stage: &'static str,
        material: serde_json::Value,
        upstream: &[&str],
        files: &[&str],
        build: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<(String, PathBuf)> {
        let spec = json!({ "stage": stage, "material": material, "upstream": upstream });
        let key = artifact::sha256_bytes(spec.to_string().as_bytes())[..16].to_string();
        let dir = self.out.join(format!("{stage}-{key}"));
        let status = if intact(&dir, stage, &key, files) {
            StageStatus::Skipped
        } else {
            let _ = fs::remove_file(dir.join(MANIFEST));
            staged(stage, fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e)))?;
            staged(stage, build(&dir))?;
            let mut hashes = BTreeMap::new();
            for f in files {
                hashes.insert(f.to_string(), staged(stage, artifact::sha256_file(&dir.join(f)))?);
            }
            let manifest = Manifest {
                stage: stage.to_string(),
                key: key.clone(),
                files: hashes,
            };
            let path = dir.join(MANIFEST);
            let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            staged(stage, fs::write(&path, text).map_err(|e| Error::io(&path, e)))?;
            StageStatus::Ran
        };
        self.outcomes.push(StageOutcome {
            stage,
            status,
            dir: dir.clone(),
        });
        Ok((key, dir))
    }
}

fn intact(dir: &Path, stage: &str, key: &str, files: &[&str]) -> bool {
    let Ok(text) = fs::read_to_string(dir.join(MANIFEST)) else {
        return false;
    };
    let Ok(m) = serde_json::from_str::<Manifest>(&text) else {
        return false;
    };
    m.stage == stage
        && m.key == key
        && m.files.len() == files.len()
        && files.iter().all(|f| {
            m.files.get(*f).is_some_and(|h| {
                artifact::sha256_file(&dir.join(f)).is_ok_and(|actual| &actual == h)
            })
        })
}

fn dataset_attrs(data: &Dataset) -> BTreeMap<String, String> {
    BTreeMap::from([("classes".to_string(), data.class_count().to_string())])
}

/// Write a dataset CSV and its sidecar.
pub fn save_dataset(data: &Dataset, path: &Path, parents: &[&ArtifactMeta]) -> Result<ArtifactMeta> {
    data.write_csv(path)?;
    artifact::seal(path, "dataset", parents, BTreeMap::new(), dataset_attrs(data))
}

/// Read a dataset CSV, taking the class count from its sidecar when present.
pub fn load_dataset(path: &Path) -> Result<(Dataset, ArtifactMeta)> {
    let meta = artifact::load_meta(path)?;
    let data = Dataset::read_csv(path, meta.attr("classes"))?;
    Ok((data, meta))
}

/// Write an error table next to the contaminated training set it describes.
pub fn save_errors(errors: &ErrorTable, path: &Path, clean: &ArtifactMeta, train: &ArtifactMeta) -> Result<ArtifactMeta> {
    errors.write_csv(path)?;
    artifact::seal(
        path,
        "error_table",
        &[clean],
        BTreeMap::from([("train".to_string(), train.sha256.clone())]),
        BTreeMap::new(),
    )
}

/// Read rankings and an error table after checking that both belong to the
/// same artifact chain.
pub fn load_for_evaluation(rankings: &Path, errors: &Path) -> Result<(Vec<SignalRanking>, ErrorTable)> {
    let rm = artifact::load_meta(rankings)?;
    let em = artifact::load_meta(errors)?;
    check_evaluation_chain(&rm, &em)?;
    Ok((read_rankings_csv(rankings)?, ErrorTable::read_csv(errors)?))
}

/// Run the staged pipeline into `out`, reusing intact stage directories.
pub fn run_pipeline(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    let start = Instant::now();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut st = Stages {
        out,
        outcomes: Vec::new(),
    };

    let material = json!({
        "seed": config.seed,
        "source": config.data.source.fingerprint()?,
        "subsample_fraction": config.data.subsample_fraction,
        "train_fraction": config.data.train_fraction,
        "order": config.data.order,
    });
    let (prep_key, prep) = st.run("prepare", material, &[], &["train.csv", "validation.csv"], |dir| {
        let split = prepare(config)?;
        let source = match (&config.data.source.source, &config.data.source.path) {
            (SourceKind::Csv, Some(p)) => vec![artifact::load_meta(p)?],
            _ => Vec::new(),
        };
        let parents: Vec<&ArtifactMeta> = source.iter().collect();
        save_dataset(&split.train, &dir.join("train.csv"), &parents)?;
        save_dataset(&split.validation, &dir.join("validation.csv"), &parents)?;
        Ok(())
    })?;

    let foreign = match &config.foreign {
        Some(f) => Some(f.fingerprint()?),
        None => None,
    };
    let material = json!({ "seed": config.seed, "glitches": config.glitches, "foreign": foreign });
    let (inject_key, inj) = st.run("inject", material, &[&prep_key], &["train.csv", "errors.csv"], |dir| {
        let (clean, clean_meta) = load_dataset(&prep.join("train.csv"))?;
        let (validation, _) = load_dataset(&prep.join("validation.csv"))?;
        let (data, errors) = inject(config, &clean, validation.max_id())?;
        let train_meta = save_dataset(&data, &dir.join("train.csv"), &[&clean_meta])?;
        save_errors(&errors, &dir.join("errors.csv"), &clean_meta, &train_meta)?;
        Ok(())
    })?;

    let material = json!({ "seed": config.seed, "model": config.train_config() });
    let (train_key, trn) = st.run("train", material, &[&inject_key], &["trail.bin"], |dir| {
        let (data, meta) = load_dataset(&inj.join("train.csv"))?;
        let trail = fit(config, &data)?;
        let path = dir.join("trail.bin");
        trail.save(&path)?;
        artifact::seal(&path, "checkpoint_trail", &[&meta], BTreeMap::new(), BTreeMap::new())?;
        Ok(())
    })?;

    let material = json!({ "mode": config.influence_mode });
    let (influence_key, inf) = st.run(
        "influence",
        material,
        &[&train_key, &inject_key, &prep_key],
        &["tensor.bin", "influence.csv"],
        |dir| {
            let (data, _) = load_dataset(&inj.join("train.csv"))?;
            let (validation, val_meta) = load_dataset(&prep.join("validation.csv"))?;
            let trail_path = trn.join("trail.bin");
            let trail_meta = artifact::load_meta(&trail_path)?;
            let trail = CheckpointTrail::load(&trail_path)?;
            let tensor = tracin(&trail, &data, &validation, config.influence_mode)?;
            let path = dir.join("tensor.bin");
            tensor.save(&path)?;
            artifact::seal(&path, "influence_tensor", &[&trail_meta, &val_meta], BTreeMap::new(), BTreeMap::new())?;
            let path = dir.join("influence.csv");
            tensor.write_cumulative_csv(&path)?;
            artifact::seal(&path, "influence_table", &[&trail_meta, &val_meta], BTreeMap::new(), BTreeMap::new())?;
            Ok(())
        },
    )?;

    let material = json!({ "signals": config.signals, "per_epoch": config.per_epoch });
    let (signals_key, sig) = st.run("signals", material, &[&influence_key], &["rankings.csv"], |dir| {
        let (data, _) = load_dataset(&inj.join("train.csv"))?;
        let (validation, _) = load_dataset(&prep.join("validation.csv"))?;
        let tensor_path = inf.join("tensor.bin");
        let tensor_meta = artifact::load_meta(&tensor_path)?;
        let tensor = InfluenceTensor::load(&tensor_path)?;
        let rankings = rank_signals(config, &tensor, data.labels(), validation.labels())?;
        let path = dir.join("rankings.csv");
        write_rankings_csv(&rankings, &path)?;
        artifact::seal(&path, "rankings", &[&tensor_meta], BTreeMap::new(), BTreeMap::new())?;
        Ok(())
    })?;

    let material = json!({
        "dataset": config.data.source.name(),
        "model": config.model.architecture,
        "glitches": config.glitches,
        "seed": config.seed,
        "record_runtime": config.record_runtime,
    });
    let (_, eva) = st.run("evaluate", material, &[&signals_key, &inject_key], &["results.csv", "plot.csv"], |dir| {
        let runtime = if config.record_runtime {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        let (rankings, errors) = load_for_evaluation(&sig.join("rankings.csv"), &inj.join("errors.csv"))?;
        let rows = score_rankings(&config.row_context(&errors), &rankings, &errors, runtime)?;
        let path = dir.join("results.csv");
        write_results_csv(&rows, &path)?;
        let parents = [
            artifact::load_meta(&sig.join("rankings.csv"))?,
            artifact::load_meta(&inj.join("errors.csv"))?,
        ];
        artifact::seal(&path, "results", &[&parents[0], &parents[1]], BTreeMap::new(), BTreeMap::new())?;
        write_cells_csv(&mean_cells(&rows), &dir.join("plot.csv"))?;
        Ok(())
    })?;

    let results = out.join("results.csv");
    fs::copy(eva.join("results.csv"), &results).map_err(|e| Error::io(&results, e))?;
    Ok(RunReport {
        stages: st.outcomes,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
name = "minimal"
seed = 3

[data]
source = "blobs"
n = 200
dims = 2
classes = 3
separation = 4.0

[model]
architecture = "logistic"
learning_rate = 0.1
epochs = 5
batch_size = 16

[[glitches]]
type = "uniform_noise"
epsilon = 0.1
"#;

    #[test]
    fn config_round_trip_is_byte_stable() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let once = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&once).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string().unwrap(), once);
        assert_eq!(cfg.signals, Signal::ALL.to_vec());
        assert_eq!(cfg.data.train_fraction, 0.8);
    }

    #[test]
    fn epsilon_one_fails_validation() {
        let text = MINIMAL.replace("epsilon = 0.1", "epsilon = 1.0");
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.is_validation());
        let dir = tempfile::tempdir().unwrap();
        assert!(run_pipeline(&cfg, dir.path()).is_err());
        assert_eq!(fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
    }

    #[test]
    fn unknown_keys_and_missing_paths_are_rejected() {
        assert!(ExperimentConfig::from_toml_str(&format!("bogus = 1\n{MINIMAL}")).is_err());
        let text = MINIMAL.replace(
            "source = \"blobs\"",
            "source = \"csv\"\npath = \"/definitely/not/here.csv\"",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn in_memory_and_staged_runs_agree() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let mem = run_experiment(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = run_pipeline(&cfg, dir.path()).unwrap();
        assert_eq!(report.stages.len(), 6);
        assert!(report.stages.iter().all(|s| s.status == StageStatus::Ran));
        assert_eq!(read_results_csv(&report.results).unwrap(), mem.rows);
        let again = run_pipeline(&cfg, dir.path()).unwrap();
        assert!(again.all_skipped());
    }

    #[test]
    fn evaluate_refuses_foreign_chain() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = run_pipeline(&cfg, &dir.path().join("a")).unwrap();
        let mut other = cfg.clone();
        other.seed = 4;
        let b = run_pipeline(&other, &dir.path().join("b")).unwrap();
        let rankings = a.dir("signals").unwrap().join("rankings.csv");
        let errors_b = b.dir("inject").unwrap().join("errors.csv");
        let errors_a = a.dir("inject").unwrap().join("errors.csv");
        assert!(load_for_evaluation(&rankings, &errors_a).is_ok());
        assert!(matches!(
            load_for_evaluation(&rankings, &errors_b),
            Err(Error::ChainMismatch(_))
        ));
    }
}
