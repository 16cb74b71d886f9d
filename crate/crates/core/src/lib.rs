//! Training-data debugging with influence signals.
//!
//! The crate injects controlled glitches into a training set, trains a small
//! softmax classifier with SGD while checkpointing every epoch, computes
//! TracIn influence from last-layer gradients, ranks training samples by
//! four influence signals and scores the rankings against the injected
//! ground truth with top-k F1.
//!
//! | module | contents |
//! |---|---|
//! | [`data`] | datasets, CSV ingest, blob generator, stratified subsample/split |
//! | [`glitch`] | label noise, clustered anomalies, outliers, error tables |
//! | [`model`] | logistic / MLP models, SGD with checkpoint trails |
//! | [`influence`] | per-epoch and cumulative TracIn tensors |
//! | [`signals`] | SI, MI, AAI, GD-class rankings |
//! | [`eval`] | known-ratio F1, per-epoch detection, sweeps, leave-one-out oracle |
//! | [`pipeline`] | TOML experiments, in-memory and cached on-disk runs |
//! | [`artifact`] | artifact sidecars and lineage checks |
//!
//! Runnable walkthroughs live in `examples/`:
//!
//! ```text
//! cargo run --release --example inject_glitches
//! cargo run --release --example train_and_checkpoint
//! cargo run --release --example tracin_influence
//! cargo run --release --example signal_comparison
//! cargo run --release --example influence_cancellation
//! cargo run --release --example near_ca_dynamics
//! cargo run --release --example far_ca_accuracy
//! cargo run --release --example ratio_sweep
//! cargo run --release --example loor_agreement
//! cargo run --release --example pipeline_from_config
//! ```

pub mod artifact;
pub mod data;
pub mod error;
pub mod eval;
pub mod glitch;
pub mod influence;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod signals;

pub use data::{Dataset, SampleId, SplitPair};
pub use error::{Error, Result};
pub use glitch::{Corruption, ErrorTable, GlitchSpec, GlitchType};
pub use influence::{tracin, InfluenceMode, InfluenceTensor};
pub use model::{train, Architecture, CheckpointTrail, ModelConfig};
pub use pipeline::{run_experiment, run_pipeline, ExperimentConfig};
pub use signals::{Scope, Signal, SignalRanking};
