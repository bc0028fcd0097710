//! Summarizes per-entity network activity logs into topical metric grids and
//! predicts each entity's next-period grid with temporal and spatial
//! recurrent architectures.
//!
//! The pipeline runs: [`loglab`] (parse, bucket, synthesize) → [`topics`]
//! (LDA) → [`metrics`] (topical volume) → [`layout`] (PCA + split-diffuse
//! grid) → [`models`] built on [`neurons`] → [`harness`] (splits, training,
//! reports).

pub mod error;
pub mod harness;
pub mod io;
pub mod layout;
pub mod loglab;
pub mod metrics;
pub mod models;
pub mod neurons;
pub mod topics;

pub use error::{Error, Result};
pub use layout::{GridAssignment, GridSpec, MetricFrame, TopicEmbedding2D};
pub use loglab::{EntityPeriodBundle, GroundTruth, LogEntry, PeriodSpec, SynthConfig};
pub use metrics::{MetricSeries, TopicalMetricVector};
pub use models::{Architecture, Model, ModelConfig, SequenceSample};
pub use topics::{ActivityRelevance, LdaConfig, LdaModel, Vocabulary};
