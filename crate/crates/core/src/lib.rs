pub mod corpus;
pub mod explain;
pub mod embeddings;
pub mod linalg;
pub mod model;
pub mod num;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod similarity;

mod error;

pub use error::{Error, Result};
pub use corpus::{CauseCategory, CorpusSplit, DataFormat, Document};
pub use embeddings::{EmbeddingTable, OovPolicy};
pub use explain::{ExplainMethod, Explanation, IgConfig, LimeConfig};
pub use model::{ArchKind, Architecture, MetricsReport, Model, TrainConfig};
pub use report::{ClassReport, ConsistencyResult, RunManifest, ScoreRecord};
pub use similarity::{Measure, NbowDistribution, ScoreFlags, SimilarityConfig, TransportPlan};

pub const NUM_CLASSES: usize = 6;
