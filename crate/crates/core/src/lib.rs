//! Text-anchored prototypical classification over joint audio-text
//! embedding spaces.
//!
//! Text prompt embeddings act as anchors: each anchor retrieves its `k`
//! nearest audio embeddings, and the normalized centroid of that cluster
//! becomes the class prototype. Unseen audio is then scored by cosine
//! similarity against the prototypes (softmax/argmax for single-label data,
//! per-class sigmoid for multi-label data). Zero-shot and label-supervised
//! baselines, metrics, and a cross-validation harness are included.
//!
//! Everything operates on precomputed embeddings stored in the EMBT format
//! (see [`store`]).

pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod prompt;
pub mod prototype;
pub mod search;
pub mod store;
pub mod synth;
pub mod vector;

pub use classifier::{Head, ScoreMatrix};
pub use config::{PipelineConfig, PoolPolicy, PrototypeSource, RunConfig};
pub use error::{Error, Result};
pub use harness::{EvalReport, Metric};
pub use prompt::{CaseMode, PromptTemplate};
pub use prototype::{PrototypeSet, DEFAULT_K};
pub use search::Neighbor;
pub use store::{EmbeddingTable, RowMeta};
pub use synth::{SynthData, SynthSpec};
