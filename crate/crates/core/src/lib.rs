//! Collaborative ranking from profile co-occurrence embeddings.
//!
//! The pipeline has two phases. The first phase counts how often pairs of
//! entities (items, or users) appear together in rating profiles, smooths the
//! counts, and factorizes the resulting symmetric matrix into target/context
//! vectors. Vectors for the other entity type are then aggregated from the
//! rating profiles. The second phase trains a small feed-forward network on
//! concatenated (user, item) vectors to predict interest levels, and ranks
//! each user's held-out items by the predicted probability. Ranking quality
//! is reported as NDCG@n means and standard deviations over repeated seeded
//! train/test splits.
//!
//! Every stage is deterministic for a fixed seed; a single run-level seed
//! derives all stage seeds.

pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod matrix;
pub mod mlp;
pub mod pco;
pub mod pipeline;
pub mod profiles;
pub mod ranking;
pub mod seed;

pub use config::RunConfig;
pub use dataset::{Dataset, RatingRecord, SplitConfig, TrainTestSplit};
pub use embedding::{EmbeddingConfig, EmbeddingModel, RepresentationMode, TrainingTrace};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use mlp::{MlpConfig, MlpModel, TrainingExample};
pub use pco::{Basis, PcoMatrix};
pub use profiles::{Aggregation, EntityVectors};
pub use ranking::{EvalReport, Ranking};
