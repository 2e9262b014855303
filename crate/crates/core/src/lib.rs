//! Relation extraction as summarization.
//!
//! An instance's sentence is rewritten into a summarization source that highlights the
//! subject and object, and every candidate relation is verbalized as a short summary
//! from a template such as `{subj} was born in the city {obj}`. A seq2seq scorer then
//! ranks the candidates: the filled templates are merged into a token trie and each
//! relation's score is the product of next-token probabilities at the trie's branching
//! nodes, so shared prefixes are scored once. Type constraints prune the trie, and a
//! calibrated threshold on the NA score decides when to abstain.
//!
//! The numeric core is generic over [`Real`] (`f32` or `f64`); the aliases below fix it to
//! `f64`, which is what the CLI uses.

pub mod cli;
pub mod convert;
pub mod corpus;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod num;
pub mod scoring;
pub mod trie;

pub use error::{Error, Result};
pub use num::Real;

pub type ScoreVectorF64 = scoring::ScoreVector<f64>;
pub type ScoreVectorF32 = scoring::ScoreVector<f32>;
pub type CalibrationModelF64 = inference::CalibrationModel<f64>;
pub type CalibrationArtifactF64 = inference::CalibrationArtifact<f64>;
pub type PredictionF64 = inference::Prediction<f64>;
pub type EvalReportF64 = metrics::EvalReport<f64>;
