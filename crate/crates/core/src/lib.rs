//! Structured semantic control for multi-turn dialogue generation.
//!
//! A per-turn semantic state is encoded from the user utterance, the domain
//! and the previous turn; a control vector derived from it is fused with the
//! state to seed a recurrent decoder. Training minimizes a weighted sum of
//! generation likelihood, attribute, smoothness, structural and drift terms.
//! Everything runs on a small reverse-mode differentiator over `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod control;
pub mod corpus;
mod error;
pub mod experiment;
pub mod generator;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod rng;
pub mod semantic_state;
pub mod trainer;

pub use autodiff::{grad_check, GradCheckReport, Graph, Tensor, Var};
pub use corpus::{generate_corpus, Corpus, Domain, Episode, Style, Turn, Vocab};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{Dims, ModelParams};
pub use objective::{LossBreakdown, LossWeights};
pub use rng::Rng;
pub use trainer::{evaluate, train, EpochRecord, TrainConfig, TrainOutcome};
