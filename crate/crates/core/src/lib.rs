//! Symbolic regression by neuroevolution.
//!
//! Random equations and their sampled data ([`datagen`]) train a
//! data-to-equation network ([`model`], built on the autodiff engine in
//! [`tensor`]) by gradient descent on token cross-entropy ([`pretrain`]).
//! Populations of pretrained networks are then evolved against two
//! objectives at once, cross-entropy against the target tokens and mean
//! squared error of the predicted equation's values ([`evolve`],
//! [`metrics`]).

pub mod datagen;
pub mod evolve;
pub mod expr;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod seed;
pub mod stats;
pub mod tensor;

pub use datagen::{Corpus, CorpusKind, DataEquationPair, GenParams};
pub use evolve::{EvolveConfig, Individual, ParetoFront, Population};
pub use expr::{EvalResult, Expression, Primitive};
pub use metrics::FitnessRecord;
pub use model::{ModelConfig, NetworkGenome};
pub use pretrain::PretrainConfig;
pub use tensor::{Tape, Tensor};
