//! Sentence classification with a one-layer convolutional network over word
//! vectors.
//!
//! A sentence is a sequence of word ids looked up in one or two embedding
//! channels. Filters of several widths slide over the sentence, each
//! feature map is max-pooled to a single value, and the pooled features go
//! through dropout into a softmax layer. Training uses Adadelta with a
//! max-norm constraint on the output rows and early stopping on a dev set.
//!
//! The modules follow the data flow:
//!
//! - [`corpus`]: tokenization, vocabularies, padding, fold plans
//! - [`embed`]: word2vec files, unknown-word initialization, channels
//! - [`net`]: forward and backward passes
//! - [`optim`]: Adadelta, norm constraint, epochs, early stopping
//! - [`eval`]: accuracy, cross-validation, nearest neighbors
//! - [`checkpoint`]: on-disk models

pub mod checkpoint;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod net;
pub mod optim;
pub mod pipeline;
pub mod rng;

pub use checkpoint::Classifier;
pub use corpus::{Dataset, Example, Vocabulary};
pub use embed::{EmbeddingChannel, Variant};
pub use net::{Activation, ModelParams};
pub use optim::TrainConfig;

/// Any failure of the library, grouped by where it came from.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Embed(#[from] embed::EmbedError),
    #[error(transparent)]
    Net(#[from] net::NetError),
    #[error(transparent)]
    Optim(#[from] optim::OptimError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
