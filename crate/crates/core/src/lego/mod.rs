//! LEGO sequences: chains of clauses `a_t = a_{t-1} ∘ x_t` over a finite
//! group, grouped into continual-learning experiences.

mod dataset;
mod experience;
mod sequence;
mod tokenize;
mod vocab;

pub use dataset::{generate_dataset, Dataset, Example, DATASET_MAGIC};
pub use experience::{
    make_compositional_experiences, make_compositional_experiences_with, make_flipflop_experiences,
    make_full_experience, make_incremental_experiences, ExperienceSpec,
};
pub use sequence::{oracle_solve, sample_sequence, shuffle_presentation, Clause, ClauseRhs, LegoSequence};
pub use tokenize::{detokenize, tokenize, TokenizedExample};
pub use vocab::{VocabSpec, DEFAULT_SYMBOLS};

use thiserror::Error;

use crate::groups::GroupError;

#[derive(Debug, Error)]
pub enum LegoError {
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("sequence length {length} needs more than {available} symbols")]
    InsufficientSymbols { length: usize, available: usize },
    #[error("sequence length must be at least 1")]
    EmptySequence,
    #[error("invalid experience `{name}`: {reason}")]
    InvalidExperience { name: String, reason: String },
    #[error("experiences require the canonical D3 group, got {0}")]
    UnsupportedGroup(String),
    #[error("cannot construct experiences: {0}")]
    Construction(String),
    #[error("malformed sequence: {0}")]
    Malformed(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {0} out of vocabulary")]
    UnknownTokenId(u32),
    #[error("dataset {path}: {reason}")]
    DatasetFormat { path: String, reason: String },
    #[error("dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
