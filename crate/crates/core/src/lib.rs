//! Label verification and rectification for subjective annotation corpora.

pub mod corpus;

pub use corpus::{
    AnnotatedExample, Corpus, CorpusError, LabelKind, LabelSet, LabelSpace, SeededSampler, Split,
};
pub mod engine;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod properties;
pub mod stats;
pub mod synth;
