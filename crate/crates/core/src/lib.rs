//! Token-free generation of Chinese classical poetry.
//!
//! A byte-level BPE vocabulary is pruned so that no token spans more than
//! one Chinese character; decoding masks the remaining long tokens out of
//! every distribution and, optionally, forces the output onto a form's
//! masked template. Validation, evaluation and a tokenizer probe sit on top.

pub mod bytemap;
pub mod charclass;
pub mod config;
pub mod decoding;
pub mod evalharness;
pub mod forms;
pub mod logitmask;
pub mod par;
pub mod probe;
pub mod prompting;
pub mod validation;
pub mod vocab;

pub use charclass::{CharClass, CjkRanges, TokenClass};
pub use config::Config;
pub use decoding::{Backend, DecodeError, DecodePolicy, Decoder, GenerationRequest, PoemResult, StopReason};
pub use forms::{FormRegistry, MaskedTemplate, PoemForm};
pub use par::Execution;
pub use validation::{ValidationReport, Validator};
pub use vocab::{LongTokenSet, PrunedVocabulary, TokenId, Vocabulary};
