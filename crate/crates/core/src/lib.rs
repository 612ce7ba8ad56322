//! Adapting a pretrained BPE merge list to a target corpus under a fixed
//! merge budget, plus the baselines, metrics and file formats around it.

pub mod adaptation;
pub mod baselines;
pub mod engine;
pub mod error;
pub mod fixtures;
pub mod freq_index;
pub mod io;
pub mod merge_model;
pub mod metrics;
pub mod pretokenize;
pub mod selftest;

pub use adaptation::{adapt, AdaptConfig, AdaptMode, AdaptationResult, StopReason, SwapRecord};
pub use baselines::{first_k, first_k_positive, top_k, Method};
pub use engine::{
    detokenize, reference_tokenize, tokenize_corpus, tokenize_word, Encoder, TokenizedCorpus,
};
pub use error::{Error, Result};
pub use io::{load_tokenizer, AdaptedTokenizerFile, LoadedTokenizer, TokenMaskFile};
pub use merge_model::{
    build_merge_table, validate_properness, MergeKind, MergeRule, MergeTable, SymbolId,
};
pub use metrics::{evaluate, sweep, EvalReport, SweepRecord};
pub use pretokenize::{PretokenizerSpec, WordHistogram};
