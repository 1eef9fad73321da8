//! Corpus preparation toolkit for multilingual machine translation.
//!
//! The crate is organised as one module per pipeline concern:
//!
//! * [`corpus`]: record types, the bitext/monolingual line formats, drop reasons.
//! * [`textnorm`]: diacritic stripping, number extraction, parenthesis and
//!   terminal-punctuation analysis.
//! * [`mdl`]: minimum-description-length repeat-pattern detection.
//! * [`rules`]: heuristic cleaning rules, score thresholds, language-id filtering.
//! * [`dedup`]: Bloom-filter deduplication and inconsistent-translation removal.
//! * [`vocab`]: unigram Viterbi segmentation and vocabulary merging.
//! * [`shuffle`]: streaming multi-pointer shuffle and static external shuffle.
//! * [`ckpt`]: checkpoint container format and checkpoint averaging.
//! * [`routing`]: target-language tagging and pivot route planning.
//! * [`pipeline`]: config-driven orchestration with per-stage statistics.

pub mod ckpt;
pub mod corpus;
pub mod dedup;
pub mod mdl;
pub mod pipeline;
pub mod routing;
pub mod rules;
pub mod shuffle;
pub mod textnorm;
pub mod vocab;

pub use corpus::{ColumnSpec, DropReason, FilterOutcome, LangCode, MonoRecord, SentencePair};
pub use mdl::{MdlParams, MdlResult, Segmentation};
