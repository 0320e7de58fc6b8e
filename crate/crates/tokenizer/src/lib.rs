//! Multi-stage pretokenizer and a small-scale byte-level BPE.
//!
//! Text is segmented in a fixed order: ASCII digit runs are isolated and cut into
//! place-aligned groups, runs of whitespace-free scripts are isolated, and the rest is
//! split into words, contractions, symbol runs and whitespace. BPE merges never cross
//! pretoken boundaries, and every byte has its own token, so any input round-trips.

mod bpe;
mod digits;
mod error;
mod metrics;
mod pipeline;
mod scripts;
mod words;

pub use bpe::{train_bpe, BpeModel, BpeTrainer, TokenId, FORMAT, FORMAT_VERSION};
pub use digits::{chunk_digits, digit_group_ranges, DigitGroups, DIGIT_SEGMENT_CAP};
pub use error::{Result, TokenizerError};
pub use metrics::{efficiency_metrics, Efficiency};
pub use pipeline::{pretokenize, PretokenPipeline, Pretokens};
pub use scripts::{isolate_scripts, ScriptRange, ScriptRegion, ScriptTable};
pub use words::{split_words, Pretoken, PretokenKind};
