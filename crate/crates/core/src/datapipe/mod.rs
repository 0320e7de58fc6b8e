//! Sequence packing: sequential concatenation, the random sequential document
//! buffer, BatchHet, and a synthetic lognormal corpus for controlled comparisons.

mod bench;
mod corpus;
mod metrics;
mod pack;
mod rsdb;

pub use bench::{
    packing_comparison, BatchReport, Packer, PackerSummary, PackingParams, PackingReport,
    PackingSummary,
};
pub use corpus::{
    read_corpus_jsonl, synth_corpus, write_corpus_jsonl, CorpusParams, Document, SynthCorpus,
};
pub use metrics::{batch_het, bootstrap_ratio_ci, kurtosis, ProxyLoss};
pub use pack::{sequential_pack, SequenceBuffer, SequentialPacker, Span};
pub use rsdb::{Resident, Rsdb, ShardedRsdb};
