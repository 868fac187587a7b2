//! Curation and pretraining-data preparation for large Arabic corpora.
//!
//! The crate is organised as a chain of stages that can be used on their own
//! or driven end to end by [`pipeline`]:
//!
//! * [`ingest`]: WET / JSONL readers and text normalization into [`ingest::Document`]s
//! * [`filter`]: rule-based quality filtering and original-vs-clean size accounting
//! * [`dedup`]: exact and MinHash-LSH near-duplicate removal
//! * [`tokenizer`]: byte-pair subword vocabulary training, encoding and decoding
//! * [`span`]: span-corruption example generation and packing
//! * [`plan`]: parallelism arithmetic, learning-rate schedule and fine-tuning grid
//! * [`eval`]: task metrics, benchmark averaging and few-shot sampling
//!
//! [`synth`] generates deterministic pseudo-Arabic corpora with planted
//! duplicates, used by the tests and the benchmark fixture.

pub mod dedup;
pub mod error;
pub mod eval;
pub mod filter;
pub mod ingest;
pub mod pipeline;
pub mod plan;
pub mod span;
pub mod synth;
pub mod tokenizer;

mod util;

pub use error::{Error, Result};
pub use util::{Fingerprint, FINGERPRINT_ALGORITHM};
