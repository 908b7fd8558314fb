//! Core library for readability-controlled text rewriting.
//!
//! The crate is organised around the pipeline a curator runs:
//!
//! - [`textproc`]: tokenization, sentence segmentation, word-frequency tables.
//! - [`readability`]: a calibratable Lexile-style scorer built on sentence
//!   length and word frequency.
//! - [`corpus`]: leveled-text corpora, set-wise splitting, pair permutation.
//! - [`prompting`]: few-shot exemplar selection and prompt rendering.
//! - [`providers`]: chat-completion and embedding clients plus a scripted mock.
//! - [`metrics`]: per-pair evaluation and run-level aggregation.
//! - [`alignment`]: monotone sentence alignment, edit dispersion, merging.
//! - [`harness`]: benchmark runs, the response bank, scatter exports.

pub mod alignment;
pub mod corpus;
pub mod harness;
pub mod metrics;
pub mod prompting;
pub mod providers;
pub mod readability;
pub mod rng;
pub mod textproc;

mod digest;

pub use digest::sha256_hex;
