//! Evaluation library behind the `treenmt` binary: corpus BLEU and the
//! length-based analyses.

pub mod bleu;
pub mod length;

pub use bleu::{bleu as corpus_bleu, report_from_counts, BleuReport, EvalError};
pub use length::{bleu_by_length, buckets_from_edges, length_diff_histogram, BucketRange, LengthBucket};
