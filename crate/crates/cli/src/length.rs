//! Length-based analyses: per-reference-length-bucket BLEU and the
//! histogram of hypothesis-minus-reference length differences.

use std::collections::BTreeMap;

use crate::bleu::{bleu, BleuReport, EvalError};

/// Reference-length range `[lo, hi]`; `hi == None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketRange {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl BucketRange {
    pub fn contains(&self, len: usize) -> bool {
        len >= self.lo && self.hi.map(|hi| len <= hi).unwrap_or(true)
    }

    pub fn label(&self) -> String {
        match self.hi {
            Some(hi) => format!("{}-{}", self.lo, hi),
            None => format!("{}+", self.lo),
        }
    }
}

/// Ranges from upper edges, e.g. `[10, 20]` gives 1-10, 11-20, 21+.
pub fn buckets_from_edges(edges: &[usize]) -> Vec<BucketRange> {
    let mut out = Vec::with_capacity(edges.len() + 1);
    let mut lo = 1;
    for &hi in edges {
        out.push(BucketRange { lo, hi: Some(hi) });
        lo = hi + 1;
    }
    out.push(BucketRange { lo, hi: None });
    out
}

#[derive(Debug, Clone)]
pub struct LengthBucket {
    pub range: BucketRange,
    pub sentences: usize,
    /// None for empty buckets.
    pub report: Option<BleuReport>,
}

/// Corpus BLEU within each reference-length bucket.
pub fn bleu_by_length(
    hypotheses: &[String],
    references: &[String],
    edges: &[usize],
) -> Result<Vec<LengthBucket>, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::CountMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Empty);
    }
    buckets_from_edges(edges)
        .into_iter()
        .map(|range| {
            let mut hyp_bucket = Vec::new();
            let mut ref_bucket = Vec::new();
            for (h, r) in hypotheses.iter().zip(references) {
                if range.contains(r.split_whitespace().count()) {
                    hyp_bucket.push(h.clone());
                    ref_bucket.push(r.clone());
                }
            }
            let report = if hyp_bucket.is_empty() {
                None
            } else {
                Some(bleu(&hyp_bucket, &ref_bucket)?)
            };
            Ok(LengthBucket {
                range,
                sentences: hyp_bucket.len(),
                report,
            })
        })
        .collect()
}

/// Histogram of `len(hyp) - len(ref)` in whitespace tokens.
pub fn length_diff_histogram(
    hypotheses: &[String],
    references: &[String],
) -> Result<BTreeMap<i64, usize>, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::CountMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut histogram = BTreeMap::new();
    for (h, r) in hypotheses.iter().zip(references) {
        let diff = h.split_whitespace().count() as i64 - r.split_whitespace().count() as i64;
        *histogram.entry(diff).or_insert(0) += 1;
    }
    Ok(histogram)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bleu::report_from_counts;

    fn lines(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_unbounded_bucket_equals_plain_bleu() {
        let hyps = lines(&["the cat sat down", "a b c d"]);
        let refs = lines(&["the cat sat here", "a b c e"]);
        let whole = bleu(&hyps, &refs).unwrap();
        let buckets = bleu_by_length(&hyps, &refs, &[]).unwrap();
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[0].report.as_ref().unwrap(), &whole);
    }

    #[test]
    fn identical_systems_gain_zero_everywhere() {
        let hyps = lines(&["one two", "three four five six seven eight nine ten eleven"]);
        let refs = lines(&["one two", "three four five six seven eight nine ten twelve"]);
        let a = bleu_by_length(&hyps, &refs, &[5]).unwrap();
        let b = bleu_by_length(&hyps, &refs, &[5]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (&x.report, &y.report) {
                (Some(rx), Some(ry)) => assert_eq!(rx.bleu, ry.bleu),
                (None, None) => {}
                _ => panic!("bucket mismatch"),
            }
        }
    }

    #[test]
    fn bucket_assignment_matches_a_brute_force_filter() {
        let hyps: Vec<String> = (1..=30).map(|n| vec!["w"; n].join(" ")).collect();
        let refs: Vec<String> = (1..=30).map(|n| vec!["w"; 31 - n].join(" ")).collect();
        let edges = [10, 20];
        let buckets = bleu_by_length(&hyps, &refs, &edges).unwrap();
        for bucket in &buckets {
            let expected: Vec<usize> = refs
                .iter()
                .enumerate()
                .filter(|(_, r)| bucket.range.contains(r.split_whitespace().count()))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(bucket.sentences, expected.len(), "{}", bucket.range.label());
        }
        let total: usize = buckets.iter().map(|b| b.sentences).sum();
        assert_eq!(total, 30);
    }

    #[test]
    fn bucket_counts_recombine_to_the_global_report() {
        let hyps = lines(&[
            "a b c d e",
            "the quick brown fox jumps over the lazy dog",
            "one",
            "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda mu",
        ]);
        let refs = lines(&[
            "a b c x e",
            "the quick brown fox leaps over the lazy dog",
            "one",
            "alpha beta gamma delta epsilon zeta eta theta iota kappa lambda nu",
        ]);
        let whole = bleu(&hyps, &refs).unwrap();
        let buckets = bleu_by_length(&hyps, &refs, &[5, 10]).unwrap();
        let mut matched = [0u64; 4];
        let mut total = [0u64; 4];
        let mut hyp_len = 0;
        let mut ref_len = 0;
        for bucket in buckets.iter().filter_map(|b| b.report.as_ref()) {
            for n in 0..4 {
                matched[n] += bucket.matched[n];
                total[n] += bucket.total[n];
            }
            hyp_len += bucket.hyp_len;
            ref_len += bucket.ref_len;
        }
        let recombined = report_from_counts(matched, total, hyp_len, ref_len);
        assert_eq!(recombined, whole);
    }

    #[test]
    fn histogram_masses_identical_corpora_at_zero() {
        let corpus = lines(&["a b", "c d e"]);
        let h = length_diff_histogram(&corpus, &corpus).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h[&0], 2);
    }

    #[test]
    fn histogram_counts_a_two_token_surplus() {
        let h = length_diff_histogram(&lines(&["a b c d"]), &lines(&["a b"])).unwrap();
        assert_eq!(h[&2], 1);
    }

    #[test]
    fn histogram_counts_sum_to_corpus_size() {
        let hyps: Vec<String> = (0..50)
            .map(|i| vec!["w"; 1 + (i * 7) % 13].join(" "))
            .collect();
        let refs: Vec<String> = (0..50)
            .map(|i| vec!["w"; 1 + (i * 5) % 11].join(" "))
            .collect();
        let h = length_diff_histogram(&hyps, &refs).unwrap();
        let total: usize = h.values().sum();
        assert_eq!(total, 50);
    }
}
