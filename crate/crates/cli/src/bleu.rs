//! Corpus-level BLEU-4: clipped n-gram counts aggregated over the corpus
//! before taking precisions, geometric mean over orders, and the brevity
//! penalty. Case-sensitive, whitespace-tokenized, single reference, no
//! smoothing.

use std::collections::HashMap;

use thiserror::Error;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("hypothesis count {hyps} does not match reference count {refs}")]
    CountMismatch { hyps: usize, refs: usize },
    #[error("cannot score an empty corpus")]
    Empty,
}

/// Aggregated corpus statistics plus the final score.
#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// 0..100.
    pub bleu: f64,
    /// Per-order precision, 0..1; zero when no n-grams of that order exist.
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub matched: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

impl BleuReport {
    pub fn length_ratio(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.hyp_len as f64 / self.ref_len as f64
        }
    }
}

fn tokens(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> HashMap<Vec<&'a str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Accumulate clipped matches and totals for one sentence pair.
fn accumulate(hyp: &str, reference: &str, matched: &mut [u64], total: &mut [u64]) -> (u64, u64) {
    let hyp_toks = tokens(hyp);
    let ref_toks = tokens(reference);
    for n in 1..=MAX_ORDER {
        let hyp_grams = ngram_counts(&hyp_toks, n);
        let ref_grams = ngram_counts(&ref_toks, n);
        for (gram, count) in &hyp_grams {
            let clip = ref_grams.get(gram).copied().unwrap_or(0);
            matched[n - 1] += (*count).min(clip);
        }
        total[n - 1] += hyp_toks.len().saturating_sub(n - 1) as u64;
    }
    (hyp_toks.len() as u64, ref_toks.len() as u64)
}

/// Compute the report from pre-aggregated counts; exposed so bucketed
/// scores can be recombined exactly.
pub fn report_from_counts(
    matched: [u64; MAX_ORDER],
    total: [u64; MAX_ORDER],
    hyp_len: u64,
    ref_len: u64,
) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut orders = 0;
    let mut any_zero = false;
    for n in 0..MAX_ORDER {
        if total[n] == 0 {
            // No n-grams of this order in the whole corpus (all sentences
            // shorter than n); skip the order rather than zeroing BLEU, so
            // identical corpora still score 100.
            continue;
        }
        precisions[n] = matched[n] as f64 / total[n] as f64;
        if matched[n] == 0 {
            any_zero = true;
        } else {
            log_sum += precisions[n].ln();
        }
        orders += 1;
    }
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if orders == 0 || any_zero {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / orders as f64).exp()
    };
    BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        matched,
        total,
    }
}

/// Corpus BLEU of detokenized hypothesis lines against single references.
pub fn bleu(hypotheses: &[String], references: &[String]) -> Result<BleuReport, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::CountMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut matched = [0u64; MAX_ORDER];
    let mut total = [0u64; MAX_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (h, r) in hypotheses.iter().zip(references) {
        let (hl, rl) = accumulate(h, r, &mut matched, &mut total);
        hyp_len += hl;
        ref_len += rl;
    }
    Ok(report_from_counts(matched, total, hyp_len, ref_len))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_corpora_score_one_hundred() {
        let corpus = lines(&["the cat sat", "a much longer sentence with many words here", "x"]);
        let report = bleu(&corpus, &corpus).unwrap();
        assert_eq!(report.bleu, 100.0);
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn clipping_limits_repeated_unigrams() {
        let report = bleu(&lines(&["the the the the"]), &lines(&["the cat sat down"])).unwrap();
        assert!((report.precisions[0] - 0.25).abs() < 1e-12);
        assert_eq!(report.matched[0], 1);
        assert_eq!(report.total[0], 4);
        assert_eq!(report.bleu, 0.0); // no bigram matches
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(bleu(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(
            bleu(&lines(&["a"]), &lines(&["a", "b"])),
            Err(EvalError::CountMismatch { hyps: 1, refs: 2 })
        ));
    }

    #[test]
    fn brevity_penalty_fires_on_short_hypotheses() {
        let report = bleu(&lines(&["the cat"]), &lines(&["the cat sat down"])).unwrap();
        assert!((report.brevity_penalty - (1.0f64 - 4.0 / 2.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn order_is_irrelevant_and_duplication_is_neutral() {
        let hyps = lines(&["the cat sat down today", "b c d e f", "f g h i j"]);
        let refs = lines(&["the cat sat down here", "b c d x f", "f g h i j"]);
        let base = bleu(&hyps, &refs).unwrap();

        let mut hyps_perm = hyps.clone();
        let mut refs_perm = refs.clone();
        hyps_perm.rotate_left(1);
        refs_perm.rotate_left(1);
        assert_eq!(bleu(&hyps_perm, &refs_perm).unwrap(), base);

        let hyps_dup: Vec<String> = hyps.iter().chain(&hyps).cloned().collect();
        let refs_dup: Vec<String> = refs.iter().chain(&refs).cloned().collect();
        let doubled = bleu(&hyps_dup, &refs_dup).unwrap();
        assert!((doubled.bleu - base.bleu).abs() < 1e-9);
    }

    #[test]
    fn one_token_identical_corpora_still_score_one_hundred() {
        let corpus = lines(&["hi", "yo"]);
        assert_eq!(bleu(&corpus, &corpus).unwrap().bleu, 100.0);
    }
}
