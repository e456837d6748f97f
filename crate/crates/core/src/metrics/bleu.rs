//! BLEU-1..4 with clipped n-gram precision and brevity penalty, per sentence
//! and pooled over a corpus. No smoothing.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts<'a, S: AsRef<str>>(tokens: &'a [S], n: usize) -> HashMap<Vec<&'a str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(AsRef::as_ref).collect())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram total for one order.
fn clipped<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in references {
        for (g, c) in ngram_counts(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Reference length closest to `c`; ties pick the shorter.
fn closest_ref_len<S>(c: usize, references: &[Vec<S>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .expect("references non-empty")
}

fn check(references_empty: bool, n: usize) -> Result<()> {
    if !(1..=4).contains(&n) {
        return Err(Error::param(format!("BLEU order must be 1..=4, got {n}")));
    }
    if references_empty {
        return Err(Error::Empty("references".into()));
    }
    Ok(())
}

fn combine(matched: &[usize], totals: &[usize], c: usize, r: usize) -> f64 {
    if c == 0 || matched.iter().zip(totals).any(|(&m, &t)| m == 0 || t == 0) {
        return 0.0;
    }
    let n = matched.len() as f64;
    let log_mean: f64 = matched
        .iter()
        .zip(totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n;
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * log_mean.exp()
}

/// Sentence BLEU-`n` with uniform weights.
pub fn bleu<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], n: usize) -> Result<f64> {
    check(references.is_empty(), n)?;
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let (matched, totals): (Vec<_>, Vec<_>) = (1..=n).map(|k| clipped(candidate, references, k)).unzip();
    Ok(combine(&matched, &totals, candidate.len(), closest_ref_len(candidate.len(), references)))
}

/// Corpus BLEU-`n`: clipped counts, candidate totals and lengths summed over
/// all sentences before the geometric mean and brevity penalty.
pub fn corpus_bleu<S: AsRef<str>>(pairs: &[(Vec<S>, Vec<Vec<S>>)], n: usize) -> Result<f64> {
    check(pairs.iter().any(|(_, r)| r.is_empty()) || pairs.is_empty(), n)?;
    let mut matched = vec![0; n];
    let mut totals = vec![0; n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        for k in 1..=n {
            let (m, t) = clipped(cand, refs, k);
            matched[k - 1] += m;
            totals[k - 1] += t;
        }
        c += cand.len();
        r += closest_ref_len(cand.len(), refs);
    }
    Ok(combine(&matched, &totals, c, r))
}
