use std::collections::HashMap;

/// Stand-in count for n-gram orders with no clipped match.
pub const SMOOTHING: f64 = 1e-9;

fn ngram_counts(tokens: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut counts = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram matches and the candidate's n-gram total.
pub fn modified_precision(candidate: &[usize], reference: &[usize], n: usize) -> (usize, usize) {
    let cand = ngram_counts(candidate, n);
    let refc = ngram_counts(reference, n);
    let matched = cand.iter().map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0))).sum();
    (matched, candidate.len().saturating_sub(n - 1))
}

/// Sentence-level BLEU-4 with uniform weights and brevity penalty.
///
/// An order with no clipped match scores `(m + ε) / (t + ε)`; an empty
/// candidate scores 0.
pub fn bleu4(candidate: &[usize], reference: &[usize]) -> f64 {
    if candidate.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = modified_precision(candidate, reference, n);
        let p = if m > 0 {
            m as f64 / t as f64
        } else {
            (m as f64 + SMOOTHING) / (t as f64 + SMOOTHING)
        };
        log_sum += 0.25 * p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * log_sum.exp()
}

/// Mean of sentence scores over `(candidate, reference)` pairs.
pub fn mean_bleu4<'a>(pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>) -> f64 {
    let (mut total, mut count) = (0.0, 0usize);
    for (c, r) in pairs {
        total += bleu4(c, r);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
