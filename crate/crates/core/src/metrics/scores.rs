use std::hash::Hash;

use crate::metrics::ngram::{clipped_matches, NgramProfile};

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len<T>(c: usize, refs: &[&[T]]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

/// Sentence-level BLEU used as a reward.
///
/// Orders n ≥ 2 with no matches use `1 / (count + 1)`; unigram precision is
/// never smoothed, so a candidate sharing no token with any reference
/// scores exactly 0.
pub fn bleu<T: Eq + Hash>(candidate: &[T], references: &[&[T]], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let cand = NgramProfile::new(candidate, max_n);
    let refs: Vec<_> = references.iter().map(|r| NgramProfile::new(r, max_n)).collect();
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let total = cand.total(n);
        let m = clipped_matches(&cand, &refs, n);
        let p = if m > 0 {
            m as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let r = closest_ref_len(candidate.len(), references);
    (brevity_penalty(candidate.len(), r) * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Unsmoothed corpus BLEU: counts are pooled over all pairs before the
/// geometric mean.
pub fn corpus_bleu<T: Eq + Hash>(pairs: &[(&[T], Vec<&[T]>)], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    let mut matched = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (cand, refs) in pairs {
        let cp = NgramProfile::new(cand, max_n);
        let rp: Vec<_> = refs.iter().map(|r| NgramProfile::new(r, max_n)).collect();
        for n in 1..=max_n {
            matched[n - 1] += clipped_matches(&cp, &rp, n);
            totals[n - 1] += cp.total(n);
        }
        c_len += cand.len();
        r_len += closest_ref_len(cand.len(), refs);
    }
    if c_len == 0 || matched.contains(&0) {
        return 0.0;
    }
    let log_mean = matched
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    (brevity_penalty(c_len, r_len) * log_mean.exp()).clamp(0.0, 1.0)
}

/// Sentence GLEU: n-grams of orders 1..=max_n pooled; `min(m/c, m/r)`
/// against each reference, best reference wins.
pub fn gleu<T: Eq + Hash>(candidate: &[T], references: &[&[T]], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    if candidate.is_empty() {
        return 0.0;
    }
    let cand = NgramProfile::new(candidate, max_n);
    let c: usize = (1..=max_n).map(|n| cand.total(n)).sum();
    references
        .iter()
        .map(|r| {
            let rp = NgramProfile::new(r, max_n);
            let rt: usize = (1..=max_n).map(|n| rp.total(n)).sum();
            if rt == 0 {
                return 0.0;
            }
            let m: usize = (1..=max_n)
                .map(|n| clipped_matches(&cand, std::slice::from_ref(&rp), n))
                .sum();
            (m as f64 / c as f64).min(m as f64 / rt as f64)
        })
        .fold(0.0, f64::max)
}

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure with β = 1.2.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    ((1.0 + b2) * p * r / (r + b2 * p)).clamp(0.0, 1.0)
}

/// ROUGE-L against the best of several references.
pub fn rouge_l_multi<T: Eq>(candidate: &[T], references: &[&[T]]) -> f64 {
    references.iter().map(|r| rouge_l(candidate, r)).fold(0.0, f64::max)
}

fn geometric_precision<T: Eq + Hash>(cand: &[T], reference: &[T], orders: usize) -> f64 {
    if orders == 0 {
        return 0.0;
    }
    let cp = NgramProfile::new(cand, orders);
    let rp = NgramProfile::new(reference, orders);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let total = cp.total(n);
        let m = clipped_matches(&cp, std::slice::from_ref(&rp), n);
        if total == 0 || m == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / total as f64).ln();
    }
    (log_sum / orders as f64).exp().clamp(0.0, 1.0)
}

/// Question-sentence overlap: geometric mean of the question's clipped
/// n-gram precisions against the sentence for n = 1..=max_n.
pub fn qss<T: Eq + Hash>(question: &[T], sentence: &[T], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    geometric_precision(question, sentence, max_n)
}

/// Answer overlap: geometric mean of the predicted answer's clipped n-gram
/// precisions against the pivotal answer, over orders up to
/// `min(max_n, |predicted|, |pivotal|)`.
pub fn anss<T: Eq + Hash>(predicted: &[T], pivotal: &[T], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    let orders = max_n.min(predicted.len()).min(pivotal.len());
    geometric_precision(predicted, pivotal, orders)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let a = t("in what year was it built ?");
        assert_eq!(bleu(&a, &[&a], 4), 1.0);
        assert_eq!(bleu(&t("a b c d"), &[&t("e f g h")], 4), 0.0);
        assert_eq!(bleu::<&str>(&[], &[&a], 4), 0.0);
    }

    #[test]
    fn bleu_smoothed_orders_by_hand() {
        // c = "a b c d", r = "a b x d": p1 = 3/4, p2 = 1/3, p3 = 1/(2+1), p4 = 1/(1+1).
        let got = bleu(&t("a b c d"), &[&t("a b x d")], 4);
        let want = (0.75f64 * (1.0 / 3.0) * (1.0 / 3.0) * 0.5).powf(0.25);
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity() {
        // Single token inside a 4-token reference: all precisions 1, BP = e^(1-4).
        let got = bleu(&t("a"), &[&t("a b c d")], 4);
        assert!((got - (-3.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gleu_by_hand() {
        // "a b c" vs "a b d": grams c = 3+2+1 = 6, r = 6, matches a, b, "a b" = 3.
        assert!((gleu(&t("a b c"), &[&t("a b d")], 4) - 0.5).abs() < 1e-15);
        assert_eq!(gleu(&t("a b"), &[&t("c d")], 4), 0.0);
        assert_eq!(gleu(&t("a b"), &[&t("a b")], 4), 1.0);
    }

    #[test]
    fn rouge_by_hand() {
        let (p, r) = (3.0 / 4.0, 1.0);
        let b2 = 1.44;
        let want = (1.0 + b2) * p * r / (r + b2 * p);
        assert!((rouge_l(&t("a b c d"), &t("a c d")) - want).abs() < 1e-15);
        assert_eq!(rouge_l(&t("x y"), &t("a b")), 0.0);
    }

    #[test]
    fn qss_cases() {
        let s = t("new york city traces its roots to its 1624 founding");
        assert_eq!(qss(&t("traces its roots to"), &s, 4), 1.0);
        assert_eq!(qss(&t("what when"), &s, 4), 0.0);
    }

    #[test]
    fn anss_truncation() {
        assert_eq!(anss(&t("five"), &t("five"), 4), 1.0);
        assert!((anss(&t("five cities"), &t("five"), 4) - 0.5).abs() < 1e-15);
        assert_eq!(anss(&[] as &[&str], &t("five"), 4), 0.0);
    }

    #[test]
    fn corpus_bleu_identity() {
        let a = t("a b c d e");
        let b = t("x y z w");
        let pairs = vec![(&a[..], vec![&a[..]]), (&b[..], vec![&b[..]])];
        assert_eq!(corpus_bleu(&pairs, 4), 1.0);
    }
}
