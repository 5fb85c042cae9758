use std::collections::HashMap;
use std::hash::Hash;

/// Multiset of n-grams per order 1..=max_n.
#[derive(Clone, Debug)]
pub struct NgramProfile<'a, T> {
    orders: Vec<HashMap<&'a [T], usize>>,
    len: usize,
}

impl<'a, T: Eq + Hash> NgramProfile<'a, T> {
    pub fn new(tokens: &'a [T], max_n: usize) -> Self {
        let orders = (1..=max_n)
            .map(|n| {
                let mut m: HashMap<&[T], usize> = HashMap::new();
                if tokens.len() >= n {
                    for w in tokens.windows(n) {
                        *m.entry(w).or_default() += 1;
                    }
                }
                m
            })
            .collect();
        NgramProfile {
            orders,
            len: tokens.len(),
        }
    }

    pub fn max_n(&self) -> usize {
        self.orders.len()
    }

    /// Count of `gram` (its order is its length).
    pub fn count(&self, gram: &[T]) -> usize {
        self.orders
            .get(gram.len().wrapping_sub(1))
            .and_then(|m| m.get(gram).copied())
            .unwrap_or(0)
    }

    /// Number of n-gram occurrences of order `n`: `max(0, len - n + 1)`.
    pub fn total(&self, n: usize) -> usize {
        (self.len + 1).saturating_sub(n)
    }

    pub fn grams(&self, n: usize) -> impl Iterator<Item = (&&'a [T], &usize)> {
        self.orders[n - 1].iter()
    }
}

/// Candidate n-grams of order `n` matched against the references, each
/// clipped by its largest count in any single reference.
pub fn clipped_matches<T: Eq + Hash>(cand: &NgramProfile<T>, refs: &[NgramProfile<T>], n: usize) -> usize {
    cand.grams(n)
        .map(|(g, &c)| {
            let cap = refs.iter().map(|r| r.count(g)).max().unwrap_or(0);
            c.min(cap)
        })
        .sum()
}

/// Clipped n-gram precision; 0 when the candidate has no n-grams of order `n`.
pub fn precision_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    let c = NgramProfile::new(candidate, n);
    let total = c.total(n);
    if total == 0 {
        return 0.0;
    }
    let r = NgramProfile::new(reference, n);
    clipped_matches(&c, std::slice::from_ref(&r), n) as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn precision_cases() {
        assert_eq!(precision_n(&t("a b c d"), &t("a b c d"), 3), 1.0);
        assert_eq!(precision_n(&t("a b"), &t("c d"), 1), 0.0);
        assert!((precision_n(&t("a a b"), &t("a b"), 1) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_n(&t("a"), &t("a"), 2), 0.0);
    }

    #[test]
    fn profile_totals() {
        let toks = t("a b a b");
        let p = NgramProfile::new(&toks, 4);
        assert_eq!(p.total(1), 4);
        assert_eq!(p.total(4), 1);
        assert_eq!(p.total(5), 0);
        assert_eq!(p.count(&["a", "b"]), 2);
        assert_eq!(p.count(&["b", "a"]), 1);
    }
}
