//! Brute-force reference implementations of the text metrics.
//!
//! Everything here works on plain windows and linear scans so it shares no
//! code with the library versions.

#![allow(dead_code)]

pub type Tok = u32;

fn windows(seq: &[Tok], n: usize) -> Vec<&[Tok]> {
    if seq.len() < n {
        return Vec::new();
    }
    (0..=seq.len() - n).map(|i| &seq[i..i + n]).collect()
}

fn occurrences(list: &[&[Tok]], g: &[Tok]) -> usize {
    list.iter().filter(|w| **w == g).count()
}

/// Clipped matches of order `n`: each distinct candidate gram counts up to
/// its largest count in any single reference.
pub fn clipped(cand: &[Tok], refs: &[&[Tok]], n: usize) -> usize {
    let cw = windows(cand, n);
    let rws: Vec<Vec<&[Tok]>> = refs.iter().map(|r| windows(r, n)).collect();
    let mut seen: Vec<&[Tok]> = Vec::new();
    let mut total = 0;
    for g in &cw {
        if seen.contains(g) {
            continue;
        }
        seen.push(g);
        let c = occurrences(&cw, g);
        let cap = rws.iter().map(|rw| occurrences(rw, g)).max().unwrap_or(0);
        total += c.min(cap);
    }
    total
}

fn grams(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

pub fn bleu(cand: &[Tok], refs: &[&[Tok]]) -> f64 {
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut prod = 1.0;
    for n in 1..=4 {
        let total = grams(cand.len(), n);
        let m = clipped(cand, refs, n);
        let p = if m > 0 {
            m as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        prod *= p;
    }
    let c = cand.len();
    let mut r = refs[0].len();
    for x in refs {
        let (d, best) = (x.len().abs_diff(c), r.abs_diff(c));
        if d < best || (d == best && x.len() < r) {
            r = x.len();
        }
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * prod.powf(0.25)
}

pub fn gleu(cand: &[Tok], refs: &[&[Tok]]) -> f64 {
    if cand.is_empty() {
        return 0.0;
    }
    let c: usize = (1..=4).map(|n| grams(cand.len(), n)).sum();
    let mut best = 0.0f64;
    for r in refs {
        let rt: usize = (1..=4).map(|n| grams(r.len(), n)).sum();
        if rt == 0 {
            continue;
        }
        let m: usize = (1..=4).map(|n| clipped(cand, &[r], n)).sum();
        let s = (m as f64 / c as f64).min(m as f64 / rt as f64);
        best = best.max(s);
    }
    best
}

fn is_subsequence(needle: &[Tok], hay: &[Tok]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// Longest common subsequence by enumerating every subset of `a`.
pub fn lcs(a: &[Tok], b: &[Tok]) -> usize {
    assert!(a.len() <= 20);
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<Tok> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = k;
        }
    }
    best
}

pub fn rouge_l(cand: &[Tok], reference: &[Tok]) -> f64 {
    let l = lcs(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = 1.2f64 * 1.2;
    (1.0 + b2) * p * r / (r + b2 * p)
}

fn geometric(cand: &[Tok], reference: &[Tok], orders: usize) -> f64 {
    if orders == 0 {
        return 0.0;
    }
    let mut prod = 1.0;
    for n in 1..=orders {
        let total = grams(cand.len(), n);
        let m = clipped(cand, &[reference], n);
        if total == 0 || m == 0 {
            return 0.0;
        }
        prod *= m as f64 / total as f64;
    }
    prod.powf(1.0 / orders as f64)
}

pub fn qss(question: &[Tok], sentence: &[Tok]) -> f64 {
    geometric(question, sentence, 4)
}

pub fn anss(pred: &[Tok], pivot: &[Tok]) -> f64 {
    geometric(pred, pivot, 4.min(pred.len()).min(pivot.len()))
}
