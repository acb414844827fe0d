//! Corpus BLEU over token sequences and paired bootstrap resampling.
//!
//! The score is `100 · BP · exp(mean_n ln p_n)` with clipped n-gram
//! precisions `p_n` aggregated over the corpus and brevity penalty
//! `BP = exp(1 − r/c)` when the hypothesis length `c` does not exceed the
//! reference length `r`. Without smoothing, any zero precision gives 0.
//! Smoothing adds one to the matches and totals of orders 2 and up.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_MAX_N: usize = 4;

/// Sufficient statistics; they add across sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn zero(max_n: usize) -> Self {
        Self {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn sentence<T: Eq + Hash>(hyp: &[T], reference: &[T], max_n: usize) -> Self {
        let mut s = Self::zero(max_n);
        s.hyp_len = hyp.len() as u64;
        s.ref_len = reference.len() as u64;
        for n in 1..=max_n {
            if hyp.len() < n {
                break;
            }
            let mut ref_counts: HashMap<&[T], u64> = HashMap::new();
            for g in reference.windows(n) {
                *ref_counts.entry(g).or_insert(0) += 1;
            }
            let mut hyp_counts: HashMap<&[T], u64> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_insert(0) += 1;
            }
            s.totals[n - 1] = (hyp.len() + 1 - n) as u64;
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, other: &BleuStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self, smooth: bool) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for (n, (&m, &t)) in self.matches.iter().zip(&self.totals).enumerate() {
            let (m, t) = if smooth && n > 0 { (m + 1, t + 1) } else { (m, t) };
            if m == 0 || t == 0 {
                return 0.0;
            }
            log_sum += (m as f64 / t as f64).ln();
        }
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        100.0 * bp * (log_sum / self.matches.len() as f64).exp()
    }
}

fn corpus_stats<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<Vec<BleuStats>> {
    if hyps.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            what: "hypotheses vs references",
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if max_n == 0 {
        return Err(invalid("max_n must be at least 1"));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h, r, max_n))
        .collect())
}

fn total(stats: &[BleuStats], max_n: usize) -> BleuStats {
    let mut t = BleuStats::zero(max_n);
    stats.iter().for_each(|s| t.add(s));
    t
}

pub fn bleu<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<f64> {
    Ok(total(&corpus_stats(hyps, refs, max_n)?, max_n).score(false))
}

pub fn bleu_smoothed<T: Eq + Hash>(hyps: &[Vec<T>], refs: &[Vec<T>], max_n: usize) -> Result<f64> {
    Ok(total(&corpus_stats(hyps, refs, max_n)?, max_n).score(true))
}

/// Whitespace-tokenized convenience wrapper.
pub fn bleu_text(hyps: &[&str], refs: &[&str]) -> Result<f64> {
    let split = |xs: &[&str]| -> Vec<Vec<String>> {
        xs.iter()
            .map(|s| s.split_whitespace().map(str::to_string).collect())
            .collect()
    };
    bleu(&split(hyps), &split(refs), DEFAULT_MAX_N)
}

/// Fraction of resamples (sentence indices drawn with replacement) in which
/// system A's corpus BLEU is less than or equal to system B's. Ties count
/// against A, so identical systems give 1.
pub fn paired_bootstrap<T: Eq + Hash>(
    hyps_a: &[Vec<T>],
    hyps_b: &[Vec<T>],
    refs: &[Vec<T>],
    resamples: usize,
    seed: u64,
) -> Result<f64> {
    let a = corpus_stats(hyps_a, refs, DEFAULT_MAX_N)?;
    let b = corpus_stats(hyps_b, refs, DEFAULT_MAX_N)?;
    paired_bootstrap_stats(&a, &b, resamples, seed)
}

pub fn paired_bootstrap_stats(a: &[BleuStats], b: &[BleuStats], resamples: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || resamples == 0 {
        return Err(Error::Empty("bootstrap input"));
    }
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "bootstrap systems",
            left: a.len(),
            right: b.len(),
        });
    }
    let max_n = a[0].matches.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut not_better = 0usize;
    for _ in 0..resamples {
        let mut sa = BleuStats::zero(max_n);
        let mut sb = BleuStats::zero(max_n);
        for _ in 0..a.len() {
            let i = rng.random_range(0..a.len());
            sa.add(&a[i]);
            sb.add(&b[i]);
        }
        if sa.score(false) <= sb.score(false) {
            not_better += 1;
        }
    }
    Ok(not_better as f64 / resamples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_100() {
        let refs = vec![vec![1, 2, 3, 4, 5], vec![6, 7, 8, 9]];
        assert_eq!(bleu(&refs, &refs, 4).unwrap(), 100.0);
    }

    #[test]
    fn short_hypothesis_fixture() {
        // 4/4, 3/3, 2/2, 1/1 precisions; BP = exp(1 - 5/4)
        let got = bleu_text(&["a b c d"], &["a b c d e"]).unwrap();
        assert!((got - 100.0 * (-0.25f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn clipping() {
        let s = BleuStats::sentence(&[1, 1, 1], &[1, 2, 3], 1);
        assert_eq!((s.matches[0], s.totals[0]), (1, 3));
    }

    #[test]
    fn zero_precision_unless_smoothed() {
        let h = vec![vec![1, 2, 3, 4]];
        let r = vec![vec![1, 3, 2, 4]];
        assert_eq!(bleu(&h, &r, 4).unwrap(), 0.0);
        assert!(bleu_smoothed(&h, &r, 4).unwrap() > 0.0);
    }

    #[test]
    fn errors() {
        let e: Vec<Vec<u32>> = vec![];
        assert!(bleu(&e, &e, 4).is_err());
        assert!(bleu(&[vec![1]], &[vec![1], vec![2]], 4).is_err());
    }

    #[test]
    fn bootstrap_ties_and_dominance() {
        let refs: Vec<Vec<u32>> = (0..30).map(|i| vec![i, i + 1, i + 2, i + 3, i + 4]).collect();
        let worse: Vec<Vec<u32>> = refs.iter().map(|r| vec![r[0], r[1], r[2], 99, 98]).collect();
        assert_eq!(paired_bootstrap(&refs, &refs, &refs, 200, 1).unwrap(), 1.0);
        assert_eq!(paired_bootstrap(&refs, &worse, &refs, 200, 1).unwrap(), 0.0);
        assert_eq!(paired_bootstrap(&worse, &refs, &refs, 200, 1).unwrap(), 1.0);
    }
}
