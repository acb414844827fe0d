//! Kernel density estimation over retrieved neighbors and distribution mixing.
//!
//! All kernel arithmetic stays in log space until the final normalization:
//! raw `exp(-d²/σ)` underflows for realistic key distances.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// `exp(-‖q-k‖² / σ)`
    Gaussian,
    /// `exp(-‖q-k‖ / σ)`
    Laplacian,
}

impl KernelKind {
    /// The distance term in the exponent: squared for Gaussian, raw for Laplacian.
    #[inline]
    pub fn exponent_term(self, distance: f64) -> f64 {
        match self {
            KernelKind::Gaussian => distance * distance,
            KernelKind::Laplacian => distance,
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            KernelKind::Gaussian => 0,
            KernelKind::Laplacian => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(KernelKind::Gaussian),
            1 => Some(KernelKind::Laplacian),
            _ => None,
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(KernelKind::Gaussian),
            "laplacian" => Ok(KernelKind::Laplacian),
            other => Err(invalid(format!("unknown kernel {other:?}"))),
        }
    }
}

/// Unnormalized log kernel values `-d_j²/σ` or `-d_j/σ`.
pub fn kernel_log_weights(distances: &[f64], sigma: f64, kind: KernelKind) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid(format!("bandwidth must be positive and finite, got {sigma}")));
    }
    if let Some(d) = distances.iter().find(|d| !(**d >= 0.0)) {
        return Err(invalid(format!("distances must be non-negative, got {d}")));
    }
    Ok(distances
        .iter()
        .map(|&d| -kind.exponent_term(d) / sigma)
        .collect())
}

/// Softmax with max subtraction.
pub fn normalize_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    if log_weights.is_empty() {
        return Err(Error::Empty("log weights"));
    }
    Ok(softmax(log_weights))
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for w in &mut out {
        *w /= total;
    }
    out
}

/// A distribution with explicit mass on a few tokens and zero elsewhere.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseDistribution {
    /// Sorted by token id, no duplicates.
    entries: Vec<(u32, f64)>,
}

impl SparseDistribution {
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: u32) -> f64 {
        self.entries
            .binary_search_by_key(&token, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Most probable token; the lowest id wins ties. `None` when empty.
    pub fn argmax(&self) -> Option<u32> {
        self.entries
            .iter()
            .fold(None, |best: Option<(u32, f64)>, &(t, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((t, p)),
            })
            .map(|b| b.0)
    }

    pub fn densify(&self, vocab: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; vocab];
        for &(t, p) in &self.entries {
            *out.get_mut(t as usize).ok_or(Error::TokenOutOfRange {
                token: t as usize,
                vocab,
            })? = p;
        }
        Ok(out)
    }
}

/// Aggregates normalized neighbor weights by neighbor value.
pub fn example_distribution(values: &[u32], weights: &[f64]) -> Result<SparseDistribution> {
    if values.len() != weights.len() {
        return Err(Error::LengthMismatch {
            what: "neighbor values vs weights",
            left: values.len(),
            right: weights.len(),
        });
    }
    let mut pairs: Vec<(u32, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by_key(|p| p.0);
    let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
    for (t, w) in pairs {
        match entries.last_mut() {
            Some(last) if last.0 == t => last.1 += w,
            _ => entries.push((t, w)),
        }
    }
    Ok(SparseDistribution { entries })
}

/// `λ·p_e + (1-λ)·p_m`. An empty `p_e` (nothing retrieved) leaves `p_m` unchanged.
pub fn mix(p_m: &[f64], p_e: &SparseDistribution, lambda: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(invalid(format!("mixing weight {lambda} outside [0, 1]")));
    }
    if p_e.is_empty() {
        return Ok(p_m.to_vec());
    }
    let mut out: Vec<f64> = p_m.iter().map(|&p| (1.0 - lambda) * p).collect();
    for &(t, p) in p_e.entries() {
        let slot = out.get_mut(t as usize).ok_or(Error::TokenOutOfRange {
            token: t as usize,
            vocab: p_m.len(),
        })?;
        *slot += lambda * p;
    }
    Ok(out)
}

/// Example-based distribution with a fixed kernel.
pub fn fixed_kernel_distribution(
    values: &[u32],
    distances: &[f64],
    sigma: f64,
    kind: KernelKind,
) -> Result<SparseDistribution> {
    if values.is_empty() {
        return Ok(SparseDistribution::default());
    }
    let logw = kernel_log_weights(distances, sigma, kind)?;
    example_distribution(values, &normalize_weights(&logw)?)
}

/// The fixed kNN-MT special case: Gaussian kernel with constant temperature
/// and a constant mixing weight.
pub fn knnmt_distribution(
    p_m: &[f64],
    values: &[u32],
    distances: &[f64],
    temperature: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let p_e = fixed_kernel_distribution(values, distances, temperature, KernelKind::Gaussian)?;
    mix(p_m, &p_e, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn zero_distance_has_zero_log_weight() {
        for kind in [KernelKind::Gaussian, KernelKind::Laplacian] {
            let lw = kernel_log_weights(&[0.0, 3.0], 0.7, kind).unwrap();
            assert_eq!(lw[0], 0.0);
            assert!(lw[1] < 0.0);
        }
    }

    #[test]
    fn gaussian_two_thirds_one_third() {
        let lw = kernel_log_weights(&[0.0, 2f64.ln().sqrt()], 1.0, KernelKind::Gaussian).unwrap();
        let w = normalize_weights(&lw).unwrap();
        assert!(close(w[0], 2.0 / 3.0, 1e-12) && close(w[1], 1.0 / 3.0, 1e-12));
    }

    #[test]
    fn laplacian_equal_distances() {
        let lw = kernel_log_weights(&[1.3, 1.3], 2.0, KernelKind::Laplacian).unwrap();
        assert_eq!(normalize_weights(&lw).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn bandwidth_must_be_positive() {
        assert!(kernel_log_weights(&[1.0], 0.0, KernelKind::Gaussian).is_err());
        assert!(kernel_log_weights(&[1.0], -1.0, KernelKind::Laplacian).is_err());
        assert!(kernel_log_weights(&[1.0], f64::NAN, KernelKind::Laplacian).is_err());
        assert!(kernel_log_weights(&[-1.0], 1.0, KernelKind::Laplacian).is_err());
    }

    #[test]
    fn softmax_cases() {
        let w = normalize_weights(&[0.0, 0.0, 0.0]).unwrap();
        assert!(w.iter().all(|&x| close(x, 1.0 / 3.0, 1e-15)));
        let w = normalize_weights(&[1000.0, 0.0]).unwrap();
        assert_eq!(w[0], 1.0);
        assert!(w[1] >= 0.0 && w[1] < 1e-300);
        let w = normalize_weights(&[-1e4, -1e4 - 1.0]).unwrap();
        assert!(close(w[0] + w[1], 1.0, 1e-15) && w[0] > w[1]);
        assert!(normalize_weights(&[]).is_err());
    }

    #[test]
    fn aggregation_by_value() {
        let pe = example_distribution(&[4, 4, 9], &[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(pe.get(4), 0.5);
        assert_eq!(pe.get(9), 0.5);
        assert_eq!(pe.get(5), 0.0);
        let one = example_distribution(&[7], &[1.0]).unwrap();
        assert_eq!(one.entries(), &[(7, 1.0)]);
        assert!(example_distribution(&[1, 2], &[1.0]).is_err());
    }

    #[test]
    fn kernel_then_aggregate() {
        let r = 2f64.ln().sqrt();
        let pe = fixed_kernel_distribution(&[0, 1, 2], &[0.0, r, r], 1.0, KernelKind::Gaussian).unwrap();
        assert!(close(pe.get(0), 0.5, 1e-12));
        assert!(close(pe.get(1), 0.25, 1e-12));
        assert!(close(pe.get(2), 0.25, 1e-12));
    }

    #[test]
    fn mix_endpoints_and_fixture() {
        let pm = vec![0.25; 4];
        let pe = example_distribution(&[0], &[1.0]).unwrap();
        assert_eq!(mix(&pm, &pe, 0.0).unwrap(), pm);
        assert_eq!(mix(&pm, &pe, 1.0).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(mix(&pm, &pe, 0.5).unwrap(), vec![0.625, 0.125, 0.125, 0.125]);
        assert!(mix(&pm, &pe, 1.5).is_err());
        assert!(mix(&pm, &pe, -0.1).is_err());
        assert_eq!(mix(&pm, &SparseDistribution::default(), 0.7).unwrap(), pm);
        let far = example_distribution(&[9], &[1.0]).unwrap();
        assert!(mix(&pm, &far, 0.5).is_err());
    }

    #[test]
    fn knnmt_special_cases() {
        let pm = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(knnmt_distribution(&pm, &[2, 3], &[0.5, 1.0], 3.0, 0.0).unwrap(), pm);
        assert_eq!(knnmt_distribution(&pm, &[1], &[0.5], 3.0, 1.0).unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(knnmt_distribution(&pm, &[], &[], 3.0, 0.6).unwrap(), pm);
    }

    #[test]
    fn argmax_ties_go_low() {
        let pe = example_distribution(&[5, 3, 8], &[0.4, 0.4, 0.2]).unwrap();
        assert_eq!(pe.argmax(), Some(3));
        assert_eq!(SparseDistribution::default().argmax(), None);
    }

    fn naive_softmax(xs: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn softmax_matches_naive(xs in prop::collection::vec(-30.0f64..30.0, 1..20)) {
            let got = normalize_weights(&xs).unwrap();
            for (a, b) in got.iter().zip(naive_softmax(&xs)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn mix_preserves_normalization(
            raw in prop::collection::vec(0.01f64..1.0, 2..12),
            lambda in 0.0f64..=1.0,
            hits in prop::collection::vec((0usize..12, 0.0f64..4.0), 1..8),
        ) {
            let total: f64 = raw.iter().sum();
            let pm: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let values: Vec<u32> = hits.iter().map(|h| (h.0 % pm.len()) as u32).collect();
            let dists: Vec<f64> = hits.iter().map(|h| h.1).collect();
            let p = knnmt_distribution(&pm, &values, &dists, 0.8, lambda).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn kernels_agree_on_equal_distances(d in 0.0f64..10.0, n in 1usize..10, sigma in 0.01f64..10.0) {
            let dists = vec![d; n];
            let g = normalize_weights(&kernel_log_weights(&dists, sigma, KernelKind::Gaussian).unwrap()).unwrap();
            let l = normalize_weights(&kernel_log_weights(&dists, sigma, KernelKind::Laplacian).unwrap()).unwrap();
            for (a, b) in g.iter().zip(&l) {
                prop_assert!((a - 1.0 / n as f64).abs() < 1e-12 && (b - 1.0 / n as f64).abs() < 1e-12);
            }
        }
    }
}
