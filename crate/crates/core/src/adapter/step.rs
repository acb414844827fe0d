//! One smoothed decoding step: forward pass with a tape, loss, and exact
//! reverse-mode gradients with respect to the adapter parameters only.
//!
//! Forward:
//! ```text
//! σ  = exp(w1·[q; k̄] + b1)             k̄ = mean of keys
//! w  = softmax(-r_j / σ)               r_j = d_j² (Gaussian) or d_j (Laplacian)
//! p_e(t) = Σ_{v_j = t} w_j
//! k̃  = Σ w_j k_j
//! λ  = sigmoid(w3·relu(W2 [q; k̃] + b2) + b3)
//! p  = λ p_e + (1 - λ) p_m
//! ```
//! The normalized weights `w` feed both `p_e` and `k̃`, so their gradient
//! collects contributions from the two paths before the softmax backward.

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{example_distribution, softmax, SparseDistribution};
use crate::vecstore::{Datastore, Neighbor};

use super::params::{AdapterGrad, AdapterParams};

/// Floor applied to `p[y]` before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Bound on the bandwidth pre-activation, keeping σ strictly positive and finite.
const MAX_BANDWIDTH_LOGIT: f64 = 700.0;

/// Retrieved neighbors in the form the adapter consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub dim: usize,
    /// `k × dim`, row-major.
    pub keys: Vec<f64>,
    pub values: Vec<u32>,
    pub distances: Vec<f64>,
}

impl NeighborSet {
    pub fn new(dim: usize, keys: Vec<f64>, values: Vec<u32>, distances: Vec<f64>) -> Result<Self> {
        if keys.len() != values.len() * dim {
            return Err(Error::LengthMismatch {
                what: "neighbor keys vs values",
                left: keys.len(),
                right: values.len() * dim,
            });
        }
        if values.len() != distances.len() {
            return Err(Error::LengthMismatch {
                what: "neighbor values vs distances",
                left: values.len(),
                right: distances.len(),
            });
        }
        Ok(Self {
            dim,
            keys,
            values,
            distances,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            values: Vec::new(),
            distances: Vec::new(),
        }
    }

    /// Gathers decoded keys for search hits.
    pub fn from_neighbors(ds: &Datastore, hits: &[Neighbor]) -> Self {
        let dim = ds.dim();
        let mut keys = Vec::with_capacity(hits.len() * dim);
        for n in hits {
            keys.extend(ds.key(n.id).iter().map(|&x| x as f64));
        }
        Self {
            dim,
            keys,
            values: hits.iter().map(|n| n.value).collect(),
            distances: hits.iter().map(|n| n.distance as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn key(&self, j: usize) -> &[f64] {
        &self.keys[j * self.dim..(j + 1) * self.dim]
    }

    /// Reorders neighbors: entry `i` of the result is neighbor `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut keys = Vec::with_capacity(self.keys.len());
        for &j in order {
            keys.extend_from_slice(self.key(j));
        }
        Self {
            dim: self.dim,
            keys,
            values: order.iter().map(|&j| self.values[j]).collect(),
            distances: order.iter().map(|&j| self.distances[j]).collect(),
        }
    }
}

/// Everything the backward pass needs, cached from the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTape {
    pub q: Vec<f64>,
    pub neighbors: NeighborSet,
    pub p_m: Vec<f64>,
    /// Bandwidth pre-activation `w1·[q; k̄] + b1` (after clamping).
    pub bandwidth_logit: f64,
    pub bandwidth_clamped: bool,
    pub sigma: f64,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
    pub key_mean: Vec<f64>,
    pub key_weighted: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub mixing_logit: f64,
    pub lambda: f64,
    pub p_e: SparseDistribution,
    pub p: Vec<f64>,
    /// Nothing was retrieved; `p` is `p_m` and gradients are zero.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_key(keys: &[f64], k: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for row in keys.chunks_exact(d) {
        for (o, x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= k as f64;
    }
    out
}

fn bandwidth_logit(params: &AdapterParams, q: &[f64], key_mean: &[f64]) -> (f64, bool) {
    let d = params.d();
    let w1 = params.w1();
    let z = dot(&w1[..d], q) + dot(&w1[d..], key_mean) + params.b1();
    if z.abs() > MAX_BANDWIDTH_LOGIT {
        (z.clamp(-MAX_BANDWIDTH_LOGIT, MAX_BANDWIDTH_LOGIT), true)
    } else {
        (z, false)
    }
}

/// Bandwidth for a query and its retrieved keys (`k × d`), with the mean key.
pub fn bandwidth_forward(params: &AdapterParams, q: &[f64], keys: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = params.d();
    check_dim(d, q.len())?;
    if keys.is_empty() {
        return Err(Error::Empty("neighbor keys"));
    }
    if keys.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: keys.len() % d,
        });
    }
    let key_mean = mean_key(keys, keys.len() / d, d);
    let (z, _) = bandwidth_logit(params, q, &key_mean);
    Ok((z.exp(), key_mean))
}

struct Mixing {
    key_weighted: Vec<f64>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logit: f64,
    lambda: f64,
}

fn mixing(params: &AdapterParams, q: &[f64], keys: &[f64], weights: &[f64]) -> Mixing {
    let (d, h) = (params.d(), params.h());
    let mut key_weighted = vec![0.0; d];
    for (row, &w) in keys.chunks_exact(d).zip(weights) {
        for (o, x) in key_weighted.iter_mut().zip(row) {
            *o += w * x;
        }
    }
    let b2 = params.b2();
    let mut hidden_pre = Vec::with_capacity(h);
    for r in 0..h {
        let row = params.w2_row(r);
        hidden_pre.push(dot(&row[..d], q) + dot(&row[d..], &key_weighted) + b2[r]);
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|&a| a.max(0.0)).collect();
    let logit = dot(params.w3(), &hidden) + params.b3();
    Mixing {
        key_weighted,
        hidden_pre,
        hidden,
        logit,
        lambda: sigmoid(logit),
    }
}

/// Mixing weight from the query and the kernel-weighted key sum.
pub fn mixing_forward(params: &AdapterParams, q: &[f64], keys: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
    let d = params.d();
    check_dim(d, q.len())?;
    if keys.len() != weights.len() * d {
        return Err(Error::LengthMismatch {
            what: "keys vs weights",
            left: keys.len() / d.max(1),
            right: weights.len(),
        });
    }
    let m = mixing(params, q, keys, weights);
    Ok((m.lambda, m.key_weighted))
}

/// Full smoothed step. With no neighbors the output is `p_m` and the tape is
/// flagged degenerate.
pub fn forward_step(
    params: &AdapterParams,
    q: &[f64],
    neighbors: &NeighborSet,
    p_m: &[f64],
) -> Result<(Vec<f64>, StepTape)> {
    let d = params.d();
    check_dim(d, q.len())?;
    check_dim(d, neighbors.dim)?;
    let vocab = p_m.len();
    if let Some(&bad) = neighbors.values.iter().find(|&&v| v as usize >= vocab) {
        return Err(Error::TokenOutOfRange {
            token: bad as usize,
            vocab,
        });
    }

    if neighbors.is_empty() {
        let tape = StepTape {
            q: q.to_vec(),
            neighbors: neighbors.clone(),
            p_m: p_m.to_vec(),
            bandwidth_logit: 0.0,
            bandwidth_clamped: false,
            sigma: 1.0,
            log_weights: Vec::new(),
            weights: Vec::new(),
            key_mean: vec![0.0; d],
            key_weighted: vec![0.0; d],
            hidden_pre: vec![0.0; params.h()],
            hidden: vec![0.0; params.h()],
            mixing_logit: 0.0,
            lambda: 0.0,
            p_e: SparseDistribution::default(),
            p: p_m.to_vec(),
            degenerate: true,
        };
        return Ok((p_m.to_vec(), tape));
    }

    let k = neighbors.len();
    let key_mean = mean_key(&neighbors.keys, k, d);
    let (z_b, clamped) = bandwidth_logit(params, q, &key_mean);
    let sigma = z_b.exp();

    let log_weights: Vec<f64> = neighbors
        .distances
        .iter()
        .map(|&dist| -params.kind.exponent_term(dist) / sigma)
        .collect();
    let weights = softmax(&log_weights);
    let p_e = example_distribution(&neighbors.values, &weights)?;

    let m = mixing(params, q, &neighbors.keys, &weights);
    let lambda = m.lambda;
    let mut p: Vec<f64> = p_m.iter().map(|&x| (1.0 - lambda) * x).collect();
    for &(t, pe) in p_e.entries() {
        p[t as usize] += lambda * pe;
    }

    let tape = StepTape {
        q: q.to_vec(),
        neighbors: neighbors.clone(),
        p_m: p_m.to_vec(),
        bandwidth_logit: z_b,
        bandwidth_clamped: clamped,
        sigma,
        log_weights,
        weights,
        key_mean,
        key_weighted: m.key_weighted,
        hidden_pre: m.hidden_pre,
        hidden: m.hidden,
        mixing_logit: m.logit,
        lambda,
        p_e,
        p: p.clone(),
        degenerate: false,
    };
    Ok((p, tape))
}

impl StepTape {
    /// Re-runs the forward pass from the recorded inputs.
    pub fn replay(&self, params: &AdapterParams) -> Result<Vec<f64>> {
        Ok(forward_step(params, &self.q, &self.neighbors, &self.p_m)?.0)
    }
}

/// `-ln p[y]` with `p[y]` floored at [`PROB_FLOOR`].
pub fn step_loss(p: &[f64], y: u32) -> Result<f64> {
    let py = *p.get(y as usize).ok_or(Error::TokenOutOfRange {
        token: y as usize,
        vocab: p.len(),
    })?;
    Ok(-py.max(PROB_FLOOR).ln())
}

/// Gradient of [`step_loss`] with respect to every adapter parameter.
pub fn backward_step(params: &AdapterParams, tape: &StepTape, y: u32) -> Result<AdapterGrad> {
    let lay = params.layout;
    let (d, h) = (lay.d, lay.h);
    check_dim(d, tape.q.len())?;
    let vocab = tape.p.len();
    let yi = y as usize;
    if yi >= vocab {
        return Err(Error::TokenOutOfRange { token: yi, vocab });
    }
    let mut grad = AdapterGrad::zeros(lay);
    let p_y = tape.p[yi];
    if tape.degenerate || p_y < PROB_FLOOR {
        return Ok(grad);
    }
    if tape.weights.len() != tape.neighbors.len() {
        return Err(invalid("tape does not match its neighbor set"));
    }

    let lambda = tape.lambda;
    let pe_y = tape.p_e.get(y);
    let pm_y = tape.p_m[yi];

    // dL/dλ and the mixing MLP
    let d_lambda = -(pe_y - pm_y) / p_y;
    let d_logit = d_lambda * lambda * (1.0 - lambda);
    grad.data[lay.b3()] = d_logit;
    let mut d_pre = vec![0.0; h];
    {
        let w3 = params.w3();
        let g_w3 = &mut grad.data[lay.w3()];
        for r in 0..h {
            g_w3[r] = d_logit * tape.hidden[r];
            if tape.hidden_pre[r] > 0.0 {
                d_pre[r] = d_logit * w3[r];
            }
        }
    }
    let mut d_key_weighted = vec![0.0; d];
    {
        let w2_start = lay.w2().start;
        let b2_start = lay.b2().start;
        for r in 0..h {
            let g = d_pre[r];
            if g == 0.0 {
                continue;
            }
            grad.data[b2_start + r] = g;
            let row = &mut grad.data[w2_start + r * 2 * d..w2_start + (r + 1) * 2 * d];
            for (o, x) in row[..d].iter_mut().zip(&tape.q) {
                *o = g * x;
            }
            for (o, x) in row[d..].iter_mut().zip(&tape.key_weighted) {
                *o = g * x;
            }
            let wrow = params.w2_row(r);
            for (acc, w) in d_key_weighted.iter_mut().zip(&wrow[d..]) {
                *acc += g * w;
            }
        }
    }

    // dL/dw_j from k̃ = Σ w_j k_j and from p_e(y) = Σ_{v_j = y} w_j
    let d_pe_y = -lambda / p_y;
    let k = tape.neighbors.len();
    let d_weights: Vec<f64> = (0..k)
        .map(|j| {
            let via_keys = dot(&d_key_weighted, tape.neighbors.key(j));
            let via_pe = if tape.neighbors.values[j] == y { d_pe_y } else { 0.0 };
            via_keys + via_pe
        })
        .collect();

    // softmax backward, then s_j = -r_j exp(-z_b)  =>  ds_j/dz_b = r_j / σ = -s_j
    let centered = dot(&tape.weights, &d_weights);
    let d_z_b: f64 = (0..k)
        .map(|j| tape.weights[j] * (d_weights[j] - centered) * -tape.log_weights[j])
        .sum();
    if !tape.bandwidth_clamped {
        grad.data[lay.b1()] = d_z_b;
        let g_w1 = &mut grad.data[lay.w1()];
        for i in 0..d {
            g_w1[i] = d_z_b * tape.q[i];
            g_w1[d + i] = d_z_b * tape.key_mean[i];
        }
    }
    Ok(grad)
}

/// Loss and gradient for one step.
pub fn loss_and_grad(
    params: &AdapterParams,
    q: &[f64],
    neighbors: &NeighborSet,
    p_m: &[f64],
    y: u32,
) -> Result<(f64, AdapterGrad)> {
    let (p, tape) = forward_step(params, q, neighbors, p_m)?;
    let loss = step_loss(&p, y)?;
    Ok((loss, backward_step(params, &tape, y)?))
}
