//! Inverted-file index with product-quantized codes.
//!
//! A coarse k-means quantizer partitions the keys into `nlist` cells. Within
//! each cell, keys are encoded relative to their cell centroid as `m` one-byte
//! codes, one per contiguous subspace of width `dim / m`, against 256-entry
//! codebooks. Search probes the `nprobe` closest cells and ranks their members
//! by asymmetric distance: the full-precision query against the reconstructed
//! key.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::{kmeans, l2_sq, nearest};
use super::store::{Datastore, RecordId, TopK};
use crate::error::{invalid, Error, Result};

/// Codebook entries per subspace (8-bit codes).
pub const PQ_CENTROIDS: usize = 256;

/// Training sample cap per centroid, for both quantizers.
const TRAIN_POINTS_PER_CENTROID: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct IvfPqParams {
    pub nlist: usize,
    pub m: usize,
    pub iters: usize,
    pub seed: u64,
}

impl IvfPqParams {
    /// Defaults scaled to the store: `nlist ≈ √count`, `m = dim / 8`.
    pub fn for_store(count: usize, dim: usize, seed: u64) -> Self {
        let nlist = ((count as f64).sqrt().round() as usize).clamp(1, count.max(1));
        let mut m = (dim / 8).max(1);
        while dim % m != 0 {
            m -= 1;
        }
        Self {
            nlist,
            m,
            iters: 10,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfPqIndex {
    pub(crate) dim: usize,
    pub(crate) nlist: usize,
    pub(crate) m: usize,
    /// `nlist × dim`
    pub(crate) coarse: Vec<f32>,
    /// `m × 256 × (dim / m)`
    pub(crate) codebooks: Vec<f32>,
    /// `count × m`, indexed by record id
    pub(crate) codes: Vec<u8>,
    /// `nlist + 1` offsets into `list_ids`
    pub(crate) list_offsets: Vec<u64>,
    pub(crate) list_ids: Vec<u64>,
}

impl IvfPqIndex {
    pub fn train(ds: &Datastore, params: &IvfPqParams) -> Result<Self> {
        let dim = ds.dim();
        let count = ds.len();
        let IvfPqParams { nlist, m, iters, seed } = *params;
        if m == 0 || dim % m != 0 {
            return Err(invalid(format!("dim {dim} is not divisible by m = {m}")));
        }
        if nlist == 0 || nlist > count {
            return Err(invalid(format!("nlist {nlist} must be in 1..={count}")));
        }
        let dsub = dim / m;
        let keys = &ds.decoded;

        let coarse_sample = sample_rows(keys, dim, nlist * TRAIN_POINTS_PER_CENTROID, seed);
        let coarse = kmeans(&coarse_sample, dim, nlist, iters, seed)?.centroids;

        let cells: Vec<usize> = keys
            .chunks_exact(dim)
            .map(|k| nearest(k, &coarse, dim).0)
            .collect();
        let mut residuals = Vec::with_capacity(keys.len());
        for (k, &c) in keys.chunks_exact(dim).zip(&cells) {
            residuals.extend(k.iter().zip(&coarse[c * dim..(c + 1) * dim]).map(|(x, y)| x - y));
        }

        let mut codebooks = Vec::with_capacity(m * PQ_CENTROIDS * dsub);
        for s in 0..m {
            let sub: Vec<f32> = residuals
                .chunks_exact(dim)
                .flat_map(|r| r[s * dsub..(s + 1) * dsub].iter().copied())
                .collect();
            codebooks.extend(train_codebook(&sub, dsub, iters, seed.wrapping_add(1 + s as u64))?);
        }

        let mut codes = Vec::with_capacity(count * m);
        for r in residuals.chunks_exact(dim) {
            for s in 0..m {
                let book = &codebooks[s * PQ_CENTROIDS * dsub..(s + 1) * PQ_CENTROIDS * dsub];
                codes.push(nearest(&r[s * dsub..(s + 1) * dsub], book, dsub).0 as u8);
            }
        }

        let mut sizes = vec![0u64; nlist];
        for &c in &cells {
            sizes[c] += 1;
        }
        let mut list_offsets = Vec::with_capacity(nlist + 1);
        list_offsets.push(0u64);
        for s in &sizes {
            list_offsets.push(list_offsets.last().unwrap() + s);
        }
        let mut fill: Vec<u64> = list_offsets[..nlist].to_vec();
        let mut list_ids = vec![0u64; count];
        for (id, &c) in cells.iter().enumerate() {
            list_ids[fill[c] as usize] = id as u64;
            fill[c] += 1;
        }

        Ok(Self {
            dim,
            nlist,
            m,
            coarse,
            codebooks,
            codes,
            list_offsets,
            list_ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.nlist
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of encoded records.
    pub fn len(&self) -> usize {
        self.list_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list_ids.is_empty()
    }

    pub fn nprobe_default(&self) -> usize {
        (self.nlist / 8).max(1)
    }

    pub fn codes(&self, id: RecordId) -> &[u8] {
        let i = id as usize;
        &self.codes[i * self.m..(i + 1) * self.m]
    }

    /// Record ids in coarse cell `cell`.
    pub fn list(&self, cell: usize) -> &[u64] {
        &self.list_ids[self.list_offsets[cell] as usize..self.list_offsets[cell + 1] as usize]
    }

    /// Key reconstruction from the coarse centroid and the PQ codes.
    pub fn reconstruct(&self, id: RecordId, cell: usize) -> Vec<f32> {
        let dsub = self.dim / self.m;
        let mut out = self.coarse[cell * self.dim..(cell + 1) * self.dim].to_vec();
        for (s, &code) in self.codes(id).iter().enumerate() {
            let off = (s * PQ_CENTROIDS + code as usize) * dsub;
            for (o, c) in out[s * dsub..(s + 1) * dsub].iter_mut().zip(&self.codebooks[off..off + dsub]) {
                *o += c;
            }
        }
        out
    }

    pub(crate) fn search(&self, q: &[f32], k: usize, nprobe: usize) -> Result<TopK> {
        if nprobe == 0 || nprobe > self.nlist {
            return Err(Error::InvalidArgument(format!(
                "nprobe {nprobe} must be in 1..={}",
                self.nlist
            )));
        }
        let dim = self.dim;
        let dsub = dim / self.m;

        let mut cells: Vec<(f32, usize)> = self
            .coarse
            .chunks_exact(dim)
            .map(|c| l2_sq(q, c))
            .zip(0..)
            .collect();
        cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut top = TopK::new(k);
        let mut table = vec![0f32; self.m * PQ_CENTROIDS];
        let mut residual = vec![0f32; dim];
        for &(_, cell) in &cells[..nprobe] {
            let centroid = &self.coarse[cell * dim..(cell + 1) * dim];
            for ((r, x), c) in residual.iter_mut().zip(q).zip(centroid) {
                *r = x - c;
            }
            for s in 0..self.m {
                let rq = &residual[s * dsub..(s + 1) * dsub];
                let book = &self.codebooks[s * PQ_CENTROIDS * dsub..(s + 1) * PQ_CENTROIDS * dsub];
                for (t, word) in table[s * PQ_CENTROIDS..(s + 1) * PQ_CENTROIDS]
                    .iter_mut()
                    .zip(book.chunks_exact(dsub))
                {
                    *t = l2_sq(rq, word);
                }
            }
            for &id in self.list(cell) {
                let codes = self.codes(id);
                let mut acc = 0f32;
                for (s, &code) in codes.iter().enumerate() {
                    acc += table[s * PQ_CENTROIDS + code as usize];
                }
                top.push(acc.sqrt(), id);
            }
        }
        Ok(top)
    }
}

/// Codebook for one subspace. When the subspace holds at most 256 distinct
/// subvectors they become the codebook verbatim, making the codes lossless.
fn train_codebook(sub: &[f32], dsub: usize, iters: usize, seed: u64) -> Result<Vec<f32>> {
    let mut seen = HashSet::new();
    let mut distinct = Vec::new();
    for v in sub.chunks_exact(dsub) {
        let bits: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
        if seen.insert(bits) {
            distinct.extend_from_slice(v);
            if seen.len() > PQ_CENTROIDS {
                break;
            }
        }
    }
    if seen.len() <= PQ_CENTROIDS {
        let mut book = distinct;
        let first = book[..dsub].to_vec();
        while book.len() < PQ_CENTROIDS * dsub {
            book.extend_from_slice(&first);
        }
        return Ok(book);
    }
    let train = sample_rows(sub, dsub, PQ_CENTROIDS * TRAIN_POINTS_PER_CENTROID, seed);
    Ok(kmeans(&train, dsub, PQ_CENTROIDS, iters, seed)?.centroids)
}

fn sample_rows(rows: &[f32], dim: usize, max_rows: usize, seed: u64) -> Vec<f32> {
    let n = rows.len() / dim;
    if n <= max_rows {
        return rows.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5a3e);
    let mut picked = sample(&mut rng, n, max_rows).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .flat_map(|i| rows[i * dim..(i + 1) * dim].iter().copied())
        .collect()
}
