use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::fp16::{decode_slice, encode_slice};
use super::ivfpq::IvfPqIndex;
use super::kmeans::l2_sq;
use crate::error::{check_dim, invalid, Error, Result};

/// Record ids are dense indices in insertion order.
pub type RecordId = u64;

/// Sentinel stored for records without a domain tag.
pub(crate) const NO_DOMAIN: u16 = u16::MAX;

/// One datastore entry: a context representation and the token that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub key: Vec<f32>,
    pub value: u32,
    pub domain: Option<u16>,
}

/// A retrieval hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: RecordId,
    pub value: u32,
    /// L2 distance (not squared).
    pub distance: f32,
}

/// Search acceleration attached to a store.
#[derive(Debug, Clone, PartialEq)]
pub enum SearchIndex {
    ExactOnly,
    IvfPq(IvfPqIndex),
}

/// Immutable token-level key/value store with half-precision keys.
#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    pub(crate) dim: usize,
    pub(crate) keys: Vec<u16>,
    /// `keys` decoded once, used by every search.
    pub(crate) decoded: Vec<f32>,
    pub(crate) values: Vec<u32>,
    pub(crate) domains: Option<Vec<u16>>,
    pub(crate) index: SearchIndex,
}

/// Max-heap entry ordered by (distance, id) so the worst candidate is on top.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f32,
    id: RecordId,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

/// Bounded top-k collector keeping the k smallest (distance, id) pairs.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Candidate>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, distance: f32, id: RecordId) {
        let cand = Candidate { distance, id };
        if self.heap.len() < self.k {
            self.heap.push(cand);
        } else if let Some(top) = self.heap.peek() {
            if cand < *top {
                self.heap.pop();
                self.heap.push(cand);
            }
        }
    }

    pub(crate) fn into_sorted(self) -> Vec<(f32, RecordId)> {
        let mut v: Vec<_> = self.heap.into_vec();
        v.sort();
        v.into_iter().map(|c| (c.distance, c.id)).collect()
    }
}

impl Datastore {
    /// Builds a finalized store. Keys are quantized to half precision once, here.
    pub fn build(records: &[ExampleRecord], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("datastore dimension must be positive"));
        }
        let mut keys = Vec::with_capacity(records.len() * dim);
        let mut values = Vec::with_capacity(records.len());
        let any_domain = records.iter().any(|r| r.domain.is_some());
        let mut domains = any_domain.then(|| Vec::with_capacity(records.len()));
        for r in records {
            check_dim(dim, r.key.len())?;
            encode_slice(&r.key, &mut keys);
            values.push(r.value);
            if let Some(d) = domains.as_mut() {
                if r.domain == Some(NO_DOMAIN) {
                    return Err(invalid("domain id 65535 is reserved"));
                }
                d.push(r.domain.unwrap_or(NO_DOMAIN));
            }
        }
        Ok(Self::from_parts(dim, keys, values, domains, SearchIndex::ExactOnly))
    }

    pub(crate) fn from_parts(
        dim: usize,
        keys: Vec<u16>,
        values: Vec<u32>,
        domains: Option<Vec<u16>>,
        index: SearchIndex,
    ) -> Self {
        let decoded = decode_slice(&keys);
        Self {
            dim,
            keys,
            decoded,
            values,
            domains,
            index,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Decoded key of record `id`.
    pub fn key(&self, id: RecordId) -> &[f32] {
        let i = id as usize;
        &self.decoded[i * self.dim..(i + 1) * self.dim]
    }

    /// Raw half-precision patterns of record `id`.
    pub fn key_bits(&self, id: RecordId) -> &[u16] {
        let i = id as usize;
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, id: RecordId) -> u32 {
        self.values[id as usize]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn domain(&self, id: RecordId) -> Option<u16> {
        self.domains
            .as_ref()
            .map(|d| d[id as usize])
            .filter(|&d| d != NO_DOMAIN)
    }

    pub fn has_domains(&self) -> bool {
        self.domains.is_some()
    }

    pub fn index(&self) -> &SearchIndex {
        &self.index
    }

    pub fn ivfpq(&self) -> Option<&IvfPqIndex> {
        match &self.index {
            SearchIndex::IvfPq(ix) => Some(ix),
            SearchIndex::ExactOnly => None,
        }
    }

    /// Returns the store with `index` attached for approximate search.
    pub fn with_index(mut self, index: IvfPqIndex) -> Result<Self> {
        check_dim(self.dim, index.dim())?;
        if index.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "index codes vs records",
                left: index.len(),
                right: self.len(),
            });
        }
        self.index = SearchIndex::IvfPq(index);
        Ok(self)
    }

    /// Exact k-nearest neighbors by L2 over the decoded keys.
    pub fn exact_search(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        check_dim(self.dim, q.len())?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let mut top = TopK::new(k);
        for (i, key) in self.decoded.chunks_exact(self.dim).enumerate() {
            top.push(l2_sq(q, key).sqrt(), i as RecordId);
        }
        Ok(self.to_neighbors(top))
    }

    /// Approximate search through the attached IVF-PQ index.
    pub fn ivfpq_search(&self, q: &[f32], k: usize, nprobe: usize) -> Result<Vec<Neighbor>> {
        check_dim(self.dim, q.len())?;
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let index = self.ivfpq().ok_or(Error::Untrained)?;
        let top = index.search(q, k, nprobe)?;
        Ok(self.to_neighbors(top))
    }

    /// Routes to IVF-PQ when an index is attached and `nprobe` is given, exact otherwise.
    pub fn search(&self, q: &[f32], k: usize, nprobe: Option<usize>) -> Result<Vec<Neighbor>> {
        match (nprobe, &self.index) {
            (Some(np), SearchIndex::IvfPq(_)) => self.ivfpq_search(q, k, np),
            _ => self.exact_search(q, k),
        }
    }

    fn to_neighbors(&self, top: TopK) -> Vec<Neighbor> {
        top.into_sorted()
            .into_iter()
            .map(|(distance, id)| Neighbor {
                id,
                value: self.values[id as usize],
                distance,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(key: &[f32], value: u32) -> ExampleRecord {
        ExampleRecord {
            key: key.to_vec(),
            value,
            domain: None,
        }
    }

    #[test]
    fn insertion_order_ids() {
        let ds = Datastore::build(&[rec(&[0.0, 1.0], 7), rec(&[2.0, 3.0], 8), rec(&[4.0, 5.0], 9)], 2)
            .unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.values(), &[7, 8, 9]);
        assert_eq!(ds.key(1), &[2.0, 3.0]);
    }

    #[test]
    fn empty_store_returns_nothing() {
        let ds = Datastore::build(&[], 4).unwrap();
        assert!(ds.is_empty());
        assert!(ds.exact_search(&[0.0; 4], 3).unwrap().is_empty());
    }

    #[test]
    fn one_dimensional_geometry() {
        let ds = Datastore::build(&[rec(&[0.0], 0), rec(&[1.0], 1), rec(&[2.0], 2)], 1).unwrap();
        let hits = ds.exact_search(&[0.9], 2).unwrap();
        assert_eq!(hits.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1, 0]);
        assert!((hits[0].distance - 0.1).abs() < 1e-6);
        assert!((hits[1].distance - 0.9).abs() < 1e-6);
    }

    #[test]
    fn stored_key_is_first_at_zero() {
        let ds = Datastore::build(&[rec(&[0.5, 0.25], 0), rec(&[1.5, -2.0], 1)], 2).unwrap();
        let hits = ds.exact_search(&[1.5, -2.0], 2).unwrap();
        assert_eq!(hits[0].id, 1);
        assert_eq!(hits[0].distance, 0.0);
    }

    #[test]
    fn ties_broken_by_id_and_small_store() {
        let ds = Datastore::build(&[rec(&[1.0], 0), rec(&[-1.0], 1), rec(&[1.0], 2)], 1).unwrap();
        let hits = ds.exact_search(&[0.0], 10).unwrap();
        assert_eq!(hits.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn dimension_errors() {
        assert!(Datastore::build(&[rec(&[1.0, 2.0], 0)], 3).is_err());
        let ds = Datastore::build(&[rec(&[1.0, 2.0], 0)], 2).unwrap();
        assert!(ds.exact_search(&[1.0], 1).is_err());
        assert!(ds.exact_search(&[1.0, 2.0], 0).is_err());
        assert!(matches!(ds.ivfpq_search(&[1.0, 2.0], 1, 1), Err(Error::Untrained)));
    }

    #[test]
    fn keys_are_half_quantized() {
        let ds = Datastore::build(&[rec(&[0.1], 0)], 1).unwrap();
        assert_eq!(ds.key_bits(0), &[super::super::fp16::fp16_encode(0.1)]);
        assert_ne!(ds.key(0)[0], 0.1f32);
    }

    #[test]
    fn domains_round_trip() {
        let mut r = rec(&[0.0], 1);
        r.domain = Some(3);
        let ds = Datastore::build(&[r, rec(&[1.0], 2)], 1).unwrap();
        assert!(ds.has_domains());
        assert_eq!(ds.domain(0), Some(3));
        assert_eq!(ds.domain(1), None);
    }

    #[test]
    fn matches_full_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dim = 16;
        let records: Vec<_> = (0..500)
            .map(|i| rec(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f32>>(), i % 37))
            .collect();
        let ds = Datastore::build(&records, dim).unwrap();
        for _ in 0..50 {
            let q: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = ds.exact_search(&q, 16).unwrap();
            let mut all: Vec<(f32, u64)> = (0..500u64)
                .map(|i| {
                    let key = ds.key(i);
                    let s: f32 = q.iter().zip(key).map(|(a, b)| (a - b) * (a - b)).fold(0.0, |a, x| a + x);
                    (s.sqrt(), i)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<u64> = all[..16].iter().map(|x| x.1).collect();
            assert_eq!(got.iter().map(|n| n.id).collect::<Vec<_>>(), want);
        }
    }
}
