use crate::adapter::{forward_step, step_loss, AdapterParams, NeighborSet};
use crate::basemodel::{BaseModel, StepContext};
use crate::error::{check_dim, Error, Result};
use crate::kernels::SparseDistribution;
use crate::vecstore::{Datastore, Neighbor};

/// Training retrieval drops the nearest hit; inference keeps it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrievalMode {
    Training,
    Inference,
}

/// Searches `k + 1` neighbors and removes the nearest one (ties already
/// broken by id in the search order).
pub fn retrieve_for_training(store: &Datastore, q: &[f32], k: usize, nprobe: Option<usize>) -> Result<Vec<Neighbor>> {
    if store.len() < 2 {
        return Err(Error::Empty("datastore with at least two records"));
    }
    let mut hits = store.search(q, k + 1, nprobe)?;
    hits.remove(0);
    Ok(hits)
}

pub fn retrieve(
    store: &Datastore,
    q: &[f32],
    k: usize,
    nprobe: Option<usize>,
    mode: RetrievalMode,
) -> Result<Vec<Neighbor>> {
    match mode {
        RetrievalMode::Training => retrieve_for_training(store, q, k, nprobe),
        RetrievalMode::Inference => store.search(q, k, nprobe),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Retrieval<'a> {
    pub store: &'a Datastore,
    pub k: usize,
    /// `None` selects exact search.
    pub nprobe: Option<usize>,
}

/// A base model, optionally smoothed by retrieval and an adapter. Always
/// retrieves in inference mode.
#[derive(Clone, Copy)]
pub struct System<'a> {
    pub base: &'a dyn BaseModel,
    pub retrieval: Option<Retrieval<'a>>,
    pub params: Option<&'a AdapterParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedStep {
    pub p: Vec<f64>,
    pub p_m: Vec<f64>,
    pub p_e: SparseDistribution,
    /// 0 for base-only systems and empty retrievals.
    pub lambda: f64,
}

impl<'a> System<'a> {
    pub fn base_only(base: &'a dyn BaseModel) -> Self {
        Self {
            base,
            retrieval: None,
            params: None,
        }
    }

    pub fn smoothed(base: &'a dyn BaseModel, retrieval: Retrieval<'a>, params: &'a AdapterParams) -> Result<Self> {
        check_dim(base.dim(), retrieval.store.dim())?;
        check_dim(base.dim(), params.d())?;
        if retrieval.k == 0 {
            return Err(crate::error::invalid("k must be at least 1"));
        }
        Ok(Self {
            base,
            retrieval: Some(retrieval),
            params: Some(params),
        })
    }

    pub fn step(&self, ctx: StepContext<'_>) -> Result<SmoothedStep> {
        let base = self.base.step(ctx)?;
        let (Some(r), Some(params)) = (self.retrieval, self.params) else {
            return Ok(SmoothedStep {
                p: base.p_m.clone(),
                p_m: base.p_m,
                p_e: SparseDistribution::default(),
                lambda: 0.0,
            });
        };
        let hits = retrieve(r.store, &base.q, r.k, r.nprobe, RetrievalMode::Inference)?;
        let set = NeighborSet::from_neighbors(r.store, &hits);
        let q: Vec<f64> = base.q.iter().map(|&x| x as f64).collect();
        let (p, tape) = forward_step(params, &q, &set, &base.p_m)?;
        Ok(SmoothedStep {
            p,
            p_m: base.p_m,
            p_e: tape.p_e,
            lambda: tape.lambda,
        })
    }
}

/// Sum of clamped `ln p(y_i)` over the target and the end-of-sequence step.
pub fn score_sequence(system: &System<'_>, sentence: usize, source: &[u32], target: &[u32]) -> Result<f64> {
    let eos = system.base.eos();
    let mut total = 0.0;
    for i in 0..=target.len() {
        let y = target.get(i).copied().unwrap_or(eos);
        let step = system.step(StepContext {
            sentence,
            source,
            prefix: &target[..i],
        })?;
        total -= step_loss(&step.p, y)?;
    }
    Ok(total)
}
