//! Desk-scale experiments on the synthetic task.
//!
//! - DAMT: one store per specific domain; the adapter is trained on that
//!   domain and evaluated on its test split and on the general test split.
//! - MDMT: one mixed store over every domain's training split; held-out
//!   losses are measured on the specific domains' test splits.
//!
//! Losses and perplexities come from cached teacher-forced token sets, which
//! gives the same numbers as scoring every sentence.

use super::config::{Ablation, ExperimentConfig};
use super::synth::{gen_corpus, Split, SynthTask};
use crate::adapter::{step_loss, AdapterParams, Learnable};
use crate::basemodel::ToyLexicalModel;
use crate::error::Result;
use crate::kernels::KernelKind;
use crate::pipeline::{
    build_datastore_from_corpus, collect_tokens, contrastive_eval, mean_loss, train_on_tokens, tune_fixed,
    tune_knnmt, KnnMtTuning, Retrieval, RetrievalMode, System, TokenSet, TrainConfig, TrainOutcome,
};
use crate::vecstore::{Datastore, IvfPqIndex, IvfPqParams};

use super::config::IndexKind;

/// A generated task and the base model built on its general training split.
pub struct Prepared {
    pub task: SynthTask,
    pub base: ToyLexicalModel,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let task = gen_corpus(&cfg.task(), seed)?;
    let base = ToyLexicalModel::build(&task.splits[0].train, cfg.toy(), seed)?;
    Ok(Prepared { task, base })
}

/// Mean `−ln p_m(y)` over a token set.
pub fn base_loss(set: &TokenSet) -> Result<f64> {
    let mut total = 0.0;
    for t in &set.tokens {
        total += step_loss(&t.p_m, t.y)?;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Adapter parameters that reproduce a fixed-kernel system.
pub fn fixed_params(dim: usize, hidden: usize, kind: KernelKind, tuning: &KnnMtTuning) -> Result<AdapterParams> {
    let mut p = AdapterParams::zeros(dim, hidden, kind);
    p.force_bandwidth(tuning.temperature)?;
    p.force_mixing(tuning.lambda)?;
    Ok(p)
}

/// Builds a store over the given domains' training splits, with an IVF-PQ
/// index when the configuration asks for one.
pub fn build_store(p: &Prepared, cfg: &ExperimentConfig, domains: &[u16], seed: u64) -> Result<Datastore> {
    let corpus = p.task.union(Split::Train, domains)?;
    let store = build_datastore_from_corpus(&p.base, &corpus, true)?;
    match cfg.index {
        IndexKind::Exact => Ok(store),
        IndexKind::Ivfpq => {
            let params = IvfPqParams::for_store(store.len(), store.dim(), seed);
            let index = IvfPqIndex::train(&store, &params)?;
            store.with_index(index)
        }
    }
}

/// Probe count for `store`: the configured value, or the index default when it is 0.
pub fn nprobe_for(cfg: &ExperimentConfig, store: &Datastore) -> Option<usize> {
    match (cfg.index, store.ivfpq()) {
        (IndexKind::Ivfpq, Some(ix)) if cfg.nprobe == 0 => Some(ix.nprobe_default()),
        (IndexKind::Ivfpq, Some(_)) => Some(cfg.nprobe),
        _ => None,
    }
}

fn tokens(
    p: &Prepared,
    cfg: &ExperimentConfig,
    store: &Datastore,
    split: Split,
    domains: &[u16],
    mode: RetrievalMode,
) -> Result<TokenSet> {
    let corpus = p.task.union(split, domains)?;
    collect_tokens(&p.base, store, &corpus, cfg.k, nprobe_for(cfg, store), mode)
}

fn train_cfg(cfg: &ExperimentConfig, seed: u64, kernel: KernelKind, learnable: Learnable, tuning: &KnnMtTuning) -> TrainConfig {
    TrainConfig {
        kernel,
        learnable,
        fixed_temperature: tuning.temperature,
        fixed_lambda: tuning.lambda,
        ..cfg.train(seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamtReport {
    pub domain: u16,
    pub tuning: KnnMtTuning,
    pub history: Vec<f64>,
    pub base_in: f64,
    pub knnmt_in: f64,
    pub kster_in: f64,
    pub base_general: f64,
    pub knnmt_general: f64,
    pub kster_general: f64,
}

/// Store and adapter for one specific domain; perplexities on its test split
/// and on the general test split.
pub fn run_damt(p: &Prepared, cfg: &ExperimentConfig, domain: u16, seed: u64) -> Result<DamtReport> {
    let store = build_store(p, cfg, &[domain], seed)?;
    let dev = tokens(p, cfg, &store, Split::Dev, &[domain], RetrievalMode::Inference)?;
    let tuning = tune_knnmt(&dev)?;
    let mode = if cfg.retrieval_dropout {
        RetrievalMode::Training
    } else {
        RetrievalMode::Inference
    };
    let train = tokens(p, cfg, &store, Split::Train, &[domain], mode)?;
    let tc = train_cfg(cfg, seed, cfg.kernel, cfg.learnable.learnable(), &tuning);
    let TrainOutcome { params, history, .. } = train_on_tokens(&train, &tc)?;
    let knnmt = fixed_params(store.dim(), params.h(), KernelKind::Gaussian, &tuning)?;

    let test_in = tokens(p, cfg, &store, Split::Test, &[domain], RetrievalMode::Inference)?;
    let test_gen = tokens(p, cfg, &store, Split::Test, &[0], RetrievalMode::Inference)?;
    Ok(DamtReport {
        domain,
        tuning,
        history,
        base_in: base_loss(&test_in)?.exp(),
        knnmt_in: mean_loss(&knnmt, &test_in)?.exp(),
        kster_in: mean_loss(&params, &test_in)?.exp(),
        base_general: base_loss(&test_gen)?.exp(),
        knnmt_general: mean_loss(&knnmt, &test_gen)?.exp(),
        kster_general: mean_loss(&params, &test_gen)?.exp(),
    })
}

/// Shared state of the multi-domain experiments.
pub struct Mdmt<'a> {
    pub prepared: &'a Prepared,
    pub store: Datastore,
    /// Development tokens of every domain.
    pub dev: TokenSet,
    /// Test tokens of the specific domains.
    pub test: TokenSet,
    pub train_dropout: TokenSet,
    pub train_plain: TokenSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub tuning: KnnMtTuning,
    pub base: f64,
    /// Held-out loss per cell, ordered like [`Ablation::ALL`].
    pub losses: [f64; 4],
}

impl AblationReport {
    pub fn loss(&self, a: Ablation) -> f64 {
        self.losses[Ablation::ALL.iter().position(|&x| x == a).expect("listed")]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DropoutReport {
    pub with_dropout: f64,
    pub without_dropout: f64,
    pub history_with: Vec<f64>,
    pub history_without: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveReport {
    pub pairs: usize,
    pub base: f64,
    pub kster: f64,
}

impl<'a> Mdmt<'a> {
    pub fn new(p: &'a Prepared, cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let all = p.task.all_domains();
        let specific = p.task.specific_domains();
        let store = build_store(p, cfg, &all, seed)?;
        Ok(Self {
            dev: tokens(p, cfg, &store, Split::Dev, &all, RetrievalMode::Inference)?,
            test: tokens(p, cfg, &store, Split::Test, &specific, RetrievalMode::Inference)?,
            train_dropout: tokens(p, cfg, &store, Split::Train, &all, RetrievalMode::Training)?,
            train_plain: tokens(p, cfg, &store, Split::Train, &all, RetrievalMode::Inference)?,
            prepared: p,
            store,
        })
    }

    fn train_set(&self, dropout: bool) -> &TokenSet {
        if dropout {
            &self.train_dropout
        } else {
            &self.train_plain
        }
    }

    /// The four learnable/frozen cells; frozen parts use constants tuned on
    /// the development set for `kernel`.
    pub fn ablation(&self, cfg: &ExperimentConfig, kernel: KernelKind, seed: u64) -> Result<AblationReport> {
        let tuning = tune_fixed(&self.dev, kernel)?;
        let mut losses = [0.0; 4];
        for (slot, cell) in losses.iter_mut().zip(Ablation::ALL) {
            let tc = train_cfg(cfg, seed, kernel, cell.learnable(), &tuning);
            let out = train_on_tokens(self.train_set(cfg.retrieval_dropout), &tc)?;
            *slot = mean_loss(&out.params, &self.test)?;
        }
        Ok(AblationReport {
            tuning,
            base: base_loss(&self.test)?,
            losses,
        })
    }

    /// Fully learnable adapter trained with and without retrieval dropout.
    pub fn dropout(&self, cfg: &ExperimentConfig, kernel: KernelKind, seed: u64) -> Result<DropoutReport> {
        let tuning = tune_fixed(&self.dev, kernel)?;
        let tc = train_cfg(cfg, seed, kernel, Learnable::BOTH, &tuning);
        let with = train_on_tokens(&self.train_dropout, &tc)?;
        let without = train_on_tokens(&self.train_plain, &TrainConfig { retrieval_dropout: false, ..tc })?;
        Ok(DropoutReport {
            with_dropout: mean_loss(&with.params, &self.test)?,
            without_dropout: mean_loss(&without.params, &self.test)?,
            history_with: with.history,
            history_without: without.history,
        })
    }

    /// Reference-vs-contrastive accuracy on the specific domains' test splits.
    pub fn contrastive(&self, cfg: &ExperimentConfig, kernel: KernelKind, seed: u64) -> Result<ContrastiveReport> {
        let p = self.prepared;
        let tuning = tune_fixed(&self.dev, kernel)?;
        let tc = train_cfg(cfg, seed, kernel, Learnable::BOTH, &tuning);
        let trained = train_on_tokens(self.train_set(cfg.retrieval_dropout), &tc)?;
        let test = p.task.union(Split::Test, &p.task.specific_domains())?;
        let pairs = p.task.info.contrastive_pairs(&test);
        let retrieval = Retrieval {
            store: &self.store,
            k: cfg.k,
            nprobe: nprobe_for(cfg, &self.store),
        };
        let kster = System::smoothed(&p.base, retrieval, &trained.params)?;
        Ok(ContrastiveReport {
            pairs: pairs.len(),
            base: contrastive_eval(&System::base_only(&p.base), &pairs)?,
            kster: contrastive_eval(&kster, &pairs)?,
        })
    }
}
