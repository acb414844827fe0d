use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::system::{retrieve, RetrievalMode};
use crate::adapter::{
    forward_step, loss_and_grad, step_loss, AdamConfig, AdamState, AdapterGrad, AdapterParams, Learnable,
    NeighborSet, DEFAULT_LR,
};
use crate::basemodel::{BaseModel, StepContext};
use crate::error::{check_dim, invalid, Error, Result};
use crate::evalbench::corpus::DomainCorpus;
use crate::evalbench::synth::derive_seed;
use crate::kernels::{fixed_kernel_distribution, mix, KernelKind, SparseDistribution};
use crate::vecstore::Datastore;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub retrieval_dropout: bool,
    pub epochs: usize,
    pub batch_tokens: usize,
    pub lr: f64,
    pub seed: u64,
    pub kernel: KernelKind,
    pub learnable: Learnable,
    /// Hidden width of the mixing MLP; the query dimension when `None`.
    pub hidden: Option<usize>,
    /// Bandwidth used when the kernel is frozen.
    pub fixed_temperature: f64,
    /// Mixing weight used when the mixing weight is frozen.
    pub fixed_lambda: f64,
    pub nprobe: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 16,
            retrieval_dropout: true,
            epochs: 10,
            batch_tokens: 1024,
            lr: DEFAULT_LR,
            seed: 0,
            kernel: KernelKind::Gaussian,
            learnable: Learnable::BOTH,
            hidden: None,
            fixed_temperature: 10.0,
            fixed_lambda: 0.5,
            nprobe: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if self.batch_tokens == 0 {
            return Err(invalid("batch_tokens must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("lr must be positive"));
        }
        if self.hidden == Some(0) {
            return Err(invalid("hidden width must be at least 1"));
        }
        Ok(())
    }
}

/// One teacher-forced decoding step with its retrieved neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingToken {
    pub q: Vec<f64>,
    pub neighbors: NeighborSet,
    pub p_m: Vec<f64>,
    pub y: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    pub dim: usize,
    pub tokens: Vec<TrainingToken>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Every retrieved distance, in token order.
    pub fn distances(&self) -> Vec<f64> {
        self.tokens
            .iter()
            .flat_map(|t| t.neighbors.distances.iter().copied())
            .collect()
    }
}

/// Runs the base model on gold prefixes and retrieves neighbors for every step.
pub fn collect_tokens(
    base: &dyn BaseModel,
    store: &Datastore,
    corpus: &DomainCorpus,
    k: usize,
    nprobe: Option<usize>,
    mode: RetrievalMode,
) -> Result<TokenSet> {
    check_dim(base.dim(), store.dim())?;
    let eos = base.eos();
    let mut tokens = Vec::with_capacity(corpus.target_tokens() + corpus.len());
    for (n, s) in corpus.sentences.iter().enumerate() {
        for i in 0..=s.tgt.len() {
            let step = base.step(StepContext {
                sentence: n,
                source: &s.src,
                prefix: &s.tgt[..i],
            })?;
            let hits = retrieve(store, &step.q, k, nprobe, mode)?;
            tokens.push(TrainingToken {
                q: step.q.iter().map(|&x| x as f64).collect(),
                neighbors: NeighborSet::from_neighbors(store, &hits),
                p_m: step.p_m,
                y: s.tgt.get(i).copied().unwrap_or(eos),
            });
        }
    }
    Ok(TokenSet {
        dim: base.dim(),
        tokens,
    })
}

pub fn mean_loss(params: &AdapterParams, set: &TokenSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("token set"));
    }
    let mut total = 0.0;
    for t in &set.tokens {
        let (p, _) = forward_step(params, &t.q, &t.neighbors, &t.p_m)?;
        total += step_loss(&p, t.y)?;
    }
    Ok(total / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: AdapterParams,
    pub adam: AdamState,
    /// Mean training loss before the first update, then after every epoch.
    pub history: Vec<f64>,
}

/// Initial parameters for `cfg`, with frozen parts forced to their constants.
fn initial_params(set: &TokenSet, cfg: &TrainConfig) -> Result<AdapterParams> {
    let hidden = cfg.hidden.unwrap_or(set.dim);
    let distances = set.distances();
    let calibration = (!distances.is_empty()).then_some(distances.as_slice());
    let mut params = AdapterParams::init(set.dim, hidden, cfg.kernel, cfg.seed, calibration)?;
    if !cfg.learnable.kernel {
        params.force_bandwidth(cfg.fixed_temperature)?;
    }
    if !cfg.learnable.weight {
        params.force_mixing(cfg.fixed_lambda)?;
    }
    Ok(params)
}

/// Adam on summed per-token gradients. Token order is reshuffled every epoch
/// with a seeded generator; gradients accumulate in that order.
pub fn train_on_tokens(set: &TokenSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut params = initial_params(set, cfg)?;
    let ranges: Vec<Range<usize>> = cfg.learnable.ranges(&params.layout);
    let mut adam = AdamState::new(
        params.parameter_count(),
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
    );
    let mut history = vec![mean_loss(&params, set)?];
    let mut order: Vec<usize> = (0..set.len()).collect();
    for epoch in 0..cfg.epochs {
        if ranges.is_empty() {
            history.push(history[0]);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 << 32 | epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_tokens) {
            let mut grad = AdapterGrad::zeros(params.layout);
            for &i in batch {
                let t = &set.tokens[i];
                let (_, g) = loss_and_grad(&params, &t.q, &t.neighbors, &t.p_m, t.y)?;
                grad.add_assign(&g);
            }
            adam.update(&mut params, &grad, &ranges)?;
        }
        history.push(mean_loss(&params, set)?);
    }
    Ok(TrainOutcome { params, adam, history })
}

/// Collects teacher-forced tokens from `corpus` (dropout per `cfg`) and trains on them.
pub fn train_adapter(
    base: &dyn BaseModel,
    store: &Datastore,
    corpus: &DomainCorpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mode = if cfg.retrieval_dropout {
        RetrievalMode::Training
    } else {
        RetrievalMode::Inference
    };
    let set = collect_tokens(base, store, corpus, cfg.k, cfg.nprobe, mode)?;
    train_on_tokens(&set, cfg)
}

/// Multiples of the mean squared neighbor distance tried as kNN-MT temperatures.
pub const TEMPERATURE_FACTORS: [f64; 5] = [0.1, 0.3, 1.0, 3.0, 10.0];
pub const LAMBDA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnMtTuning {
    pub temperature: f64,
    pub lambda: f64,
    /// Mean loss on the tuning set at the chosen point.
    pub loss: f64,
}

/// Grid search of the fixed kNN-MT temperature and mixing weight on a
/// development token set (collected in inference mode).
pub fn tune_knnmt(dev: &TokenSet) -> Result<KnnMtTuning> {
    tune_fixed(dev, KernelKind::Gaussian)
}

/// Grid search of a constant bandwidth and mixing weight for either kernel.
/// Bandwidths are multiples of the mean kernel exponent term (`d²` or `d`).
/// Ties keep the first grid point in bandwidth-major order.
pub fn tune_fixed(dev: &TokenSet, kind: KernelKind) -> Result<KnnMtTuning> {
    if dev.is_empty() {
        return Err(Error::Empty("development token set"));
    }
    let terms: Vec<f64> = dev.distances().iter().map(|&d| kind.exponent_term(d)).collect();
    let scale = if terms.is_empty() {
        1.0
    } else {
        (terms.iter().sum::<f64>() / terms.len() as f64).max(1e-6)
    };
    let mut best: Option<KnnMtTuning> = None;
    for factor in TEMPERATURE_FACTORS {
        let temperature = scale * factor;
        let p_e: Vec<SparseDistribution> = dev
            .tokens
            .iter()
            .map(|t| fixed_kernel_distribution(&t.neighbors.values, &t.neighbors.distances, temperature, kind))
            .collect::<Result<_>>()?;
        for lambda in LAMBDA_GRID {
            let mut total = 0.0;
            for (t, pe) in dev.tokens.iter().zip(&p_e) {
                total += step_loss(&mix(&t.p_m, pe, lambda)?, t.y)?;
            }
            let loss = total / dev.len() as f64;
            if best.is_none_or(|b| loss < b.loss) {
                best = Some(KnnMtTuning {
                    temperature,
                    lambda,
                    loss,
                });
            }
        }
    }
    Ok(best.expect("non-empty grid"))
}
