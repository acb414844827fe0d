//! Flat experiment configuration, read from TOML.
//!
//! Every key is optional. Task keys mirror [`SynthTaskConfig`], model keys
//! mirror [`ToyConfig`], and the remaining keys drive retrieval, training,
//! decoding and evaluation. `0` means "derive a default" for `hidden`,
//! `nprobe` and `max_len`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synth::SynthTaskConfig;
use crate::adapter::Learnable;
use crate::basemodel::ToyConfig;
use crate::error::{invalid, Result};
use crate::kernels::KernelKind;
use crate::pipeline::{DecodeConfig, DecodeMode, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ablation {
    Both,
    Kernel,
    Weight,
    None,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::None, Ablation::Kernel, Ablation::Weight, Ablation::Both];

    pub fn learnable(self) -> Learnable {
        match self {
            Ablation::Both => Learnable::BOTH,
            Ablation::Kernel => Learnable::KERNEL,
            Ablation::Weight => Learnable::WEIGHT,
            Ablation::None => Learnable::NONE,
        }
    }

    pub fn name(self) -> &'static str {
        self.learnable().name()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Exact,
    Ivfpq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,

    pub domains: usize,
    pub shared_vocab: usize,
    pub ambiguous_vocab: usize,
    pub exclusive_vocab: usize,
    pub ambiguity_degree: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_sentences: usize,
    pub general_train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub synonym_class_size: usize,
    pub collocate_prob: f64,
    pub zipf_exponent: f64,

    pub embed_dim: usize,
    pub alpha: f64,
    pub gamma: f64,

    /// Domain whose training split fills the datastore; empty for one mixed store.
    pub store_domain: String,
    pub index: IndexKind,
    pub nprobe: usize,
    pub k: usize,

    pub kernel: KernelKind,
    pub learnable: Ablation,
    pub retrieval_dropout: bool,
    pub epochs: usize,
    pub batch_tokens: usize,
    pub lr: f64,
    pub hidden: usize,

    pub decode: DecodeMode,
    pub beam: usize,
    pub decode_max_len: usize,
    pub length_normalize: bool,

    pub noise_p: f64,
    pub bootstrap_resamples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let task = SynthTaskConfig::default();
        let toy = ToyConfig::default();
        Self {
            seed: 1,
            domains: task.domains,
            shared_vocab: task.shared_vocab,
            ambiguous_vocab: task.ambiguous_vocab,
            exclusive_vocab: task.exclusive_vocab,
            ambiguity_degree: task.ambiguity_degree,
            min_len: task.min_len,
            max_len: task.max_len,
            train_sentences: task.train_sentences,
            general_train_sentences: task.general_train_sentences,
            dev_sentences: task.dev_sentences,
            test_sentences: task.test_sentences,
            synonym_class_size: task.synonym_class_size,
            collocate_prob: task.collocate_prob,
            zipf_exponent: task.zipf_exponent,
            embed_dim: toy.embed_dim,
            alpha: toy.alpha,
            gamma: toy.gamma,
            store_domain: String::new(),
            index: IndexKind::Exact,
            nprobe: 0,
            k: 16,
            kernel: KernelKind::Gaussian,
            learnable: Ablation::Both,
            retrieval_dropout: true,
            epochs: 20,
            batch_tokens: 64,
            lr: 0.005,
            hidden: 0,
            decode: DecodeMode::Greedy,
            beam: 4,
            decode_max_len: 0,
            length_normalize: false,
            noise_p: 0.1,
            bootstrap_resamples: 1000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.task().validate()?;
        self.train(self.seed).validate()?;
        if self.beam == 0 {
            return Err(invalid("beam must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.noise_p) {
            return Err(invalid("noise_p must be in [0, 1]"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(invalid("bootstrap_resamples must be at least 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn task(&self) -> SynthTaskConfig {
        SynthTaskConfig {
            domains: self.domains,
            shared_vocab: self.shared_vocab,
            ambiguous_vocab: self.ambiguous_vocab,
            exclusive_vocab: self.exclusive_vocab,
            ambiguity_degree: self.ambiguity_degree,
            min_len: self.min_len,
            max_len: self.max_len,
            train_sentences: self.train_sentences,
            general_train_sentences: self.general_train_sentences,
            dev_sentences: self.dev_sentences,
            test_sentences: self.test_sentences,
            synonym_class_size: self.synonym_class_size,
            collocate_prob: self.collocate_prob,
            zipf_exponent: self.zipf_exponent,
        }
    }

    pub fn toy(&self) -> ToyConfig {
        ToyConfig {
            embed_dim: self.embed_dim,
            alpha: self.alpha,
            gamma: self.gamma,
        }
    }

    pub fn nprobe(&self) -> Option<usize> {
        match self.index {
            IndexKind::Exact => None,
            IndexKind::Ivfpq => Some(self.nprobe),
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            k: self.k,
            retrieval_dropout: self.retrieval_dropout,
            epochs: self.epochs,
            batch_tokens: self.batch_tokens,
            lr: self.lr,
            seed,
            kernel: self.kernel,
            learnable: self.learnable.learnable(),
            hidden: (self.hidden > 0).then_some(self.hidden),
            nprobe: self.nprobe(),
            ..TrainConfig::default()
        }
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            mode: self.decode,
            beam: self.beam,
            max_len: (self.decode_max_len > 0).then_some(self.decode_max_len),
            length_normalize: self.length_normalize,
        }
    }
}
