//! Synthetic benchmark, metrics, experiment harness and command-line interface.

pub mod bleu;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod harness;
pub mod metrics;
pub mod noise;
pub mod synth;

pub use bleu::{bleu, bleu_smoothed, bleu_text, paired_bootstrap, BleuStats};
pub use config::ExperimentConfig;
pub use corpus::{DomainCorpus, SentencePair, Vocab, Vocabulary};
pub use metrics::{perplexity, Metric, MetricSink, PerplexityMode};
pub use noise::{eda_noise, noise_corpus, NoiseStats};
pub use synth::{gen_corpus, SynthTask, SynthTaskConfig, TokenClass};
