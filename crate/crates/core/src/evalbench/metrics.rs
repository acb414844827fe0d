use std::io::Write;

use serde::{Deserialize, Serialize};

use super::corpus::DomainCorpus;
use crate::error::{Error, Result};
use crate::pipeline::{score_sequence, System};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerplexityMode {
    /// `p_m` only, ignoring any retrieval the system carries.
    BaseOnly,
    Smoothed,
}

/// `exp` of the mean per-token negative log-likelihood, end-of-sequence steps included.
pub fn perplexity(system: &System<'_>, corpus: &DomainCorpus, mode: PerplexityMode) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("perplexity corpus"));
    }
    let base_only = System::base_only(system.base);
    let system = match mode {
        PerplexityMode::BaseOnly => &base_only,
        PerplexityMode::Smoothed => system,
    };
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for (n, s) in corpus.sentences.iter().enumerate() {
        nll -= score_sequence(system, n, &s.src, &s.tgt)?;
        tokens += s.tgt.len() + 1;
    }
    Ok((nll / tokens as f64).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub metric: String,
    pub value: f64,
    pub config_hash: String,
}

/// Collects metrics that share one configuration hash.
#[derive(Debug, Clone, Default)]
pub struct MetricSink {
    pub config_hash: String,
    pub metrics: Vec<Metric>,
}

impl MetricSink {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            metrics: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push(Metric {
            metric: name.into(),
            value,
            config_hash: self.config_hash.clone(),
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == name).map(|m| m.value)
    }

    /// A JSON array, one object per metric, followed by a newline.
    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, &self.metrics)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}
