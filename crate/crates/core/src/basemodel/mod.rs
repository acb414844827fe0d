//! Frozen base models: per-step model distribution `p_m` and query vector.

mod replay;
mod toy;

pub use replay::{record_replay, ReplayModel, ReplaySentence};
pub use toy::{ToyConfig, ToyLexicalModel};

use crate::error::{Error, Result};
use crate::vecstore::ExampleRecord;

/// Output of one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseStep {
    /// Dense next-token distribution over the target vocabulary.
    pub p_m: Vec<f64>,
    pub q: Vec<f32>,
}

/// Inputs of one decoding step. The position is `prefix.len()`.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    /// Index of the sentence in its corpus; only file-backed models use it.
    pub sentence: usize,
    pub source: &'a [u32],
    pub prefix: &'a [u32],
}

pub trait BaseModel {
    /// Query/key dimension.
    fn dim(&self) -> usize;

    /// Target vocabulary size.
    fn vocab_size(&self) -> usize;

    fn eos(&self) -> u32;

    fn step(&self, ctx: StepContext<'_>) -> Result<BaseStep>;

    /// Checks that a pair can be force-decoded into datastore records.
    fn check_pair(&self, _source: &[u32], _target: &[u32]) -> Result<()> {
        Ok(())
    }
}

/// One record per target position plus the end-of-sequence step, keyed by
/// the query computed on the gold prefix.
pub fn force_decode_keys(
    model: &dyn BaseModel,
    sentence: usize,
    source: &[u32],
    target: &[u32],
) -> Result<Vec<ExampleRecord>> {
    model.check_pair(source, target)?;
    let vocab = model.vocab_size();
    let mut out = Vec::with_capacity(target.len() + 1);
    for i in 0..=target.len() {
        let value = if i < target.len() { target[i] } else { model.eos() };
        if value as usize >= vocab {
            return Err(Error::TokenOutOfRange {
                token: value as usize,
                vocab,
            });
        }
        let step = model.step(StepContext {
            sentence,
            source,
            prefix: &target[..i],
        })?;
        out.push(ExampleRecord {
            key: step.q,
            value,
            domain: None,
        });
    }
    Ok(out)
}
