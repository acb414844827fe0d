use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::system::System;
use crate::adapter::PROB_FLOOR;
use crate::basemodel::StepContext;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Beam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub beam: usize,
    /// Maximum emitted tokens, end-of-sequence excluded; `2·|source| + 10` when `None`.
    pub max_len: Option<usize>,
    /// Rank beams by mean instead of summed log-probability.
    pub length_normalize: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: DecodeMode::Greedy,
            beam: 4,
            max_len: None,
            length_normalize: false,
        }
    }
}

fn max_len(cfg: &DecodeConfig, source: &[u32]) -> usize {
    cfg.max_len.unwrap_or(2 * source.len() + 10)
}

pub fn decode(system: &System<'_>, sentence: usize, source: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
    match cfg.mode {
        DecodeMode::Greedy => greedy_decode(system, sentence, source, cfg),
        DecodeMode::Beam => beam_decode(system, sentence, source, cfg),
    }
}

/// Picks the most probable token (lowest id on ties) until end-of-sequence.
pub fn greedy_decode(system: &System<'_>, sentence: usize, source: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
    let eos = system.base.eos();
    let limit = max_len(cfg, source);
    let mut out = Vec::new();
    while out.len() < limit {
        let step = system.step(StepContext {
            sentence,
            source,
            prefix: &out,
        })?;
        let mut best = 0;
        for (t, &p) in step.p.iter().enumerate() {
            if p > step.p[best] {
                best = t;
            }
        }
        if best as u32 == eos {
            break;
        }
        out.push(best as u32);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
    done: bool,
}

impl Hyp {
    fn rank(&self, normalize: bool) -> f64 {
        if normalize {
            self.score / (self.tokens.len() + usize::from(self.done)).max(1) as f64
        } else {
            self.score
        }
    }
}

/// Beam search over summed clamped log-probabilities. Finished hypotheses
/// stay in the beam and compete with extensions. Ties are broken by the
/// token sequence (lexicographic by id, end-of-sequence included), then by
/// the index of the parent beam.
pub fn beam_decode(system: &System<'_>, sentence: usize, source: &[u32], cfg: &DecodeConfig) -> Result<Vec<u32>> {
    if cfg.beam == 0 {
        return Err(invalid("beam width must be at least 1"));
    }
    let eos = system.base.eos();
    let limit = max_len(cfg, source);
    let mut beams = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        done: false,
    }];
    while beams.iter().any(|h| !h.done) {
        let mut candidates: Vec<(Hyp, usize)> = Vec::new();
        for (bi, h) in beams.iter().enumerate() {
            if h.done {
                candidates.push((h.clone(), bi));
                continue;
            }
            if h.tokens.len() >= limit {
                candidates.push((Hyp { done: true, ..h.clone() }, bi));
                continue;
            }
            let step = system.step(StepContext {
                sentence,
                source,
                prefix: &h.tokens,
            })?;
            for (t, &p) in step.p.iter().enumerate() {
                let t = t as u32;
                let mut tokens = h.tokens.clone();
                let done = t == eos;
                if !done {
                    tokens.push(t);
                }
                candidates.push((
                    Hyp {
                        tokens,
                        score: h.score + p.max(PROB_FLOOR).ln(),
                        done,
                    },
                    bi,
                ));
            }
        }
        let norm = cfg.length_normalize;
        candidates.sort_by(|(a, ai), (b, bi)| {
            b.rank(norm)
                .partial_cmp(&a.rank(norm))
                .unwrap_or(Ordering::Equal)
                .then_with(|| sequence_cmp(a, b, eos))
                .then_with(|| ai.cmp(bi))
        });
        candidates.truncate(cfg.beam);
        beams = candidates.into_iter().map(|(h, _)| h).collect();
    }
    Ok(beams.swap_remove(0).tokens)
}

fn sequence_cmp(a: &Hyp, b: &Hyp, eos: u32) -> Ordering {
    let tail = |h: &Hyp| h.done.then_some(eos);
    a.tokens
        .iter()
        .copied()
        .chain(tail(a))
        .cmp(b.tokens.iter().copied().chain(tail(b)))
}
