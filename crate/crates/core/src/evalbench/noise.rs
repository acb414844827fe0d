//! EDA-style token noise: each token is selected with probability `p`, and a
//! selected token undergoes one of four operations chosen uniformly.
//!
//! - synonym: replaced by another member of its synonym class;
//! - insert: kept, and a synonym of it is inserted at a random position;
//! - swap: kept, and two random positions of the sentence are exchanged;
//! - delete: dropped.
//!
//! Replacements are applied in token order, then insertions, then swaps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::DomainCorpus;
use super::synth::{derive_seed, SynonymClasses};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdaOp {
    Synonym,
    Insert,
    Swap,
    Delete,
}

impl EdaOp {
    pub const ALL: [EdaOp; 4] = [EdaOp::Synonym, EdaOp::Insert, EdaOp::Swap, EdaOp::Delete];
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoiseStats {
    pub tokens: usize,
    pub selected: usize,
    /// Indexed like [`EdaOp::ALL`].
    pub ops: [usize; 4],
}

impl NoiseStats {
    pub fn selected_fraction(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.selected as f64 / self.tokens as f64
        }
    }
}

fn synonym(token: u32, synonyms: &SynonymClasses, rng: &mut ChaCha8Rng) -> u32 {
    let class = synonyms.class(token);
    let others: Vec<u32> = class.iter().copied().filter(|&t| t != token).collect();
    if others.is_empty() {
        token
    } else {
        others[rng.random_range(0..others.len())]
    }
}

pub fn eda_noise(sentence: &[u32], p: f64, seed: u64, synonyms: &SynonymClasses) -> Result<Vec<u32>> {
    eda_noise_with_stats(sentence, p, seed, synonyms, &mut NoiseStats::default())
}

/// Like [`eda_noise`], accumulating selection counts into `stats`.
pub fn eda_noise_with_stats(
    sentence: &[u32],
    p: f64,
    seed: u64,
    synonyms: &SynonymClasses,
    stats: &mut NoiseStats,
) -> Result<Vec<u32>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("noise probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(sentence.len() + 4);
    let mut inserts = Vec::new();
    let mut swaps = 0usize;
    stats.tokens += sentence.len();
    for &t in sentence {
        if !rng.random_bool(p) {
            out.push(t);
            continue;
        }
        stats.selected += 1;
        let op = EdaOp::ALL[rng.random_range(0..4)];
        stats.ops[op as usize] += 1;
        match op {
            EdaOp::Synonym => out.push(synonym(t, synonyms, &mut rng)),
            EdaOp::Insert => {
                out.push(t);
                inserts.push(synonym(t, synonyms, &mut rng));
            }
            EdaOp::Swap => {
                out.push(t);
                swaps += 1;
            }
            EdaOp::Delete => {}
        }
    }
    for t in inserts {
        let at = rng.random_range(0..=out.len());
        out.insert(at, t);
    }
    for _ in 0..swaps {
        if out.len() < 2 {
            break;
        }
        let a = rng.random_range(0..out.len());
        let mut b = rng.random_range(0..out.len() - 1);
        if b >= a {
            b += 1;
        }
        out.swap(a, b);
    }
    Ok(out)
}

/// Noises every source sentence with a per-sentence seed; targets are untouched.
pub fn noise_corpus(
    corpus: &DomainCorpus,
    p: f64,
    seed: u64,
    synonyms: &SynonymClasses,
) -> Result<(DomainCorpus, NoiseStats)> {
    let mut stats = NoiseStats::default();
    let mut out = corpus.clone();
    for (n, s) in out.sentences.iter_mut().enumerate() {
        s.src = eda_noise_with_stats(&s.src, p, derive_seed(seed, n as u64), synonyms, &mut stats)?;
    }
    Ok((out, stats))
}
