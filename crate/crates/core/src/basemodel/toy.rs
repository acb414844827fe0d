//! Counting-based lexical translation model for position-aligned corpora.
//!
//! `p_m = γ·P(t | x_i) + (1 − γ)·P(t | y_{i−1})`, with both tables estimated
//! by add-α counting on a general-domain corpus. The query is the
//! concatenation of the source embedding of `x_i` and the target embedding of
//! `y_{i−1}` (`<s>` at position 0). Past the end of the source, `x_i` is
//! `</s>`.
//!
//! Embeddings are drawn from a seeded normal distribution and rounded to the
//! half-precision grid, so a query is bit-identical to the key stored for it.
//! Source embeddings have unit expected norm and target embeddings half that,
//! which makes the aligned source token the dominant term of a distance.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{BaseModel, BaseStep, StepContext};
use crate::error::{invalid, Error, Result};
use crate::evalbench::corpus::{DomainCorpus, Vocabulary, BOS, EOS, UNK};
use crate::vecstore::fp16;

const TARGET_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Embedding size; the query dimension is twice this.
    pub embed_dim: usize,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            alpha: 0.001,
            gamma: 0.8,
        }
    }
}

/// Serialized form: counts and hyperparameters; tables and embeddings are rebuilt.
#[derive(Serialize, Deserialize)]
struct ToyFile {
    config: ToyConfig,
    seed: u64,
    vocab: Arc<Vocabulary>,
    translation_counts: Vec<(u32, u32, u32)>,
    bigram_counts: Vec<(u32, u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLexicalModel {
    config: ToyConfig,
    seed: u64,
    vocab: Arc<Vocabulary>,
    translation_counts: BTreeMap<(u32, u32), u32>,
    bigram_counts: BTreeMap<(u32, u32), u32>,
    /// `|src| × |tgt|`, row-stochastic.
    translation: Vec<f64>,
    /// `|tgt| × |tgt|`, row-stochastic.
    bigram: Vec<f64>,
    src_embed: Vec<f32>,
    tgt_embed: Vec<f32>,
}

fn source_at(source: &[u32], i: usize) -> u32 {
    source.get(i).copied().unwrap_or(EOS)
}

impl ToyLexicalModel {
    /// Counts aligned pairs (including `</s>` → `</s>`) and target bigrams.
    pub fn build(corpus: &DomainCorpus, config: ToyConfig, seed: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        let mut translation_counts = BTreeMap::new();
        let mut bigram_counts = BTreeMap::new();
        for (n, s) in corpus.sentences.iter().enumerate() {
            if s.tgt.is_empty() {
                return Err(invalid(format!("sentence {n} has an empty target")));
            }
            if s.src.len() != s.tgt.len() {
                return Err(Error::LengthMismatch {
                    what: "aligned source vs target",
                    left: s.src.len(),
                    right: s.tgt.len(),
                });
            }
            let mut prev = BOS;
            for i in 0..=s.tgt.len() {
                let y = s.tgt.get(i).copied().unwrap_or(EOS);
                *translation_counts.entry((source_at(&s.src, i), y)).or_insert(0) += 1;
                *bigram_counts.entry((prev, y)).or_insert(0) += 1;
                prev = y;
            }
        }
        Self::from_counts(corpus.vocab.clone(), config, seed, translation_counts, bigram_counts)
    }

    fn from_counts(
        vocab: Arc<Vocabulary>,
        config: ToyConfig,
        seed: u64,
        translation_counts: BTreeMap<(u32, u32), u32>,
        bigram_counts: BTreeMap<(u32, u32), u32>,
    ) -> Result<Self> {
        if config.embed_dim == 0 {
            return Err(invalid("embed_dim must be positive"));
        }
        if !(config.alpha >= 0.0 && config.alpha.is_finite()) {
            return Err(invalid("alpha must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&config.gamma) {
            return Err(invalid("gamma must be in [0, 1]"));
        }
        let (vs, vt) = (vocab.src.len(), vocab.tgt.len());
        for (&(a, b), _) in translation_counts.iter() {
            if a as usize >= vs || b as usize >= vt {
                return Err(Error::Format(format!("translation count ({a}, {b}) outside vocabulary")));
            }
        }
        for (&(a, b), _) in bigram_counts.iter() {
            if a as usize >= vt || b as usize >= vt {
                return Err(Error::Format(format!("bigram count ({a}, {b}) outside vocabulary")));
            }
        }
        let translation = normalize_rows(&translation_counts, vs, vt, config.alpha);
        let bigram = normalize_rows(&bigram_counts, vt, vt, config.alpha);

        let e = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src_std = (1.0 / e as f64).sqrt();
        let src_embed = gaussian_fp16(vs * e, src_std, &mut rng);
        let tgt_embed = gaussian_fp16(vt * e, TARGET_SCALE * src_std, &mut rng);
        Ok(Self {
            config,
            seed,
            vocab,
            translation_counts,
            bigram_counts,
            translation,
            bigram,
            src_embed,
            tgt_embed,
        })
    }

    pub fn config(&self) -> ToyConfig {
        self.config
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    /// Row of `P(t | s)`.
    pub fn translation_row(&self, src: u32) -> &[f64] {
        let vt = self.vocab.tgt.len();
        let s = (src as usize).min(self.vocab.src.len() - 1);
        &self.translation[s * vt..(s + 1) * vt]
    }

    /// Row of `P(t | prev)`.
    pub fn bigram_row(&self, prev: u32) -> &[f64] {
        let vt = self.vocab.tgt.len();
        let p = (prev as usize).min(vt - 1);
        &self.bigram[p * vt..(p + 1) * vt]
    }

    /// Step for an explicit `(x_i, y_{i−1})` pair.
    pub fn step_tokens(&self, src: u32, prev: u32) -> BaseStep {
        let src = if (src as usize) < self.vocab.src.len() { src } else { UNK };
        let prev = if (prev as usize) < self.vocab.tgt.len() { prev } else { UNK };
        let g = self.config.gamma;
        let p_m = self
            .translation_row(src)
            .iter()
            .zip(self.bigram_row(prev))
            .map(|(a, b)| g * a + (1.0 - g) * b)
            .collect();
        let e = self.config.embed_dim;
        let mut q = Vec::with_capacity(2 * e);
        q.extend_from_slice(&self.src_embed[src as usize * e..(src as usize + 1) * e]);
        q.extend_from_slice(&self.tgt_embed[prev as usize * e..(prev as usize + 1) * e]);
        BaseStep { p_m, q }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ToyFile {
            config: self.config,
            seed: self.seed,
            vocab: self.vocab.clone(),
            translation_counts: self.translation_counts.iter().map(|(&(a, b), &c)| (a, b, c)).collect(),
            bigram_counts: self.bigram_counts.iter().map(|(&(a, b), &c)| (a, b, c)).collect(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &file)?;
        out.write_all(b"\n")?;
        Ok(out.flush()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: ToyFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        let collect = |v: Vec<(u32, u32, u32)>| v.into_iter().map(|(a, b, c)| ((a, b), c)).collect();
        Self::from_counts(
            file.vocab,
            file.config,
            file.seed,
            collect(file.translation_counts),
            collect(file.bigram_counts),
        )
    }
}

fn normalize_rows(counts: &BTreeMap<(u32, u32), u32>, rows: usize, cols: usize, alpha: f64) -> Vec<f64> {
    let mut table = vec![0.0; rows * cols];
    for (&(r, c), &n) in counts {
        table[r as usize * cols + c as usize] = n as f64;
    }
    for row in table.chunks_exact_mut(cols) {
        let total: f64 = row.iter().sum::<f64>() + alpha * cols as f64;
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x = (*x + alpha) / total);
        } else {
            row.fill(1.0 / cols as f64);
        }
    }
    table
}

fn gaussian_fp16(n: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let normal = Normal::new(0.0, std).expect("finite std");
    (0..n)
        .map(|_| fp16::fp16_decode(fp16::fp16_encode(normal.sample(rng) as f32)))
        .collect()
}

impl BaseModel for ToyLexicalModel {
    fn dim(&self) -> usize {
        2 * self.config.embed_dim
    }

    fn vocab_size(&self) -> usize {
        self.vocab.tgt.len()
    }

    fn eos(&self) -> u32 {
        EOS
    }

    fn step(&self, ctx: StepContext<'_>) -> Result<BaseStep> {
        let i = ctx.prefix.len();
        let prev = if i == 0 { BOS } else { ctx.prefix[i - 1] };
        Ok(self.step_tokens(source_at(ctx.source, i), prev))
    }

    fn check_pair(&self, source: &[u32], target: &[u32]) -> Result<()> {
        if source.len() != target.len() {
            return Err(Error::LengthMismatch {
                what: "aligned source vs target",
                left: source.len(),
                right: target.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basemodel::force_decode_keys;
    use crate::evalbench::corpus::{SentencePair, Vocab};

    fn tiny() -> DomainCorpus {
        let mut src = Vocab::new();
        let mut tgt = Vocab::new();
        src.insert("a");
        tgt.insert("X");
        tgt.insert("Y");
        let vocab = Arc::new(Vocabulary {
            src,
            tgt,
            domains: vec!["general".into()],
        });
        DomainCorpus::new(
            vocab,
            vec![SentencePair {
                src: vec![3],
                tgt: vec![3],
                domain: 0,
            }],
        )
    }

    #[test]
    fn single_pair_without_smoothing() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig { alpha: 0.0, ..Default::default() }, 0).unwrap();
        assert_eq!(m.translation_row(3)[3], 1.0);
        // unseen row is uniform
        assert!(m.translation_row(UNK).iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn heavy_smoothing_approaches_uniform() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig { alpha: 1e9, ..Default::default() }, 0).unwrap();
        assert!(m.translation_row(3).iter().all(|&p| (p - 0.2).abs() < 1e-8));
    }

    #[test]
    fn rows_sum_to_one() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig::default(), 0).unwrap();
        for s in 0..4 {
            assert!((m.translation_row(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        for t in 0..5 {
            assert!((m.bigram_row(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_one_ignores_prefix() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig { gamma: 1.0, ..Default::default() }, 0).unwrap();
        assert_eq!(m.step_tokens(3, BOS).p_m, m.step_tokens(3, 4).p_m);
    }

    #[test]
    fn markov_in_last_token() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig::default(), 0).unwrap();
        let src = [3, 3, 3];
        let a = m.step(StepContext { sentence: 0, source: &src, prefix: &[4, 3] }).unwrap();
        let b = m.step(StepContext { sentence: 9, source: &src, prefix: &[3, 3] }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.q.len(), m.dim());
    }

    #[test]
    fn force_decode_adds_eos_record() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig::default(), 0).unwrap();
        let recs = force_decode_keys(&m, 0, &[3, 3], &[3, 4]).unwrap();
        assert_eq!(recs.iter().map(|r| r.value).collect::<Vec<_>>(), vec![3, 4, EOS]);
        assert!(force_decode_keys(&m, 0, &[3], &[3, 4]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = ToyLexicalModel::build(&tiny(), ToyConfig::default(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("base.json");
        m.save(&path).unwrap();
        assert_eq!(ToyLexicalModel::load(&path).unwrap(), m);
    }

    #[test]
    fn build_errors() {
        let mut c = tiny();
        c.sentences[0].tgt.clear();
        c.sentences[0].src.clear();
        assert!(ToyLexicalModel::build(&c, ToyConfig::default(), 0).is_err());
        c.sentences.clear();
        assert!(ToyLexicalModel::build(&c, ToyConfig::default(), 0).is_err());
    }
}
