//! File-backed base model serving precomputed `(q, logits)` streams.
//!
//! Layout (little-endian): magic `KRPL`, version u32, vocabulary size u32,
//! dim u32, sentence count u64, then per sentence a step count u32 followed by
//! `steps × (dim f32 query, vocab f32 logits)`. Step `i` of a sentence is
//! served for any prefix of length `i`; the prefix contents are not checked.
//! End-of-sequence is id 2, matching the corpus vocabularies.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BaseModel, BaseStep, StepContext};
use crate::binio::{Reader, Writer};
use crate::error::{invalid, Error, Result};
use crate::evalbench::corpus::{DomainCorpus, EOS};
use crate::kernels::softmax;

const MAGIC: [u8; 4] = *b"KRPL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySentence {
    /// `steps × dim`.
    pub queries: Vec<f32>,
    /// `steps × vocab`.
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayModel {
    vocab: usize,
    dim: usize,
    sentences: Vec<ReplaySentence>,
}

impl ReplayModel {
    pub fn new(vocab: usize, dim: usize, sentences: Vec<ReplaySentence>) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(invalid("replay vocabulary and dim must be positive"));
        }
        for (n, s) in sentences.iter().enumerate() {
            let steps = s.queries.len() / dim;
            if s.queries.len() != steps * dim || s.logits.len() != steps * vocab {
                return Err(Error::Format(format!("replay sentence {n} has inconsistent array sizes")));
            }
        }
        Ok(Self { vocab, dim, sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn steps(&self, sentence: usize) -> usize {
        self.sentences.get(sentence).map_or(0, |s| s.queries.len() / self.dim)
    }

    /// Every sentence must have one step per target token plus end-of-sequence.
    pub fn check_corpus(&self, corpus: &DomainCorpus) -> Result<()> {
        if corpus.len() != self.len() {
            return Err(Error::LengthMismatch {
                what: "replay sentences vs corpus",
                left: self.len(),
                right: corpus.len(),
            });
        }
        for (n, s) in corpus.sentences.iter().enumerate() {
            if self.steps(n) != s.tgt.len() + 1 {
                return Err(Error::LengthMismatch {
                    what: "replay steps vs target length + 1",
                    left: self.steps(n),
                    right: s.tgt.len() + 1,
                });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub(crate) fn write_to<W: Write>(&self, out: W) -> Result<W> {
        let mut w = Writer::new(out);
        w.bytes(&MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.vocab as u32)?;
        w.u32(self.dim as u32)?;
        w.u64(self.sentences.len() as u64)?;
        for s in &self.sentences {
            let steps = s.queries.len() / self.dim;
            w.u32(steps as u32)?;
            for i in 0..steps {
                w.f32s(&s.queries[i * self.dim..(i + 1) * self.dim])?;
                w.f32s(&s.logits[i * self.vocab..(i + 1) * self.vocab])?;
            }
        }
        w.finish()
    }

    pub(crate) fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(&MAGIC)?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Version(version));
        }
        let vocab = r.u32("vocabulary size")? as usize;
        let dim = r.u32("dim")? as usize;
        let count = r.u64("sentence count")?;
        if vocab == 0 || dim == 0 {
            return Err(Error::Format("replay vocabulary and dim must be positive".into()));
        }
        let mut sentences = Vec::new();
        for _ in 0..count {
            let steps = r.u32("step count")? as usize;
            let mut queries = Vec::with_capacity(steps * dim);
            let mut logits = Vec::with_capacity(steps * vocab);
            for _ in 0..steps {
                queries.extend(r.f32s(dim, "replay query")?);
                logits.extend(r.f32s(vocab, "replay logits")?);
            }
            sentences.push(ReplaySentence { queries, logits });
        }
        r.expect_end()?;
        Self::new(vocab, dim, sentences)
    }
}

impl BaseModel for ReplayModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn eos(&self) -> u32 {
        EOS
    }

    fn step(&self, ctx: StepContext<'_>) -> Result<BaseStep> {
        let s = self
            .sentences
            .get(ctx.sentence)
            .ok_or_else(|| invalid(format!("replay has no sentence {}", ctx.sentence)))?;
        let i = ctx.prefix.len();
        if i >= self.steps(ctx.sentence) {
            return Err(invalid(format!("replay sentence {} has no step {i}", ctx.sentence)));
        }
        let logits: Vec<f64> = s.logits[i * self.vocab..(i + 1) * self.vocab]
            .iter()
            .map(|&x| x as f64)
            .collect();
        Ok(BaseStep {
            p_m: softmax(&logits),
            q: s.queries[i * self.dim..(i + 1) * self.dim].to_vec(),
        })
    }
}

/// Dumps the gold-prefix steps of `model` over `corpus`; logits are `ln p_m`.
pub fn record_replay(model: &dyn BaseModel, corpus: &DomainCorpus) -> Result<ReplayModel> {
    let mut sentences = Vec::with_capacity(corpus.len());
    for (n, s) in corpus.sentences.iter().enumerate() {
        let mut queries = Vec::new();
        let mut logits = Vec::new();
        for i in 0..=s.tgt.len() {
            let step = model.step(StepContext {
                sentence: n,
                source: &s.src,
                prefix: &s.tgt[..i],
            })?;
            queries.extend_from_slice(&step.q);
            logits.extend(step.p_m.iter().map(|&p| p.max(f64::MIN_POSITIVE).ln() as f32));
        }
        sentences.push(ReplaySentence { queries, logits });
    }
    ReplayModel::new(model.vocab_size(), model.dim(), sentences)
}
