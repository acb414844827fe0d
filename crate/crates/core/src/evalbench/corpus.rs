//! Token vocabularies and parallel corpora, with the JSONL interchange format.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const SPECIALS: [&str; 3] = ["<unk>", "<s>", "</s>"];

/// String ↔ id table. Ids 0..3 are always `<unk>`, `<s>`, `</s>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.insert(s);
        }
        v
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Unknown tokens map to [`UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(SPECIALS[0], String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(a, b)| a != b) {
            return Err(Error::Format("vocabulary must start with <unk> <s> </s>".into()));
        }
        let mut v = Self {
            tokens: Vec::with_capacity(tokens.len()),
            index: HashMap::with_capacity(tokens.len()),
        };
        for t in &tokens {
            if v.index.contains_key(t) {
                return Err(Error::Format(format!("duplicate vocabulary entry {t:?}")));
            }
            v.insert(t);
        }
        Ok(v)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Source and target vocabularies plus domain names; shared by every split of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub src: Vocab,
    pub tgt: Vocab,
    pub domains: Vec<String>,
}

impl Vocabulary {
    pub fn domain_id(&self, name: &str) -> Result<u16> {
        self.domains
            .iter()
            .position(|d| d == name)
            .map(|i| i as u16)
            .ok_or_else(|| invalid(format!("unknown domain {name:?}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")?;
        Ok(out.flush()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub domain: u16,
}

/// A list of sentence pairs over a shared [`Vocabulary`].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainCorpus {
    pub vocab: Arc<Vocabulary>,
    pub sentences: Vec<SentencePair>,
}

#[derive(Serialize, Deserialize)]
struct JsonPair {
    src: Vec<String>,
    tgt: Vec<String>,
    domain: String,
}

impl DomainCorpus {
    pub fn new(vocab: Arc<Vocabulary>, sentences: Vec<SentencePair>) -> Self {
        Self { vocab, sentences }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Target tokens, excluding end-of-sequence.
    pub fn target_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.tgt.len()).sum()
    }

    pub fn domain(&self, id: u16) -> DomainCorpus {
        self.filter(|s| s.domain == id)
    }

    pub fn filter(&self, keep: impl Fn(&SentencePair) -> bool) -> DomainCorpus {
        Self {
            vocab: self.vocab.clone(),
            sentences: self.sentences.iter().filter(|s| keep(s)).cloned().collect(),
        }
    }

    /// Concatenates corpora that share one vocabulary.
    pub fn concat(parts: &[&DomainCorpus]) -> Result<DomainCorpus> {
        let first = parts.first().ok_or(Error::Empty("corpus list"))?;
        let mut sentences = Vec::new();
        for p in parts {
            if p.vocab != first.vocab {
                return Err(invalid("cannot concatenate corpora with different vocabularies"));
            }
            sentences.extend(p.sentences.iter().cloned());
        }
        Ok(Self::new(first.vocab.clone(), sentences))
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for s in &self.sentences {
            let line = JsonPair {
                src: s.src.iter().map(|&t| self.vocab.src.token(t).to_string()).collect(),
                tgt: s.tgt.iter().map(|&t| self.vocab.tgt.token(t).to_string()).collect(),
                domain: self
                    .vocab
                    .domains
                    .get(s.domain as usize)
                    .cloned()
                    .ok_or_else(|| invalid(format!("domain id {} has no name", s.domain)))?,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(out.flush()?)
    }

    /// Reads one JSON object per line; unknown tokens become `<unk>`.
    pub fn read_jsonl(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut sentences = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let pair: JsonPair =
                serde_json::from_str(&line).map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
            sentences.push(SentencePair {
                src: pair.src.iter().map(|t| vocab.src.id(t)).collect(),
                tgt: pair.tgt.iter().map(|t| vocab.tgt.id(t)).collect(),
                domain: vocab.domain_id(&pair.domain)?,
            });
        }
        Ok(Self::new(vocab, sentences))
    }
}
