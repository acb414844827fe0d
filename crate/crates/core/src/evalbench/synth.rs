//! Synthetic multi-domain translation task.
//!
//! Sentences are position-aligned: every source token has exactly one gold
//! target token. Three kinds of source tokens exist:
//!
//! - shared tokens translate the same way in every domain;
//! - ambiguous tokens have one sense per domain (domain 0, `general`, uses
//!   sense 0) and, with probability `collocate_prob`, are preceded by a
//!   domain-specific collocate so that the left context identifies the sense;
//! - exclusive tokens occur in a single domain only.
//!
//! Within each kind, tokens are drawn with Zipfian frequencies under a
//! per-domain rank permutation, so every domain has its own rare tail.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use super::corpus::{DomainCorpus, SentencePair, Vocab, Vocabulary};
use crate::error::{invalid, Result};
use crate::pipeline::ContrastivePair;

/// Share of shared, ambiguous and exclusive draws.
const KIND_WEIGHTS: [f64; 3] = [0.5, 0.2, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthTaskConfig {
    /// Number of specific domains, not counting `general`.
    pub domains: usize,
    pub shared_vocab: usize,
    pub ambiguous_vocab: usize,
    /// Exclusive source tokens per domain, `general` included.
    pub exclusive_vocab: usize,
    /// Senses per ambiguous source token; at most `domains + 1`.
    pub ambiguity_degree: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train_sentences: usize,
    /// Training sentences of the `general` domain, which the base model is built on.
    pub general_train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub synonym_class_size: usize,
    pub collocate_prob: f64,
    pub zipf_exponent: f64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        Self {
            domains: 2,
            shared_vocab: 300,
            ambiguous_vocab: 10,
            exclusive_vocab: 30,
            ambiguity_degree: 3,
            min_len: 4,
            max_len: 10,
            train_sentences: 200,
            general_train_sentences: 1000,
            dev_sentences: 50,
            test_sentences: 50,
            synonym_class_size: 3,
            collocate_prob: 0.8,
            zipf_exponent: 1.0,
        }
    }
}

impl SynthTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 {
            return Err(invalid("at least one specific domain is required"));
        }
        if self.shared_vocab == 0 || self.exclusive_vocab == 0 {
            return Err(invalid("shared and exclusive vocabularies must be non-empty"));
        }
        if self.ambiguity_degree == 0 || self.ambiguity_degree > self.domains + 1 {
            return Err(invalid(format!(
                "ambiguity_degree must be in 1..={} for {} specific domains",
                self.domains + 1,
                self.domains
            )));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(invalid("sentence lengths need 1 <= min_len <= max_len"));
        }
        if self.synonym_class_size == 0 {
            return Err(invalid("synonym_class_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.collocate_prob) {
            return Err(invalid("collocate_prob must be in [0, 1]"));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return Err(invalid("zipf_exponent must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenClass {
    Special,
    Shared,
    Ambiguous,
    Exclusive,
}

impl TokenClass {
    pub const ALL: [TokenClass; 4] = [Self::Special, Self::Shared, Self::Ambiguous, Self::Exclusive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Special => "special",
            Self::Shared => "shared",
            Self::Ambiguous => "ambiguous",
            Self::Exclusive => "exclusive",
        }
    }
}

/// Partition of source tokens into synonym classes. Specials are singletons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymClasses {
    class_of: Vec<u32>,
    classes: Vec<Vec<u32>>,
}

impl SynonymClasses {
    pub fn new(classes: Vec<Vec<u32>>, vocab_size: usize) -> Result<Self> {
        let mut class_of = vec![u32::MAX; vocab_size];
        for (c, members) in classes.iter().enumerate() {
            for &t in members {
                let slot = class_of
                    .get_mut(t as usize)
                    .ok_or_else(|| invalid(format!("synonym token {t} outside vocabulary")))?;
                if *slot != u32::MAX {
                    return Err(invalid(format!("token {t} is in two synonym classes")));
                }
                *slot = c as u32;
            }
        }
        Ok(Self { class_of, classes })
    }

    /// Members of the token's class, itself included; a token without a class is its own class.
    pub fn class(&self, token: u32) -> std::borrow::Cow<'_, [u32]> {
        match self.class_of.get(token as usize) {
            Some(&c) if c != u32::MAX => std::borrow::Cow::Borrowed(&self.classes[c as usize]),
            _ => std::borrow::Cow::Owned(vec![token]),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.class_of.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguousEntry {
    pub source: u32,
    /// Target token for each sense.
    pub senses: Vec<u32>,
}

/// Everything about a generated task except the sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub config: SynthTaskConfig,
    pub seed: u64,
    pub vocab: Arc<Vocabulary>,
    pub src_classes: Vec<TokenClass>,
    pub tgt_classes: Vec<TokenClass>,
    pub synonyms: SynonymClasses,
    pub ambiguous: Vec<AmbiguousEntry>,
}

impl TaskInfo {
    /// Sense used by `domain` (0 is `general`).
    pub fn sense(&self, domain: u16) -> usize {
        domain as usize % self.config.ambiguity_degree
    }

    /// One contrastive pair per sentence that contains an ambiguous token:
    /// the first ambiguous position is rewritten with every other sense.
    pub fn contrastive_pairs(&self, corpus: &DomainCorpus) -> Vec<ContrastivePair> {
        let mut out = Vec::new();
        for s in &corpus.sentences {
            let Some((pos, entry)) = s
                .src
                .iter()
                .enumerate()
                .find_map(|(i, &t)| self.ambiguous.iter().find(|a| a.source == t).map(|a| (i, a)))
            else {
                continue;
            };
            let contrastive: Vec<Vec<u32>> = entry
                .senses
                .iter()
                .filter(|&&t| t != s.tgt[pos])
                .map(|&t| {
                    let mut c = s.tgt.clone();
                    c[pos] = t;
                    c
                })
                .collect();
            if !contrastive.is_empty() {
                out.push(ContrastivePair {
                    source: s.src.clone(),
                    reference: s.tgt.clone(),
                    contrastive,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DomainCorpus,
    pub dev: DomainCorpus,
    pub test: DomainCorpus,
}

impl Splits {
    pub fn get(&self, split: Split) -> &DomainCorpus {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub info: TaskInfo,
    /// Indexed by domain id; 0 is `general`.
    pub splits: Vec<Splits>,
}

impl SynthTask {
    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.info.vocab
    }

    pub fn domain_count(&self) -> usize {
        self.splits.len()
    }

    /// Union of one split over the given domains.
    pub fn union(&self, split: Split, domains: &[u16]) -> Result<DomainCorpus> {
        let parts: Vec<&DomainCorpus> = domains
            .iter()
            .map(|&d| {
                self.splits
                    .get(d as usize)
                    .map(|s| s.get(split))
                    .ok_or_else(|| invalid(format!("no domain {d}")))
            })
            .collect::<Result<_>>()?;
        DomainCorpus::concat(&parts)
    }

    /// Domain ids of the specific domains.
    pub fn specific_domains(&self) -> Vec<u16> {
        (1..self.splits.len() as u16).collect()
    }

    pub fn all_domains(&self) -> Vec<u16> {
        (0..self.splits.len() as u16).collect()
    }
}

/// Per-stream seed derived from the task seed (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Lexicon {
    shared: Vec<(u32, u32)>,
    ambiguous: Vec<AmbiguousEntry>,
    /// Per domain: (source, target).
    exclusive: Vec<Vec<(u32, u32)>>,
}

struct DomainSampler {
    kinds: WeightedIndex<f64>,
    shared: WeightedIndex<f64>,
    ambiguous: Option<WeightedIndex<f64>>,
    exclusive: WeightedIndex<f64>,
    shared_order: Vec<usize>,
    ambiguous_order: Vec<usize>,
    exclusive_order: Vec<usize>,
    /// Collocate (index into this domain's exclusive list) per ambiguous token.
    collocates: Vec<usize>,
}

fn zipf(n: usize, s: f64) -> Option<WeightedIndex<f64>> {
    if n == 0 {
        return None;
    }
    WeightedIndex::new((0..n).map(|r| 1.0 / ((r + 1) as f64).powf(s))).ok()
}

fn permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

pub fn gen_corpus(cfg: &SynthTaskConfig, seed: u64) -> Result<SynthTask> {
    cfg.validate()?;
    let n_domains = cfg.domains + 1;
    let mut domains = vec!["general".to_string()];
    domains.extend((1..n_domains).map(|d| format!("d{d}")));

    let mut src = Vocab::new();
    let mut tgt = Vocab::new();
    let mut src_classes = vec![TokenClass::Special; src.len()];
    let mut tgt_classes = vec![TokenClass::Special; tgt.len()];
    let mut push = |s: &str, t: &str, class: TokenClass, src: &mut Vocab, tgt: &mut Vocab| {
        let (si, ti) = (src.insert(s), tgt.insert(t));
        if si as usize == src_classes.len() {
            src_classes.push(class);
        }
        if ti as usize == tgt_classes.len() {
            tgt_classes.push(class);
        }
        (si, ti)
    };

    let shared: Vec<(u32, u32)> = (0..cfg.shared_vocab)
        .map(|i| push(&format!("w{i}"), &format!("W{i}"), TokenClass::Shared, &mut src, &mut tgt))
        .collect();
    let mut ambiguous = Vec::new();
    for i in 0..cfg.ambiguous_vocab {
        let mut senses = Vec::new();
        let mut source = 0;
        for s in 0..cfg.ambiguity_degree {
            let (si, ti) = push(&format!("a{i}"), &format!("A{i}.{s}"), TokenClass::Ambiguous, &mut src, &mut tgt);
            source = si;
            senses.push(ti);
        }
        ambiguous.push(AmbiguousEntry { source, senses });
    }
    let exclusive: Vec<Vec<(u32, u32)>> = domains
        .iter()
        .map(|name| {
            (0..cfg.exclusive_vocab)
                .map(|i| {
                    push(
                        &format!("{name}_{i}"),
                        &format!("{}_{i}", name.to_uppercase()),
                        TokenClass::Exclusive,
                        &mut src,
                        &mut tgt,
                    )
                })
                .collect()
        })
        .collect();

    let mut synonym_classes = Vec::new();
    let mut group = |ids: Vec<u32>| {
        for chunk in ids.chunks(cfg.synonym_class_size) {
            synonym_classes.push(chunk.to_vec());
        }
    };
    group(shared.iter().map(|p| p.0).collect());
    group(ambiguous.iter().map(|a| a.source).collect());
    for ex in &exclusive {
        group(ex.iter().map(|p| p.0).collect());
    }
    let synonyms = SynonymClasses::new(synonym_classes, src.len())?;

    let lex = Lexicon {
        shared,
        ambiguous: ambiguous.clone(),
        exclusive,
    };
    let vocab = Arc::new(Vocabulary { src, tgt, domains });
    let info = TaskInfo {
        config: cfg.clone(),
        seed,
        vocab: vocab.clone(),
        src_classes,
        tgt_classes,
        synonyms,
        ambiguous,
    };

    let mut layout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let kinds = WeightedIndex::new(if cfg.ambiguous_vocab == 0 {
        [KIND_WEIGHTS[0], 0.0, KIND_WEIGHTS[2]]
    } else {
        KIND_WEIGHTS
    })
    .expect("positive kind weights");
    let samplers: Vec<DomainSampler> = (0..n_domains)
        .map(|_| DomainSampler {
            kinds: kinds.clone(),
            shared: zipf(cfg.shared_vocab, cfg.zipf_exponent).expect("non-empty"),
            ambiguous: zipf(cfg.ambiguous_vocab, cfg.zipf_exponent),
            exclusive: zipf(cfg.exclusive_vocab, cfg.zipf_exponent).expect("non-empty"),
            shared_order: permutation(cfg.shared_vocab, &mut layout_rng),
            ambiguous_order: permutation(cfg.ambiguous_vocab, &mut layout_rng),
            exclusive_order: permutation(cfg.exclusive_vocab, &mut layout_rng),
            collocates: (0..cfg.ambiguous_vocab)
                .map(|_| layout_rng.random_range(0..cfg.exclusive_vocab))
                .collect(),
        })
        .collect();

    let mut splits = Vec::with_capacity(n_domains);
    for d in 0..n_domains {
        let make = |split: u64, count: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + (d as u64) * 3 + split));
            let sentences = (0..count)
                .map(|_| sample_sentence(cfg, &info, &lex, &samplers[d], d as u16, &mut rng))
                .collect();
            DomainCorpus::new(vocab.clone(), sentences)
        };
        splits.push(Splits {
            train: make(0, if d == 0 { cfg.general_train_sentences } else { cfg.train_sentences }),
            dev: make(1, cfg.dev_sentences),
            test: make(2, cfg.test_sentences),
        });
    }
    Ok(SynthTask { info, splits })
}

#[derive(Clone, Copy)]
enum Slot {
    Shared(usize),
    Ambiguous(usize),
    Exclusive(usize),
}

fn sample_sentence(
    cfg: &SynthTaskConfig,
    info: &TaskInfo,
    lex: &Lexicon,
    sampler: &DomainSampler,
    domain: u16,
    rng: &mut ChaCha8Rng,
) -> SentencePair {
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mut slots: Vec<Slot> = (0..len)
        .map(|_| match sampler.kinds.sample(rng) {
            0 => Slot::Shared(sampler.shared_order[sampler.shared.sample(rng)]),
            1 => {
                let dist = sampler.ambiguous.as_ref().expect("ambiguous weight is zero when empty");
                Slot::Ambiguous(sampler.ambiguous_order[dist.sample(rng)])
            }
            _ => Slot::Exclusive(sampler.exclusive_order[sampler.exclusive.sample(rng)]),
        })
        .collect();
    for i in 1..len {
        if let Slot::Ambiguous(a) = slots[i] {
            if rng.random_bool(cfg.collocate_prob) {
                slots[i - 1] = Slot::Exclusive(sampler.collocates[a]);
            }
        }
    }
    let sense = info.sense(domain);
    let (src, tgt) = slots
        .iter()
        .map(|&slot| match slot {
            Slot::Shared(i) => lex.shared[i],
            Slot::Ambiguous(i) => (lex.ambiguous[i].source, lex.ambiguous[i].senses[sense]),
            Slot::Exclusive(i) => lex.exclusive[domain as usize][i],
        })
        .unzip();
    SentencePair { src, tgt, domain }
}
