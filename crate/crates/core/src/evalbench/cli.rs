//! The `kster` command line.
//!
//! Every subcommand works inside a directory (`--dir`, default `.`):
//!
//! ```text
//! config.toml          resolved configuration, written by gen-data
//! task.json            vocabulary, token classes, synonyms, ambiguous entries
//! data/{domain}.{split}.jsonl
//! base.json            toy base model
//! store.kstr           datastore
//! adapter.kadp         trained adapter
//! translations.jsonl   output of translate
//! ```
//!
//! The configuration is `--config` when given, else `config.toml` in the
//! directory, else the defaults; `--seed` overrides its seed. Metrics go to
//! stdout, or to `--out`, as a JSON array.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use super::bleu::{bleu, paired_bootstrap, DEFAULT_MAX_N};
use super::config::{ExperimentConfig, IndexKind};
use super::corpus::{DomainCorpus, Vocabulary};
use super::harness::{fixed_params, nprobe_for, prepare, Mdmt};
use super::metrics::{perplexity, MetricSink, PerplexityMode};
use super::noise::noise_corpus;
use super::synth::{derive_seed, gen_corpus, Split, TaskInfo, TokenClass};
use crate::adapter::{checkpoint, AdamConfig, AdapterParams};
use crate::basemodel::ToyLexicalModel;
use crate::error::Error;
use crate::kernels::KernelKind;
use crate::pipeline::{
    build_datastore_from_corpus, collect_tokens, contrastive_eval, decode, mean_loss, smoothing_attribution,
    train_on_tokens, tune_knnmt, Retrieval, RetrievalMode, System,
};
use crate::vecstore::{Datastore, IvfPqIndex, IvfPqParams};

const CONFIG_FILE: &str = "config.toml";
const TASK_FILE: &str = "task.json";
const BASE_FILE: &str = "base.json";
const STORE_FILE: &str = "store.kstr";
const ADAPTER_FILE: &str = "adapter.kadp";
const TRANSLATIONS_FILE: &str = "translations.jsonl";

#[derive(Parser)]
#[command(name = "kster", version, about = "Kernel-smoothed decoding with token-level example retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Working directory.
    #[arg(long, default_value = ".")]
    dir: PathBuf,
    /// Configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write metrics here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Target {
    /// Domain name, or `all`; defaults to the configured store domain.
    #[arg(long)]
    domain: Option<String>,
}

#[derive(Args, Clone)]
struct Subset {
    /// Domain name to evaluate on.
    #[arg(long)]
    domain: String,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpora.
    GenData(Common),
    /// Build the toy base model on the general training split.
    BuildBase(Common),
    /// Force-decode training splits into a datastore.
    BuildDatastore {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Train the adapter on the datastore's training splits.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        target: Target,
    },
    /// Decode a split and report BLEU.
    Translate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Subset,
        /// Decode with the base model only.
        #[arg(long)]
        base_only: bool,
    },
    /// Perplexity of a split under the base model and the smoothed system.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Subset,
    },
    /// BLEU, bootstrap significance and robustness to source noise.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Subset,
    },
    /// Learnable-part and retrieval-dropout ablations on a mixed store.
    Ablate(Common),
    /// Which target token classes the example-based distribution gets right.
    Attribution {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: Subset,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| format!("unknown split `{s}` (train, dev, test)"))
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(c) => Ctx::new(&c)?.gen_data(),
        Command::BuildBase(c) => Ctx::new(&c)?.build_base(),
        Command::BuildDatastore { common, target } => Ctx::new(&common)?.build_datastore(&target),
        Command::Train { common, target } => Ctx::new(&common)?.train(&target),
        Command::Translate {
            common,
            eval,
            base_only,
        } => Ctx::new(&common)?.translate(&eval, base_only),
        Command::Score { common, eval } => Ctx::new(&common)?.score(&eval),
        Command::Eval { common, eval } => Ctx::new(&common)?.eval(&eval),
        Command::Ablate(c) => Ctx::new(&c)?.ablate(),
        Command::Attribution { common, eval } => Ctx::new(&common)?.attribution(&eval),
    }
}

struct Ctx {
    dir: PathBuf,
    cfg: ExperimentConfig,
    out: Option<PathBuf>,
    sink: MetricSink,
}

impl Ctx {
    fn new(c: &Common) -> CliResult<Self> {
        let path = c.config.clone().or_else(|| {
            let p = c.dir.join(CONFIG_FILE);
            p.exists().then_some(p)
        });
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
                ExperimentConfig::from_toml(&text).map_err(|e| Failure::Usage(e.to_string()))?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = c.seed {
            cfg.seed = seed;
        }
        Ok(Self {
            dir: c.dir.clone(),
            sink: MetricSink::new(cfg.hash()),
            cfg,
            out: c.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn data_path(&self, vocab: &Vocabulary, domain: u16, split: Split) -> PathBuf {
        self.dir
            .join("data")
            .join(format!("{}.{}.jsonl", vocab.domains[domain as usize], split.name()))
    }

    fn finish(self) -> CliResult<()> {
        match &self.out {
            Some(p) => self.sink.write_json(std::io::BufWriter::new(std::fs::File::create(p)?))?,
            None => self.sink.write_json(std::io::stdout().lock())?,
        }
        Ok(())
    }

    fn task(&self) -> CliResult<TaskInfo> {
        let text = std::fs::read_to_string(self.path(TASK_FILE))?;
        Ok(serde_json::from_str(&text).map_err(Error::from)?)
    }

    fn corpus(&self, info: &TaskInfo, domains: &[u16], split: Split) -> CliResult<DomainCorpus> {
        let parts = domains
            .iter()
            .map(|&d| DomainCorpus::read_jsonl(self.data_path(&info.vocab, d, split), Arc::clone(&info.vocab)))
            .collect::<crate::Result<Vec<_>>>()?;
        Ok(DomainCorpus::concat(&parts.iter().collect::<Vec<_>>())?)
    }

    fn domain_id(&self, info: &TaskInfo, name: &str) -> CliResult<u16> {
        info.vocab.domain_id(name).map_err(|e| Failure::Usage(e.to_string()))
    }

    /// `all` or empty selects every domain.
    fn domains(&self, info: &TaskInfo, target: &Target) -> CliResult<Vec<u16>> {
        let name = target.domain.as_deref().unwrap_or(&self.cfg.store_domain);
        if name.is_empty() || name == "all" {
            Ok((0..info.vocab.domains.len() as u16).collect())
        } else {
            Ok(vec![self.domain_id(info, name)?])
        }
    }

    fn base(&self) -> CliResult<ToyLexicalModel> {
        Ok(ToyLexicalModel::load(self.path(BASE_FILE))?)
    }

    fn store(&self) -> CliResult<Datastore> {
        Ok(crate::vecstore::load(self.path(STORE_FILE))?)
    }

    fn adapter(&self) -> CliResult<AdapterParams> {
        Ok(checkpoint::load(self.path(ADAPTER_FILE), AdamConfig::default())?.0)
    }

    fn retrieval<'a>(&self, store: &'a Datastore) -> Retrieval<'a> {
        Retrieval {
            store,
            k: self.cfg.k,
            nprobe: nprobe_for(&self.cfg, store),
        }
    }

    fn gen_data(mut self) -> CliResult<()> {
        let task = gen_corpus(&self.cfg.task(), self.cfg.seed)?;
        std::fs::create_dir_all(self.dir.join("data"))?;
        std::fs::write(self.path(CONFIG_FILE), self.cfg.to_toml())?;
        std::fs::write(
            self.path(TASK_FILE),
            serde_json::to_string_pretty(&task.info).map_err(Error::from)?,
        )?;
        let vocab = Arc::clone(task.vocab());
        for (d, splits) in task.splits.iter().enumerate() {
            for split in Split::ALL {
                let corpus = splits.get(split);
                corpus.write_jsonl(self.data_path(&vocab, d as u16, split))?;
                let key = format!("{}.{}", vocab.domains[d], split.name());
                self.sink.push(format!("sentences.{key}"), corpus.len() as f64);
                self.sink.push(format!("target_tokens.{key}"), corpus.target_tokens() as f64);
            }
        }
        self.sink.push("vocab.src", vocab.src.len() as f64);
        self.sink.push("vocab.tgt", vocab.tgt.len() as f64);
        self.finish()
    }

    fn build_base(mut self) -> CliResult<()> {
        let info = self.task()?;
        let train = self.corpus(&info, &[0], Split::Train)?;
        let base = ToyLexicalModel::build(&train, self.cfg.toy(), self.cfg.seed)?;
        base.save(self.path(BASE_FILE))?;
        let system = System::base_only(&base);
        for d in 0..info.vocab.domains.len() as u16 {
            let dev = self.corpus(&info, &[d], Split::Dev)?;
            let ppl = perplexity(&system, &dev, PerplexityMode::BaseOnly)?;
            self.sink.push(format!("ppl.base.{}.dev", info.vocab.domains[d as usize]), ppl);
        }
        self.finish()
    }

    fn build_datastore(mut self, target: &Target) -> CliResult<()> {
        let info = self.task()?;
        let domains = self.domains(&info, target)?;
        let base = self.base()?;
        let train = self.corpus(&info, &domains, Split::Train)?;
        let mut store = build_datastore_from_corpus(&base, &train, true)?;
        if self.cfg.index == IndexKind::Ivfpq {
            let params = IvfPqParams::for_store(store.len(), store.dim(), self.cfg.seed);
            let index = IvfPqIndex::train(&store, &params)?;
            self.sink.push("datastore.nlist", index.nlist as f64);
            store = store.with_index(index)?;
        }
        crate::vecstore::save(&store, self.path(STORE_FILE))?;
        self.sink.push("datastore.records", store.len() as f64);
        self.sink.push("datastore.dim", store.dim() as f64);
        self.finish()
    }

    fn train(mut self, target: &Target) -> CliResult<()> {
        let info = self.task()?;
        let domains = self.domains(&info, target)?;
        let base = self.base()?;
        let store = self.store()?;
        let (k, nprobe) = (self.cfg.k, nprobe_for(&self.cfg, &store));
        let dev_corpus = self.corpus(&info, &domains, Split::Dev)?;
        let dev = collect_tokens(&base, &store, &dev_corpus, k, nprobe, RetrievalMode::Inference)?;
        let tuning = tune_knnmt(&dev)?;
        let mode = if self.cfg.retrieval_dropout {
            RetrievalMode::Training
        } else {
            RetrievalMode::Inference
        };
        let train_corpus = self.corpus(&info, &domains, Split::Train)?;
        let train = collect_tokens(&base, &store, &train_corpus, k, nprobe, mode)?;
        let mut tc = self.cfg.train(self.cfg.seed);
        tc.fixed_temperature = tuning.temperature;
        tc.fixed_lambda = tuning.lambda;
        let outcome = train_on_tokens(&train, &tc)?;
        checkpoint::save(&outcome.params, Some(&outcome.adam), self.path(ADAPTER_FILE))?;
        let (params, _) = checkpoint::load(self.path(ADAPTER_FILE), AdamConfig::default())?;
        let knnmt = fixed_params(store.dim(), params.h(), KernelKind::Gaussian, &tuning)?;

        self.sink.push("adapter.parameters", params.parameter_count() as f64);
        self.sink.push("knnmt.temperature", tuning.temperature);
        self.sink.push("knnmt.lambda", tuning.lambda);
        for (epoch, loss) in outcome.history.iter().enumerate() {
            self.sink.push(format!("train.loss.epoch{epoch}"), *loss);
        }
        self.sink.push("dev.loss.base", super::harness::base_loss(&dev)?);
        self.sink.push("dev.loss.knnmt", mean_loss(&knnmt, &dev)?);
        self.sink.push("dev.loss.kster", mean_loss(&params, &dev)?);
        self.finish()
    }

    fn translations(&self, system: &System<'_>, corpus: &DomainCorpus) -> CliResult<Vec<Vec<u32>>> {
        let cfg = self.cfg.decode();
        let mut out = Vec::with_capacity(corpus.len());
        for (n, s) in corpus.sentences.iter().enumerate() {
            out.push(decode(system, n, &s.src, &cfg)?);
        }
        Ok(out)
    }

    fn translate(mut self, eval: &Subset, base_only: bool) -> CliResult<()> {
        let info = self.task()?;
        let domain = self.domain_id(&info, &eval.domain)?;
        let corpus = self.corpus(&info, &[domain], eval.split)?;
        let base = self.base()?;
        let (store, params);
        let system = if base_only {
            System::base_only(&base)
        } else {
            store = self.store()?;
            params = self.adapter()?;
            System::smoothed(&base, self.retrieval(&store), &params)?
        };
        let hyps = self.translations(&system, &corpus)?;
        let refs: Vec<Vec<u32>> = corpus.sentences.iter().map(|s| s.tgt.clone()).collect();
        let mut written = corpus.clone();
        for (s, h) in written.sentences.iter_mut().zip(&hyps) {
            s.tgt = h.clone();
        }
        written.write_jsonl(self.path(TRANSLATIONS_FILE))?;
        let name = if base_only { "base" } else { "kster" };
        self.sink.push(format!("bleu.{name}"), bleu(&hyps, &refs, DEFAULT_MAX_N)?);
        self.finish()
    }

    fn score(mut self, eval: &Subset) -> CliResult<()> {
        let info = self.task()?;
        let domain = self.domain_id(&info, &eval.domain)?;
        let corpus = self.corpus(&info, &[domain], eval.split)?;
        let base = self.base()?;
        let store = self.store()?;
        let params = self.adapter()?;
        let system = System::smoothed(&base, self.retrieval(&store), &params)?;
        self.sink.push("ppl.base", perplexity(&system, &corpus, PerplexityMode::BaseOnly)?);
        self.sink.push("ppl.kster", perplexity(&system, &corpus, PerplexityMode::Smoothed)?);
        self.finish()
    }

    fn eval(mut self, eval: &Subset) -> CliResult<()> {
        let info = self.task()?;
        let domain = self.domain_id(&info, &eval.domain)?;
        let corpus = self.corpus(&info, &[domain], eval.split)?;
        let base = self.base()?;
        let store = self.store()?;
        let params = self.adapter()?;
        let plain = System::base_only(&base);
        let kster = System::smoothed(&base, self.retrieval(&store), &params)?;
        let refs: Vec<Vec<u32>> = corpus.sentences.iter().map(|s| s.tgt.clone()).collect();

        let hyps_base = self.translations(&plain, &corpus)?;
        let hyps_kster = self.translations(&kster, &corpus)?;
        let resamples = self.cfg.bootstrap_resamples;
        let seed = derive_seed(self.cfg.seed, 2);
        self.sink.push("bleu.base", bleu(&hyps_base, &refs, DEFAULT_MAX_N)?);
        self.sink.push("bleu.kster", bleu(&hyps_kster, &refs, DEFAULT_MAX_N)?);
        self.sink.push(
            "bootstrap.p_kster_not_better",
            paired_bootstrap(&hyps_kster, &hyps_base, &refs, resamples, seed)?,
        );

        let (noisy, stats) = noise_corpus(&corpus, self.cfg.noise_p, derive_seed(self.cfg.seed, 3), &info.synonyms)?;
        self.sink.push("noise.selected_fraction", stats.selected_fraction());
        let noisy_base = self.translations(&plain, &noisy)?;
        let noisy_kster = self.translations(&kster, &noisy)?;
        self.sink.push("bleu.noisy.base", bleu(&noisy_base, &refs, DEFAULT_MAX_N)?);
        self.sink.push("bleu.noisy.kster", bleu(&noisy_kster, &refs, DEFAULT_MAX_N)?);

        self.sink.push("ppl.base", perplexity(&kster, &corpus, PerplexityMode::BaseOnly)?);
        self.sink.push("ppl.kster", perplexity(&kster, &corpus, PerplexityMode::Smoothed)?);
        self.finish()
    }

    fn ablate(mut self) -> CliResult<()> {
        let (cfg, seed) = (&self.cfg, self.cfg.seed);
        let prepared = prepare(cfg, seed)?;
        let mdmt = Mdmt::new(&prepared, cfg, seed)?;
        let ablation = mdmt.ablation(cfg, cfg.kernel, seed)?;
        let dropout = mdmt.dropout(cfg, cfg.kernel, seed)?;
        self.sink.push("ablation.base", ablation.base);
        for (cell, loss) in super::config::Ablation::ALL.iter().zip(ablation.losses) {
            self.sink.push(format!("ablation.{}", cell.name()), loss);
        }
        self.sink.push("dropout.with", dropout.with_dropout);
        self.sink.push("dropout.without", dropout.without_dropout);
        self.finish()
    }

    fn attribution(mut self, eval: &Subset) -> CliResult<()> {
        let info = self.task()?;
        let domain = self.domain_id(&info, &eval.domain)?;
        let corpus = self.corpus(&info, &[domain], eval.split)?;
        let base = self.base()?;
        let store = self.store()?;
        let params = self.adapter()?;
        let kster = System::smoothed(&base, self.retrieval(&store), &params)?;
        let class_of = |t: u32| info.tgt_classes.get(t as usize).map(|c| c.index());
        let attribution = smoothing_attribution(&kster, &corpus, &class_of, TokenClass::ALL.len())?;
        for class in TokenClass::ALL {
            let i = class.index();
            self.sink.push(format!("attribution.{}.share", class.name()), attribution.share(i));
            self.sink.push(format!("attribution.{}.rate", class.name()), attribution.rate(i));
        }
        self.sink.push("attribution.fraction", attribution.attributed_fraction());

        let pairs = info.contrastive_pairs(&corpus);
        self.sink.push("contrastive.pairs", pairs.len() as f64);
        if !pairs.is_empty() {
            self.sink.push("contrastive.base", contrastive_eval(&System::base_only(&base), &pairs)?);
            self.sink.push("contrastive.kster", contrastive_eval(&kster, &pairs)?);
        }
        self.finish()
    }
}
