//! Command-line driver: the offline stages that build a bundle directory,
//! evaluation, a terminal chat and the HTTP server.
//!
//! Every flag can also be given in a `key = value` config file passed with
//! `--config`; keys are the long flag names (`-` and `_` are equivalent).
//! Flags given on the command line win over the file.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use coachbot_core::ingest::NoiseFilter;
use coachbot_core::matching::MatchField;
use coachbot_core::ranker::{Activation, SelectionPolicy, TargetMode, TrainConfig};
use coachbot_core::service::{
    self, build_index, evaluate, load_corpus, load_knowledge_base, load_models, parse_heldout, parse_key_values,
    read_manifest, save_corpus, save_models, train_bundle_ranker, train_embeddings, write_manifest, AnswerOptions,
    BundleManifest, EmbeddingConfig, EngineBundle, RankerTraining, RANKER_FILE,
};
use coachbot_core::text::PvdmConfig;

use crate::api::{self, AppState, Defaults};

#[derive(Debug, Parser)]
#[command(name = "coachbot", version, about = "Retrieval-based counselling chatbot")]
pub struct Cli {
    /// `key = value` file supplying defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse and clean a JSON-lines corpus into a new bundle directory.
    Ingest(IngestArgs),
    /// Train the title and reply paragraph-vector models and fit TF-IDF.
    TrainEmbeddings(EmbedArgs),
    /// Build the dense title index.
    BuildIndex(BundleArg),
    /// Train the response ranker.
    TrainRanker(RankerArgs),
    /// Report recall@k on held-out query/response pairs.
    Eval(EvalArgs),
    /// Interactive chat in the terminal.
    Chat(ChatArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct BundleArg {
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One regular expression per line; matching posts are dropped.
    #[arg(long)]
    pub noise_patterns: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    pub bundle: PathBuf,
    #[arg(long)]
    pub titles_dim: Option<usize>,
    #[arg(long)]
    pub replies_dim: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Context words on each side.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub embedding_epochs: Option<usize>,
    #[arg(long)]
    pub min_count: Option<u64>,
    /// Post text compared by TF-IDF matching: title or title_body.
    #[arg(long)]
    pub match_field: Option<MatchField>,
}

#[derive(Debug, Args)]
pub struct RankerArgs {
    pub bundle: PathBuf,
    /// Target distribution: one_hot or likes.
    #[arg(long)]
    pub mode: Option<TargetMode>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of relational features.
    #[arg(long)]
    pub features: Option<usize>,
    /// relu or softplus.
    #[arg(long)]
    pub activation: Option<Activation>,
    #[arg(long)]
    pub gradient_clip: Option<f64>,
    #[arg(long)]
    pub k1: Option<usize>,
    #[arg(long)]
    pub k2: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub bundle: PathBuf,
    /// JSON lines of `{"query": ..., "response": ...}`.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Comma-separated cut-offs.
    #[arg(long)]
    pub k: Option<String>,
}

#[derive(Debug, Args)]
pub struct SelectionArgs {
    /// argmax or sample.
    #[arg(long)]
    pub policy: Option<SelectionPolicy>,
    #[arg(long)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    pub bundle: PathBuf,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the candidate trace after each answer.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub bundle: PathBuf,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    #[command(flatten)]
    pub selection: SelectionArgs,
}

/// Values from the config file, looked up by flag name.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let values = parse_key_values(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(FileConfig { values })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Ok(FileConfig {
            values: parse_key_values(text)?,
        })
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key `{key}`: {e}")),
        }
    }

    pub fn or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest(a) => ingest(a, &cfg),
        Command::TrainEmbeddings(a) => train_embeddings_cmd(a, &cfg),
        Command::BuildIndex(a) => build_index_cmd(&a.bundle),
        Command::TrainRanker(a) => train_ranker_cmd(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::Chat(a) => chat(a, &cfg),
        Command::Serve(a) => serve(a, &cfg),
    }
}

pub fn ingest(a: IngestArgs, cfg: &FileConfig) -> Result<()> {
    let out: PathBuf = cfg
        .pick(a.out, "out")?
        .context("--out is required (or `out` in the config file)")?;
    let noise = match cfg.pick(a.noise_patterns, "noise_patterns")? {
        Some(p) => {
            let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            NoiseFilter::from_lines(&text).with_context(|| format!("bad pattern in {}", p.display()))?
        }
        None => NoiseFilter::empty(),
    };
    let file = File::open(&a.corpus).with_context(|| format!("opening {}", a.corpus.display()))?;
    let ingested = service::ingest(BufReader::new(file), &noise)?;
    for e in &ingested.errors {
        log::warn!("{}: {e}", a.corpus.display());
    }
    fs::create_dir_all(&out)?;
    save_corpus(&out, &ingested.corpus)?;
    let mut manifest = BundleManifest::new(&ingested.corpus);
    manifest.stats = Some(ingested.stats);
    write_manifest(&out, &mut manifest)?;
    println!("{}", serde_json::to_string(&ingested.stats)?);
    Ok(())
}

fn remove_if_present(dir: &Path, names: &[&str]) -> Result<()> {
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            fs::remove_file(&path).with_context(|| format!("removing stale {name}"))?;
        }
    }
    Ok(())
}

pub fn embedding_config(a: &EmbedArgs, cfg: &FileConfig) -> Result<EmbeddingConfig> {
    let seed = cfg.or(a.seed, "seed", 1)?;
    let window = cfg.pick(a.window, "window")?;
    let epochs = cfg.pick(a.embedding_epochs, "embedding_epochs")?;
    let min_count = cfg.pick(a.min_count, "min_count")?;
    let build = |dim: usize| {
        let mut c = PvdmConfig::default().with_dim(dim);
        c.seed = seed;
        if let Some(w) = window {
            c.window = w;
        }
        if let Some(e) = epochs {
            c.epochs = e;
        }
        if let Some(m) = min_count {
            c.min_count = m;
        }
        c
    };
    Ok(EmbeddingConfig {
        title: build(cfg.or(a.titles_dim, "titles_dim", PvdmConfig::titles().dim)?),
        reply: build(cfg.or(a.replies_dim, "replies_dim", PvdmConfig::replies().dim)?),
    })
}

pub fn train_embeddings_cmd(a: EmbedArgs, cfg: &FileConfig) -> Result<()> {
    let dir = a.bundle.clone();
    let mut manifest = read_manifest(&dir)?;
    let corpus = load_corpus(&dir)?;
    let config = embedding_config(&a, cfg)?;
    if let Some(field) = cfg.pick(a.match_field, "match_field")? {
        manifest.pipeline.matching.field = field;
    }
    let (title, reply, tfidf) = train_embeddings(&corpus, &config, manifest.pipeline.matching.field)?;
    log::info!(
        "title loss {:?}, reply loss {:?}",
        title.epoch_losses().last(),
        reply.epoch_losses().last()
    );
    save_models(&dir, &title, &reply, &tfidf)?;
    // anything built on the previous embeddings is now stale
    remove_if_present(&dir, &["index.bin", "post_ids.txt", RANKER_FILE])?;
    manifest.title_dim = Some(title.dim());
    manifest.reply_dim = Some(reply.dim());
    manifest.seed = Some(config.title.seed);
    manifest.ranker = None;
    write_manifest(&dir, &mut manifest)?;
    println!(
        "trained {} title vectors ({}d) and {} reply vectors ({}d)",
        title.doc_ids().len(),
        title.dim(),
        reply.doc_ids().len(),
        reply.dim()
    );
    Ok(())
}

pub fn build_index_cmd(dir: &Path) -> Result<()> {
    let mut manifest = read_manifest(dir)?;
    let corpus = load_corpus(dir)?;
    let (title, _, _) = load_models(dir)?;
    let index = build_index(&corpus, &title)?;
    index.save(dir)?;
    write_manifest(dir, &mut manifest)?;
    println!("indexed {} posts", index.post_ids().len());
    Ok(())
}

pub fn ranker_training(a: &RankerArgs, cfg: &FileConfig) -> Result<RankerTraining> {
    let defaults = TrainConfig::default();
    Ok(RankerTraining {
        features: cfg.or(a.features, "features", RankerTraining::default().features)?,
        activation: cfg.or(a.activation, "activation", Activation::Relu)?,
        train: TrainConfig {
            learning_rate: cfg.or(a.lr, "lr", defaults.learning_rate)?,
            epochs: cfg.or(a.epochs, "epochs", defaults.epochs)?,
            seed: cfg.or(a.seed, "seed", defaults.seed)?,
            target_mode: cfg.or(a.mode, "mode", defaults.target_mode)?,
            gradient_clip: cfg.pick(a.gradient_clip, "gradient_clip")?,
        },
    })
}

pub fn train_ranker_cmd(a: RankerArgs, cfg: &FileConfig) -> Result<()> {
    let dir = a.bundle.clone();
    let mut manifest = read_manifest(&dir)?;
    let kb = load_knowledge_base(&dir)?;
    let mut pipeline = manifest.pipeline;
    pipeline.k1 = cfg.or(a.k1, "k1", pipeline.k1)?;
    pipeline.matching.k2 = cfg.or(a.k2, "k2", pipeline.matching.k2)?;
    pipeline.matching.cap = cfg.or(a.cap, "cap", pipeline.matching.cap)?;
    if let Err(e) = pipeline.validate() {
        bail!("invalid pipeline settings: {e}");
    }
    let training = ranker_training(&a, cfg)?;
    let trained = train_bundle_ranker(&kb, &pipeline, &training)?;
    let bundle = EngineBundle::new(kb, trained.params, pipeline)?;
    bundle.ranker().save(&dir)?;
    manifest.ranker = Some(bundle.ranker().shape);
    manifest.pipeline = pipeline;
    write_manifest(&dir, &mut manifest)?;
    let h = &trained.loss_history;
    println!(
        "ranker trained for {} epochs: loss {:.6} -> {:.6}",
        h.len(),
        h[0],
        h[h.len() - 1]
    );
    Ok(())
}

pub fn parse_ks(text: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad k `{s}`")))
        .collect::<Result<_>>()?;
    if ks.contains(&0) {
        bail!("k must be at least 1");
    }
    Ok(ks)
}

pub fn eval(a: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let heldout_path: PathBuf = cfg
        .pick(a.heldout, "heldout")?
        .context("--heldout is required (or `heldout` in the config file)")?;
    let ks = parse_ks(&cfg.or(a.k, "k", "1,5".to_string())?)?;
    let bundle = EngineBundle::load(&a.bundle)?;
    let text = fs::read_to_string(&heldout_path).with_context(|| format!("reading {}", heldout_path.display()))?;
    let heldout = parse_heldout(&text).with_context(|| format!("parsing {}", heldout_path.display()))?;
    let report = evaluate(&bundle, &heldout, &ks);
    println!("queries: {} (failed: {})", report.queries, report.failed);
    for r in &report.recall {
        println!("recall@{}: {:.4}", r.k, r.recall);
    }
    Ok(())
}

pub fn chat(a: ChatArgs, cfg: &FileConfig) -> Result<()> {
    let bundle = EngineBundle::load(&a.bundle)?;
    let options = AnswerOptions {
        policy: cfg.pick(a.selection.policy, "policy")?,
        temperature: cfg.pick(a.selection.temperature, "temperature")?,
        seed: cfg.pick(a.seed, "seed")?,
    };
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    write!(stdout, "> ")?;
    stdout.flush()?;
    for line in stdin.lock().lines() {
        let line = line?;
        if matches!(line.trim(), "quit" | "exit") {
            break;
        }
        match bundle.answer(&line, &options) {
            Ok(r) => {
                println!("{}", r.response_text);
                if a.trace {
                    for (i, c) in r.trace.candidates.iter().enumerate() {
                        let mark = if i == r.trace.selected_index { '*' } else { ' ' };
                        println!(
                            "  {mark} p={:.3} match={:.3} [{}#{}] {}",
                            c.probability, c.match_score, c.post_id, c.reply_index, c.text
                        );
                    }
                    if r.trace.fallback {
                        println!("  (no known words: matched over the whole corpus)");
                    }
                }
            }
            Err(service::ServiceError::InvalidQuery) => println!("(say something)"),
            Err(e) => println!("error: {e}"),
        }
        write!(stdout, "> ")?;
        stdout.flush()?;
    }
    Ok(())
}

pub fn serve(a: ServeArgs, cfg: &FileConfig) -> Result<()> {
    let port: u16 = cfg.or(a.port, "port", 8080)?;
    let host: String = cfg.or(a.host, "host", "127.0.0.1".to_string())?;
    let defaults = Defaults {
        policy: cfg.pick(a.selection.policy, "policy")?,
        temperature: cfg.pick(a.selection.temperature, "temperature")?,
    };
    let bundle = EngineBundle::load(&a.bundle)?;
    let app = api::router(AppState::new(bundle, defaults));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .with_context(|| format!("binding {host}:{port}"))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app).await?;
        Ok(())
    })
}
