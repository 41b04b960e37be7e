//! The `aen` command line.
//!
//! Every subcommand resolves a [`RunConfig`] (flags over `--config` file over
//! defaults), validates it before doing any work, and writes a run manifest
//! next to its output. Failures print one JSON line to stderr:
//! `{"error":{"kind":"...","message":"..."}}`.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::analysis::{dimension_ks_analysis, estimate_flops, FlopsConfig, PairingPolicy, REFERENCE_FLOPS};
use crate::data::{generate_toy_dataset, load_dataset_jsonl, preprocess_condition, write_dataset_jsonl, ToyDataSpec};
use crate::embeddings::{
    read_embeddings, EmbeddingDirectory, PrecomputedEmbeddings, RemoteEncoder, TextEncoder, DEFAULT_VOCAB_SIZE,
};
use crate::error::{AenError, Result};
use crate::kde::BandwidthRule;
use crate::kernels::KernelKind;
use crate::model::{
    evaluate, gradient_check, read_model, write_model, Architecture, EncoderSpec, FeatureMode, HeadConfig, HeadKind,
    KdeSide, ModelBundle, Optimizer, TrainConfig, Trainer,
};
use crate::rng::fnv1a64;
use crate::runtime::{build_condition_cache, read_cache_for, write_cache, Monitor, DEFAULT_THRESHOLD};

/// Where token embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EmbeddingSource {
    /// Trainable hashed tables held in the model.
    #[default]
    Toy,
    /// A directory of `.aene` files named by text hash.
    File(PathBuf),
    /// An embedding service base URL.
    Remote(String),
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbeddingSource::Toy => f.write_str("toy"),
            EmbeddingSource::File(p) => write!(f, "file:{}", p.display()),
            EmbeddingSource::Remote(u) => write!(f, "remote:{u}"),
        }
    }
}

impl FromStr for EmbeddingSource {
    type Err = AenError;
    fn from_str(s: &str) -> Result<Self> {
        if s == "toy" {
            Ok(EmbeddingSource::Toy)
        } else if let Some(p) = s.strip_prefix("file:").filter(|p| !p.is_empty()) {
            Ok(EmbeddingSource::File(PathBuf::from(p)))
        } else if let Some(u) = s.strip_prefix("remote:").filter(|u| !u.is_empty()) {
            Ok(EmbeddingSource::Remote(u.to_string()))
        } else {
            Err(AenError::Config(format!("embeddings must be toy, file:<dir> or remote:<url>, got {s:?}")))
        }
    }
}

impl TryFrom<String> for EmbeddingSource {
    type Error = AenError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EmbeddingSource> for String {
    fn from(s: EmbeddingSource) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    #[default]
    Adam,
    Sgd,
}

/// Every tunable of a run, as read from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelKind,
    pub bandwidth_rule: BandwidthRule,
    pub head: HeadKind,
    pub kde_side: KdeSide,
    pub features: FeatureMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerName,
    pub class_weight: f64,
    pub use_log_density: bool,
    pub density_clamp: f64,
    pub seed: u64,
    pub embedding_dim: usize,
    pub vocab_size: usize,
    pub embeddings: EmbeddingSource,
    pub threshold: f64,
    /// Request timeout for remote services.
    pub timeout_ms: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let head = HeadConfig::new(HeadKind::Linear, 1);
        RunConfig {
            kernel: KernelKind::Gaussian,
            bandwidth_rule: BandwidthRule::Scott,
            head: head.kind,
            kde_side: KdeSide::Statement,
            features: FeatureMode::Kde,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            batch_size: train.batch_size,
            optimizer: OptimizerName::Adam,
            class_weight: train.class_weight,
            use_log_density: head.use_log_density,
            density_clamp: head.density_clamp,
            seed: 0,
            embedding_dim: 32,
            vocab_size: DEFAULT_VOCAB_SIZE,
            embeddings: EmbeddingSource::Toy,
            threshold: DEFAULT_THRESHOLD,
            timeout_ms: 30_000,
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: match self.optimizer {
                OptimizerName::Adam => Optimizer::adam(),
                OptimizerName::Sgd => Optimizer::Sgd,
            },
            class_weight: self.class_weight,
        }
    }

    /// Architecture for a fresh model. External sources fix the width.
    pub fn architecture(&self, external_dim: Option<usize>) -> Architecture {
        let dim = external_dim.unwrap_or(self.embedding_dim);
        let mut arch = Architecture::new(dim, self.seed);
        arch.kernel = self.kernel;
        arch.bandwidth_rule = self.bandwidth_rule;
        arch.kde_side = self.kde_side;
        arch.head.kind = self.head.clone();
        arch.head.use_log_density = self.use_log_density;
        arch.head.density_clamp = self.density_clamp;
        arch.class_weight = self.class_weight;
        let encoder = match external_dim {
            Some(_) => EncoderSpec::External,
            None => EncoderSpec::Toy {
                vocab_size: self.vocab_size,
            },
        };
        arch.statement_encoder = encoder;
        arch.condition_encoder = encoder;
        arch.with_features(self.features)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.architecture(None).validate()?;
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AenError::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if self.vocab_size == 0 {
            return Err(AenError::Config("vocab_size must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(AenError::Config("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

/// Config flags shared by all subcommands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with RunConfig keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub kernel: Option<KernelKind>,
    /// scott, silverman or fixed:<h>
    #[arg(long = "bandwidth", global = true)]
    pub bandwidth_rule: Option<BandwidthRule>,
    /// linear or mlp:<w1,w2,...>
    #[arg(long, global = true)]
    pub head: Option<HeadKind>,
    #[arg(long, global = true)]
    pub kde_side: Option<KdeSide>,
    /// kde or concat:<uv|uv_absdiff|uv_prod|uv_prod_absdiff>
    #[arg(long, global = true)]
    pub features: Option<FeatureMode>,
    #[arg(long = "lr", global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub optimizer: Option<OptimizerName>,
    #[arg(long, global = true)]
    pub class_weight: Option<f64>,
    #[arg(long, global = true)]
    pub log_density: Option<bool>,
    #[arg(long, global = true)]
    pub density_clamp: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "dim", global = true)]
    pub embedding_dim: Option<usize>,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    /// toy, file:<dir> or remote:<url>
    #[arg(long, global = true)]
    pub embeddings: Option<EmbeddingSource>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Map<String, Value>> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    put(stringify!($field), serde_json::to_value(v)?);
                }
            };
        }
        flag!(kernel);
        flag!(bandwidth_rule);
        flag!(head);
        flag!(kde_side);
        flag!(features);
        flag!(learning_rate);
        flag!(epochs);
        flag!(batch_size);
        flag!(optimizer);
        flag!(class_weight);
        flag!(density_clamp);
        flag!(seed);
        flag!(embedding_dim);
        flag!(vocab_size);
        flag!(embeddings);
        flag!(threshold);
        flag!(timeout_ms);
        if let Some(v) = self.log_density {
            put("use_log_density", Value::Bool(v));
        }
        Ok(m)
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut merged = match serde_json::to_value(RunConfig::default())? {
            Value::Object(m) => m,
            _ => unreachable!("RunConfig serializes to an object"),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| AenError::Config(format!("{}: {e}", path.display())))?;
            let Value::Object(file) = file else {
                return Err(AenError::Config(format!("{}: expected a JSON object", path.display())));
            };
            merged.extend(file);
        }
        merged.extend(self.overrides()?);
        let config: RunConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| AenError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Parser)]
#[command(name = "aen", version, allow_negative_numbers = true, about = "Density-feature text classifier: train, evaluate, cache and monitor")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Where to write the run manifest (default: next to the output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a deterministic toy dataset as JSONL.
    GenToy {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        topics: usize,
        #[arg(long, default_value_t = 6.0)]
        negative_ratio: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; prints one JSON epoch report per line.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write all epoch reports as a JSON array.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a model on a dataset; prints a metrics JSON object.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-dimension KS tests between token embedding files.
    Ks {
        /// `.aene` files or directories of them.
        #[arg(required = true, num_args = 1..)]
        paths: Vec<PathBuf>,
        /// Sample this many pairs instead of testing all pairs.
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode and pool conditions (one per line) into a cache file.
    Cache {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read statements from stdin, print match events as JSON lines.
    Monitor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cache: PathBuf,
    },
    /// FLOPs of one forward pass.
    Flops {
        /// FlopsConfig JSON; defaults to two base-size encoders at 128 tokens.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// A reference total to report a ratio against.
        #[arg(long)]
        reference: Option<f64>,
    },
    /// Compare analytic gradients with central differences on a few pairs.
    GradCheck {
        /// Model to check; a fresh one is built from the config otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 1e-5)]
        epsilon: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenToy { .. } => "gen-toy",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ks { .. } => "ks",
            Command::Cache { .. } => "cache",
            Command::Monitor { .. } => "monitor",
            Command::Flops { .. } => "flops",
            Command::GradCheck { .. } => "grad-check",
        }
    }
}

#[derive(Debug, Serialize)]
struct Digest {
    path: String,
    fnv1a64: String,
    bytes: u64,
}

fn digest_bytes(label: String, bytes: &[u8]) -> Digest {
    Digest {
        path: label,
        fnv1a64: format!("{:016x}", fnv1a64(bytes)),
        bytes: bytes.len() as u64,
    }
}

/// Hashes a file, or a directory as its sorted file names and contents.
fn digest(path: &Path) -> Result<Digest> {
    if !path.exists() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file or directory", path.display()),
        )
        .into());
    }
    if path.is_dir() {
        let mut names: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        let mut all = Vec::new();
        for p in names.iter().filter(|p| p.is_file()) {
            all.extend_from_slice(p.file_name().unwrap_or_default().as_encoded_bytes());
            all.extend(fs::read(p)?);
        }
        Ok(digest_bytes(path.display().to_string(), &all))
    } else {
        Ok(digest_bytes(path.display().to_string(), &fs::read(path)?))
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    argv: Vec<String>,
    seed: u64,
    config: &'a RunConfig,
    inputs: Vec<Digest>,
    outputs: Vec<Digest>,
}

struct Run<'a> {
    config: RunConfig,
    inputs: Vec<Digest>,
    outputs: Vec<PathBuf>,
    stdin_digest: Option<Digest>,
    stdout: &'a mut dyn Write,
}

impl Run<'_> {
    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    fn emit(&mut self, value: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut *self.stdout, value)?;
        self.stdout.write_all(b"\n")?;
        Ok(())
    }

    fn write_json(&mut self, path: &Path, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(path, text)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Embedding source for external encoder slots, prefetching `texts`
    /// from a remote service in one request.
    fn external(&self, texts: &[&str], dim: Option<usize>) -> Result<Option<Box<dyn TextEncoder>>> {
        Ok(match &self.config.embeddings {
            EmbeddingSource::Toy => None,
            EmbeddingSource::File(dir) => Some(Box::new(EmbeddingDirectory::open(dir)?)),
            EmbeddingSource::Remote(url) => {
                let mut remote = RemoteEncoder::new(url.clone(), self.config.timeout());
                if let Some(d) = dim {
                    remote = remote.with_dim(d);
                }
                if texts.is_empty() {
                    Some(Box::new(remote))
                } else {
                    Some(Box::new(PrecomputedEmbeddings::fetch_all(&remote, texts.iter().copied())?))
                }
            }
        })
    }
}

fn load_model(run: &mut Run, path: &Path) -> Result<ModelBundle> {
    run.input(path)?;
    read_model(path)
}

/// Texts an external encoder will be asked for: statements and preprocessed conditions.
fn pair_texts(pairs: &[crate::data::LabeledPair]) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        out.push(p.statement.clone());
        out.push(preprocess_condition(&p.condition)?);
    }
    Ok(out)
}

fn collect_aene(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|e| e == "aene"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn execute(command: &Command, run: &mut Run, stdin: &mut dyn BufRead) -> Result<()> {
    let cfg = run.config.clone();
    match command {
        Command::GenToy {
            n,
            topics,
            negative_ratio,
            out,
        } => {
            let spec = ToyDataSpec {
                seed: cfg.seed,
                n_pairs: *n,
                n_topics: *topics,
                negative_ratio: *negative_ratio,
            };
            let pairs = generate_toy_dataset(&spec)?;
            write_dataset_jsonl(out, &pairs)?;
            run.outputs.push(out.clone());
        }
        Command::Train { data, out, metrics } => {
            run.input(data)?;
            let pairs = load_dataset_jsonl(data)?;
            let texts = pair_texts(&pairs)?;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let external = run.external(&refs, None)?;
            let arch = cfg.architecture(external.as_ref().map(|e| e.dim()));
            let mut bundle = ModelBundle::new(arch)?;
            let mut trainer = Trainer::new(cfg.train_config())?;
            let mut reports = Vec::new();
            for _ in 0..cfg.epochs {
                let report = trainer.train_epoch(&mut bundle, &pairs, external.as_deref())?;
                run.emit(&report)?;
                reports.push(report);
            }
            write_model(out, &bundle)?;
            run.outputs.push(out.clone());
            if let Some(path) = metrics {
                run.write_json(path, &reports)?;
            }
        }
        Command::Eval { model, data, out } => {
            let bundle = load_model(run, model)?;
            run.input(data)?;
            let pairs = load_dataset_jsonl(data)?;
            let texts = pair_texts(&pairs)?;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let external = run.external(&refs, Some(bundle.arch.embedding_dim))?;
            let report = evaluate(&bundle, &pairs, external.as_deref())?;
            run.emit(&report)?;
            if let Some(path) = out {
                run.write_json(path, &report)?;
            }
        }
        Command::Ks { paths, pairs, out } => {
            let files = collect_aene(paths)?;
            let mut loaded = Vec::with_capacity(files.len());
            for f in &files {
                run.input(f)?;
                loaded.push(read_embeddings(f)?);
            }
            let policy = match pairs {
                Some(p) => PairingPolicy::Sampled {
                    pairs: *p,
                    seed: cfg.seed,
                },
                None => PairingPolicy::AllPairs,
            };
            let summary = dimension_ks_analysis(&loaded, policy)?;
            run.emit(&summary)?;
            if let Some(path) = out {
                run.write_json(path, &summary)?;
            }
        }
        Command::Cache { model, conditions, out } => {
            let bundle = load_model(run, model)?;
            run.input(conditions)?;
            let lines: Vec<String> = fs::read_to_string(conditions)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect();
            let prepared = lines.iter().map(|l| preprocess_condition(l)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&str> = prepared.iter().map(String::as_str).collect();
            let external = run.external(&refs, Some(bundle.arch.embedding_dim))?;
            let cache = build_condition_cache(&bundle, &lines, external.as_deref())?.with_threshold(cfg.threshold)?;
            write_cache(out, &cache)?;
            run.outputs.push(out.clone());
        }
        Command::Monitor { model, cache } => {
            let bundle = load_model(run, model)?;
            run.input(cache)?;
            let cache = read_cache_for(cache, &bundle)?;
            let external = run.external(&[], Some(bundle.arch.embedding_dim))?;
            let monitor = Monitor::new(&bundle, &cache, external.as_deref())?;
            let mut consumed = Vec::new();
            let mut line = String::new();
            loop {
                line.clear();
                if stdin.read_line(&mut line)? == 0 {
                    break;
                }
                consumed.extend_from_slice(line.as_bytes());
                let statement = line.trim_end_matches(['\n', '\r']);
                if statement.trim().is_empty() {
                    continue;
                }
                for event in monitor.evaluate_statement(statement)? {
                    run.emit(&event)?;
                }
                run.stdout.flush()?;
            }
            run.stdin_digest = Some(digest_bytes("<stdin>".into(), &consumed));
        }
        Command::Flops { spec, reference } => {
            let config = match spec {
                Some(path) => {
                    run.input(path)?;
                    serde_json::from_str(&fs::read_to_string(path)?)
                        .map_err(|e| AenError::Config(format!("{}: {e}", path.display())))?
                }
                None => FlopsConfig::base_dual_encoder(),
            };
            let report = estimate_flops(&config)?;
            let mut value = serde_json::to_value(report)?;
            value["references"] = REFERENCE_FLOPS
                .iter()
                .map(|(model, flops)| json!({"model": model, "flops": flops, "ratio": report.total as f64 / flops}))
                .collect();
            if let Some(r) = reference {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(AenError::Config("reference must be positive".into()));
                }
                value["reference"] = json!(r);
                value["ratio"] = json!(report.total as f64 / r);
            }
            run.emit(&value)?;
        }
        Command::GradCheck {
            model,
            data,
            n,
            offset,
            epsilon,
        } => {
            run.input(data)?;
            let pairs = load_dataset_jsonl(data)?;
            let end = offset.checked_add(*n).filter(|&e| e <= pairs.len()).ok_or_else(|| {
                AenError::Config(format!("need pairs {offset}..{} but the dataset has {}", offset + n, pairs.len()))
            })?;
            let batch = &pairs[*offset..end];
            let texts = pair_texts(batch)?;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let (bundle, external) = match model {
                Some(path) => {
                    let bundle = load_model(run, path)?;
                    let external = run.external(&refs, Some(bundle.arch.embedding_dim))?;
                    (bundle, external)
                }
                None => {
                    let external = run.external(&refs, None)?;
                    let bundle = ModelBundle::new(cfg.architecture(external.as_ref().map(|e| e.dim())))?;
                    (bundle, external)
                }
            };
            let report = gradient_check(&bundle, batch, *epsilon, external.as_deref())?;
            run.emit(&report)?;
        }
    }
    Ok(())
}

fn manifest_path(cli: &Cli) -> PathBuf {
    if let Some(p) = &cli.manifest {
        return p.clone();
    }
    let out = match &cli.command {
        Command::GenToy { out, .. } | Command::Train { out, .. } | Command::Cache { out, .. } => Some(out),
        Command::Eval { out, .. } | Command::Ks { out, .. } => out.as_ref(),
        _ => None,
    };
    match out {
        Some(o) => {
            let mut s = o.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        }
        None => PathBuf::from(format!("{}.manifest.json", cli.command.name())),
    }
}

/// Runs a parsed command line against the given streams.
pub fn run(cli: &Cli, argv: Vec<String>, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<()> {
    let config = cli.config.resolve()?;
    let mut run = Run {
        config,
        inputs: Vec::new(),
        outputs: Vec::new(),
        stdin_digest: None,
        stdout,
    };
    if let Some(path) = &cli.config.config {
        run.input(path)?;
    }
    execute(&cli.command, &mut run, stdin)?;
    run.stdout.flush()?;
    let mut inputs = std::mem::take(&mut run.inputs);
    inputs.extend(run.stdin_digest.take());
    let outputs = run.outputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "aen",
        version: env!("CARGO_PKG_VERSION"),
        command: cli.command.name(),
        argv,
        seed: run.config.seed,
        config: &run.config,
        inputs,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(manifest_path(cli), text)?;
    Ok(())
}

/// The machine-readable error line.
pub fn error_line(kind: &str, message: &str) -> String {
    json!({"error": {"kind": kind, "message": message}}).to_string()
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            eprintln!("{}", error_line("usage", first.trim_start_matches("error: ")));
            return 2;
        }
    };
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    match run(&cli, args, &mut stdin.lock(), &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}
