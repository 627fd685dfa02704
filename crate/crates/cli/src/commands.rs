use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hlpnn_core::geo::{build_bias, CityRegistry};
use hlpnn_core::graph::{build_graph, remove_celebrities, train_line, EdgeList, GraphMode, NetworkEmbeddings};
use hlpnn_core::model::ModelDims;
use hlpnn_core::synth::generate;
use hlpnn_core::text::{load_pretrained_embeddings, read_dataset, EncodeConfig, Lexicon, UserRecord};
use hlpnn_core::train::{
    evaluate_samples, load_checkpoint, prepare_samples, run_ablation, run_alpha_sweep, save_checkpoint, train,
    write_sweep_csv, CheckpointMeta, Corpus, Variant,
};
use hlpnn_tensor::Rng;
use serde::Serialize;

use crate::manifest::RunManifest;

/// RNG stream used to fill word vectors missing from a pretrained file.
const PRETRAINED_STREAM: u64 = 4;

/// Invalid invocation; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "hlpnn", version, about = "Hierarchical country and city location prediction for social media users")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration document (model, train, line, world, vocab, graph, paths, seed)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the configuration
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; overrides the configuration
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
    /// Output file or directory
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Training users (JSONL)
    #[arg(long, value_name = "FILE")]
    pub train: Option<PathBuf>,
    /// Development users (JSONL)
    #[arg(long, value_name = "FILE")]
    pub dev: Option<PathBuf>,
    /// Test users (JSONL)
    #[arg(long, value_name = "FILE")]
    pub test: Option<PathBuf>,
    /// City registry (TSV: city, country, lat, lon)
    #[arg(long, value_name = "FILE")]
    pub registry: Option<PathBuf>,
    /// Vocabulary directory from build-vocab; built from the training users when absent
    #[arg(long, value_name = "DIR")]
    pub vocab: Option<PathBuf>,
    /// Network embeddings from embed-graph
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    /// Pretrained word vectors (token followed by word_dim values per line)
    #[arg(long, value_name = "FILE")]
    pub pretrained: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic world: cities.tsv, train/dev/test.jsonl and edges.tsv
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Build word, character, language and time-zone tables from training users
    BuildVocab {
        #[command(flatten)]
        common: Common,
        /// Training users (JSONL)
        #[arg(long, value_name = "FILE")]
        train: Option<PathBuf>,
        /// Keep words seen more than this many times
        #[arg(long, value_name = "N")]
        word_min_count: Option<u64>,
        /// Keep characters seen more than this many times
        #[arg(long, value_name = "N")]
        char_min_count: Option<u64>,
    },
    /// Build the mention graph edge list from user files
    BuildGraph {
        #[command(flatten)]
        common: Common,
        /// User files (JSONL); defaults to the train, dev and test paths of the configuration
        #[arg(long, value_name = "FILE", num_args = 1..)]
        data: Vec<PathBuf>,
        /// Graph construction rule
        #[arg(long, value_name = "MODE")]
        mode: Option<GraphMode>,
        /// Remove users with more distinct mentioners than this
        #[arg(long, value_name = "N")]
        celebrity_threshold: Option<usize>,
    },
    /// Learn network embeddings from an edge list
    EmbedGraph {
        #[command(flatten)]
        common: Common,
        /// Edge list (TSV: src, dst, weight)
        #[arg(long, value_name = "FILE")]
        edges: Option<PathBuf>,
    },
    /// Train a model and keep the checkpoint with the best dev accuracy
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a checkpoint on a user file
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by train
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Users to evaluate (JSONL)
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// City registry; must match the checkpoint's
        #[arg(long, value_name = "FILE")]
        registry: Option<PathBuf>,
        /// Network embeddings from embed-graph
        #[arg(long, value_name = "FILE")]
        embeddings: Option<PathBuf>,
    },
    /// Train one model per (alpha, seed) and write alpha,seed,rce,accuracy rows
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Country loss weights
        #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "0,1,5,20")]
        alphas: Vec<f64>,
        /// Seeds per weight
        #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Train each ablation variant on each seed and report dev and test metrics
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Variants: full, no-char-cnn, no-word-attention, no-field-attention, no-encoders, no-country
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        variants: Vec<Variant>,
        /// Seeds per variant
        #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn manifest(common: &Common) -> Result<RunManifest> {
    Ok(RunManifest::load(common.config.as_deref())?.resolve(common.seed, common.threads.map(|t| t as usize)))
}

/// A flag value, falling back to the configuration's `paths` entry.
fn required(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| usage(format!("missing required input --{name} (or paths.{name} in --config)")))
}

fn out_path(common: &Common) -> Result<PathBuf> {
    common.out.clone().ok_or_else(|| usage("missing required argument --out"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `value` to `--out` when given, otherwise to stdout.
fn emit<T: Serialize>(common: &Common, value: &T) -> Result<()> {
    match &common.out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn read_users(path: &Path) -> Result<Vec<UserRecord>> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn read_registry(path: &Path) -> Result<CityRegistry> {
    CityRegistry::read_tsv(path).with_context(|| format!("reading {}", path.display()))
}

fn read_embeddings(path: &Path) -> Result<NetworkEmbeddings> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    NetworkEmbeddings::read(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => synth(&common),
        Command::BuildVocab {
            common,
            train,
            word_min_count,
            char_min_count,
        } => build_vocab(&common, &train, word_min_count, char_min_count),
        Command::BuildGraph {
            common,
            data,
            mode,
            celebrity_threshold,
        } => build_graph_cmd(&common, &data, mode, celebrity_threshold),
        Command::EmbedGraph { common, edges } => embed_graph(&common, &edges),
        Command::Train { common, data } => train_cmd(&common, &data),
        Command::Eval {
            common,
            checkpoint,
            data,
            registry,
            embeddings,
        } => eval_cmd(&common, &checkpoint, &data, registry.as_deref(), embeddings.as_deref()),
        Command::SweepAlpha {
            common,
            data,
            alphas,
            seeds,
        } => sweep_alpha(&common, &data, &alphas, &seeds),
        Command::Ablate {
            common,
            data,
            variants,
            seeds,
        } => ablate(&common, &data, &variants, &seeds),
    }
}

fn synth(common: &Common) -> Result<()> {
    let m = manifest(common)?;
    let out = out_path(common)?;
    let world = generate(&m.world)?;
    world.write_dir(&out)?;
    write_json(&out.join("manifest.json"), &m)?;
    println!(
        "{}",
        serde_json::json!({
            "out": out,
            "countries": world.registry.num_countries(),
            "cities": world.registry.num_cities(),
            "train": world.train.len(),
            "dev": world.dev.len(),
            "test": world.test.len(),
            "edges": world.edges.edges.len(),
        })
    );
    Ok(())
}

fn build_vocab(common: &Common, train: &Option<PathBuf>, word_min: Option<u64>, char_min: Option<u64>) -> Result<()> {
    let m = manifest(common)?;
    let path = required(train, &m.paths.train, "train")?;
    let out = out_path(common)?;
    let users = read_users(&path)?;
    let lex = Lexicon::build(
        &users,
        word_min.unwrap_or(m.vocab.word_min_count),
        char_min.unwrap_or(m.vocab.char_min_count),
    );
    lex.write_dir(&out)?;
    println!(
        "{}",
        serde_json::json!({
            "out": out,
            "words": lex.vocab.num_words(),
            "chars": lex.vocab.num_chars(),
            "languages": lex.languages.len(),
            "time_zones": lex.time_zones.len(),
        })
    );
    Ok(())
}

fn build_graph_cmd(common: &Common, data: &[PathBuf], mode: Option<GraphMode>, threshold: Option<usize>) -> Result<()> {
    let m = manifest(common)?;
    let out = out_path(common)?;
    let files: Vec<PathBuf> = if data.is_empty() {
        [&m.paths.train, &m.paths.dev, &m.paths.test].into_iter().flatten().cloned().collect()
    } else {
        data.to_vec()
    };
    if files.is_empty() {
        return Err(usage("missing required input --data (or paths.train/dev/test in --config)"));
    }
    let mut users = Vec::new();
    for f in &files {
        users.extend(read_users(f)?);
    }
    let graph = build_graph(&users, mode.unwrap_or(m.graph.mode));
    let graph = remove_celebrities(&graph, threshold.unwrap_or(m.graph.celebrity_threshold));
    let edges = graph.edge_list();
    edges.write_tsv(&out)?;
    println!(
        "{}",
        serde_json::json!({ "out": out, "nodes": edges.nodes.len(), "edges": edges.edges.len() })
    );
    Ok(())
}

fn embed_graph(common: &Common, edges: &Option<PathBuf>) -> Result<()> {
    let m = manifest(common)?;
    let path = required(edges, &m.paths.edges, "edges")?;
    let out = out_path(common)?;
    let list = EdgeList::read_tsv(&path).with_context(|| format!("reading {}", path.display()))?;
    let emb = train_line(&list, &m.line)?;
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    emb.write(&mut w)?;
    w.flush()?;
    println!(
        "{}",
        serde_json::json!({ "out": out, "nodes": emb.len(), "dim": emb.dim() })
    );
    Ok(())
}

/// Lexicon, registry and encoded splits for the training-style commands.
fn load_corpus(m: &RunManifest, data: &DataArgs, need_test: bool) -> Result<Corpus> {
    let registry_path = required(&data.registry, &m.paths.registry, "registry")?;
    let train_path = required(&data.train, &m.paths.train, "train")?;
    let dev_path = required(&data.dev, &m.paths.dev, "dev")?;
    let test_path = if need_test {
        Some(required(&data.test, &m.paths.test, "test")?)
    } else {
        None
    };
    m.model.validate()?;
    m.train.validate()?;
    let registry = read_registry(&registry_path)?;
    let train_users = read_users(&train_path)?;
    let lexicon = match data.vocab.as_ref().or(m.paths.vocab.as_ref()) {
        Some(dir) => Lexicon::read_dir(dir).with_context(|| format!("reading vocabulary {}", dir.display()))?,
        None => Lexicon::build(&train_users, m.vocab.word_min_count, m.vocab.char_min_count),
    };
    let network = match data.embeddings.as_ref().or(m.paths.embeddings.as_ref()) {
        Some(p) => {
            let e = read_embeddings(p)?;
            if e.dim() != m.model.hidden() {
                bail!(
                    "network embeddings have dimension {}, the model expects 2 × word_dim = {}",
                    e.dim(),
                    m.model.hidden()
                );
            }
            Some(e)
        }
        None => None,
    };
    let word_table = match data.pretrained.as_ref().or(m.paths.pretrained.as_ref()) {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let mut rng = Rng::seed_from(m.seed()).derive(PRETRAINED_STREAM);
            Some(load_pretrained_embeddings(BufReader::new(f), &lexicon.vocab, m.model.word_dim, &mut rng)?)
        }
        None => None,
    };
    let train_enc = m.model.encode_config();
    let eval_enc = EncodeConfig {
        t_max: m.train.eval_max_tweets.unwrap_or(m.model.max_tweets),
        ..train_enc
    };
    let encode = |users: &[UserRecord], enc: &EncodeConfig| {
        prepare_samples(users, &lexicon, &registry, enc, network.as_ref())
    };
    let train = encode(&train_users, &train_enc)?;
    let dev = encode(&read_users(&dev_path)?, &eval_enc)?;
    let test = match test_path {
        Some(p) => encode(&read_users(&p)?, &eval_enc)?,
        None => Vec::new(),
    };
    Ok(Corpus {
        lexicon,
        registry,
        train,
        dev,
        test,
        word_table,
    })
}

fn train_cmd(common: &Common, data: &DataArgs) -> Result<()> {
    let m = manifest(common)?;
    let corpus = load_corpus(&m, data, false)?;
    let out = out_path(common)?;
    fs::create_dir_all(&out)?;
    let dims: ModelDims = corpus.dims();
    let trained = train(
        &m.model,
        &m.train,
        dims,
        &corpus.registry,
        &build_bias(&corpus.registry),
        &corpus.train,
        &corpus.dev,
        corpus.word_table.clone(),
    )?;
    let meta = CheckpointMeta {
        model: m.model.clone(),
        dims,
        lexicon: corpus.lexicon.clone(),
        registry: corpus.registry.clone(),
        seed: m.seed(),
    };
    save_checkpoint(out.join("model.ckpt"), &meta, &trained.store)?;
    let mut w = BufWriter::new(File::create(out.join("run.jsonl"))?);
    trained.record.write_jsonl(&mut w)?;
    w.flush()?;
    write_json(&out.join("manifest.json"), &m)?;
    let (dev, _) = evaluate_samples(
        &trained.model,
        &trained.store,
        &corpus.dev,
        &corpus.registry,
        m.train.batch_size,
        m.train.threads,
    )?;
    let result = serde_json::json!({
        "checkpoint": out.join("model.ckpt"),
        "best_epoch": trained.best_epoch,
        "epochs": trained.record.epochs.len(),
        "dev": dev,
    });
    write_json(&out.join("metrics.json"), &result)?;
    println!("{result}");
    Ok(())
}

fn eval_cmd(
    common: &Common,
    checkpoint: &Path,
    data: &Path,
    registry: Option<&Path>,
    embeddings: Option<&Path>,
) -> Result<()> {
    let m = manifest(common)?;
    let (meta, store) =
        load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    if let Some(p) = registry.or(m.paths.registry.as_deref()) {
        if read_registry(p)? != meta.registry {
            bail!("registry {} differs from the one the checkpoint was trained with", p.display());
        }
    }
    let model = meta.bind(&store)?;
    let network = match embeddings.or(m.paths.embeddings.as_deref()) {
        Some(p) => Some(read_embeddings(p)?),
        None => None,
    };
    let enc = EncodeConfig {
        t_max: m.train.eval_max_tweets.unwrap_or(meta.model.max_tweets),
        ..meta.model.encode_config()
    };
    let samples = prepare_samples(&read_users(data)?, &meta.lexicon, &meta.registry, &enc, network.as_ref())?;
    let (report, _) = evaluate_samples(&model, &store, &samples, &meta.registry, m.train.batch_size, m.train.threads)?;
    emit(common, &report)
}

fn sweep_alpha(common: &Common, data: &DataArgs, alphas: &[f64], seeds: &[u64]) -> Result<()> {
    let m = manifest(common)?;
    let out = out_path(common)?;
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
        return Err(usage(format!("invalid alpha {a}: weights must be finite and non-negative")));
    }
    let corpus = load_corpus(&m, data, true)?;
    let rows = run_alpha_sweep(&m.model, &m.train, &corpus, alphas, seeds)?;
    let mut w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    println!("{}", serde_json::json!({ "out": out, "rows": rows.len() }));
    Ok(())
}

fn ablate(common: &Common, data: &DataArgs, variants: &[Variant], seeds: &[u64]) -> Result<()> {
    let m = manifest(common)?;
    let out = out_path(common)?;
    let corpus = load_corpus(&m, data, true)?;
    let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants.to_vec() };
    let rows = run_ablation(&m.model, &m.train, &corpus, &variants, seeds)?;
    let table: Vec<_> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "variant": r.variant,
                "seed": r.run.seed,
                "best_epoch": r.run.best_epoch,
                "dev": r.run.dev,
                "test": r.run.test,
            })
        })
        .collect();
    write_json(&out, &table)?;
    println!("{}", serde_json::json!({ "out": out, "runs": rows.len() }));
    Ok(())
}
