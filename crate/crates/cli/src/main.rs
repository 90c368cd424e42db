use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use phrase_index::corpus::{load_corpus, load_qa, CorpusFormat, CorpusStore, QaExample};
use phrase_index::dense::{
    read_precomputed, write_precomputed, Encoder, EncoderConfig, PrecomputedEncoder, ToyEncoder, ToyEncoderParams,
};
use phrase_index::index::{build_index, load_index, IndexConfig, IvfConfig};
use phrase_index::search::{embed_query, search, SearchConfig, Strategy};
use phrase_index::service::{benchmark, evaluate, serve, BenchConfig};
use phrase_index::sparse::fit_tfidf;
use phrase_index::synthetic::{fact_corpus, planted_suite, PlantedConfig};
use phrase_index::training::{FilterModel, Trainer, TrainingConfig};

/// Files of a model directory.
const MODEL_ENCODER: &str = "encoder.bin";
const MODEL_FILTER: &str = "filter.bin";
const MODEL_SUMMARY: &str = "training.json";

#[derive(Parser)]
#[command(name = "phrase-index", version, about = "Dense+sparse phrase index for open-domain extractive QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and question set.
    Synth(SynthArgs),
    /// Train the toy encoder and token filter; prints one JSON line per epoch.
    Train(TrainArgs),
    /// Build an index directory from a corpus.
    Build(BuildArgs),
    /// Answer one question; prints a JSON list of results.
    Query(QueryArgs),
    /// Serve `/health` and `/query` over HTTP.
    Serve(ServeArgs),
    /// Exact match and F1 of one strategy over a question set.
    Eval(EvalArgs),
    /// Accuracy and speed of every strategy over a question set.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Filler text with attribute facts; suited to training.
    Facts,
    /// Precomputed encodings that place each question's vectors on its answer.
    Planted,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "facts")]
    kind: SynthKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Planted only: add a lexically weaker twin of every gold document.
    #[arg(long)]
    distractors: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    /// JSON training config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Model directory from `train` or `synth`; an untrained toy encoder otherwise.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Precomputed document encodings; questions still use the model's encoder.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    max_span_len: usize,
    /// IVF cells; defaults to one per start record, capped.
    #[arg(long)]
    clusters: Option<usize>,
    /// Build without an IVF; DFS and HYBRID are then unavailable.
    #[arg(long, conflicts_with = "clusters")]
    no_ivf: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Untrained encoder only: start/end width.
    #[arg(long, default_value_t = 64)]
    d_b: usize,
    /// Untrained encoder only: coherency width.
    #[arg(long, default_value_t = 8)]
    d_c: usize,
}

#[derive(Args, Default)]
struct SearchArgs {
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    k_s: Option<usize>,
    #[arg(long)]
    k_d: Option<usize>,
    #[arg(long)]
    nprobe: Option<usize>,
    #[arg(long)]
    sparse_scale: Option<f64>,
}

impl SearchArgs {
    fn config(&self) -> Result<SearchConfig> {
        let d = SearchConfig::default();
        let cfg = SearchConfig {
            strategy: self.strategy.unwrap_or(d.strategy),
            top_k: self.top_k.unwrap_or(d.top_k),
            k_s: self.k_s.unwrap_or(d.k_s),
            k_d: self.k_d.unwrap_or(d.k_d),
            nprobe: self.nprobe.unwrap_or(d.nprobe),
            sparse_scale: self.sparse_scale.unwrap_or(d.sparse_scale),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    /// Also write per-question predictions as JSON lines.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[command(flatten)]
    search: SearchArgs,
}

fn write_json_lines<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_model(dir: &Path, encoder: &ToyEncoderParams, filter: &FilterModel) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    encoder.write_to(BufWriter::new(File::create(dir.join(MODEL_ENCODER))?))?;
    filter.write_to(BufWriter::new(File::create(dir.join(MODEL_FILTER))?))?;
    Ok(())
}

fn read_model(dir: &Path) -> Result<(ToyEncoderParams, FilterModel)> {
    let open = |name: &str| File::open(dir.join(name)).with_context(|| format!("opening {}", dir.join(name).display()));
    let encoder = ToyEncoderParams::read_from(std::io::BufReader::new(open(MODEL_ENCODER)?))?;
    let filter = FilterModel::read_from(open(MODEL_FILTER)?)?;
    Ok((encoder, filter))
}

fn synth(args: SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    let write_corpus = |corpus: &CorpusStore, qa: &[QaExample]| -> Result<()> {
        corpus.write_jsonl(BufWriter::new(File::create(args.out.join("corpus.jsonl"))?))?;
        write_json_lines(&args.out.join("qa.jsonl"), qa)
    };
    match args.kind {
        SynthKind::Facts => {
            if args.distractors {
                bail!("--distractors applies to --kind planted only");
            }
            let (corpus, qa) = fact_corpus(args.docs, 2, 2, args.seed);
            write_corpus(&corpus, &qa)?;
        }
        SynthKind::Planted => {
            let suite = planted_suite(&PlantedConfig {
                n_docs: args.docs,
                distractors: args.distractors,
                seed: args.seed,
                ..PlantedConfig::default()
            });
            write_corpus(&suite.corpus, &suite.qa)?;
            let d = suite.question_encoder.config.d;
            write_precomputed(args.out.join("embeddings.bin"), d, suite.embeddings.iter().map(|(k, v)| (k.as_str(), v)))?;
            let filter = FilterModel::keep_all(suite.question_encoder.config.d_b);
            write_model(&args.out.join("model"), &suite.question_encoder, &filter)?;
        }
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus, CorpusFormat::JsonLines)?;
    let qa = load_qa(&args.qa)?;
    let config: TrainingConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).with_context(|| format!("parsing {}", path.display()))?,
        None => TrainingConfig::default(),
    };
    let trainer = Trainer::new(&corpus, config.clone())?;
    let mut stdout = std::io::stdout().lock();
    let outcome = trainer.run(&qa, |m| {
        let _ = serde_json::to_writer(&mut stdout, m);
        let _ = writeln!(stdout);
    })?;
    write_model(&args.out, &outcome.encoder, &outcome.filter)?;
    let summary = serde_json::json!({
        "config": config,
        "no_answer_bias": outcome.no_answer_bias,
        "epochs": outcome.epochs,
    });
    fs::write(args.out.join(MODEL_SUMMARY), serde_json::to_vec_pretty(&summary)?)?;
    Ok(())
}

fn build(args: BuildArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus, CorpusFormat::JsonLines)?;
    let (params, filter) = match &args.model {
        Some(dir) => read_model(dir)?,
        None => {
            let params = ToyEncoderParams::new(EncoderConfig::new(args.d_b, args.d_c), args.seed);
            (params, FilterModel::keep_all(args.d_b))
        }
    };
    let toy = ToyEncoder::new(params.clone())?;
    let encoder: Box<dyn Encoder> = match &args.embeddings {
        Some(path) => {
            let (_, records) = read_precomputed(path)?;
            Box::new(PrecomputedEncoder::new(records, &corpus, toy)?)
        }
        None => Box::new(toy),
    };
    let tfidf = fit_tfidf(&corpus)?;
    let config = IndexConfig {
        max_span_len: args.max_span_len,
        seed: args.seed,
        ivf: (!args.no_ivf).then_some(IvfConfig {
            n_clusters: args.clusters,
            seed: args.seed,
        }),
        ..IndexConfig::default()
    };
    let report = build_index(&corpus, encoder.as_ref(), &params, &tfidf, &filter, &config, &args.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let cfg = args.search.config()?;
    let index = load_index(&args.index)?;
    let q = embed_query(&index, &args.question)?;
    let outcome = search(&index, &q, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&outcome.results)?);
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let cfg = args.search.config()?;
    let index = load_index(&args.index)?;
    let qa = load_qa(&args.qa)?;
    let (report, predictions) = evaluate(&index, &qa, &cfg)?;
    if let Some(path) = &args.predictions {
        write_json_lines(path, &predictions)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let search = args.search.config()?;
    let index = load_index(&args.index)?;
    let qa = load_qa(&args.qa)?;
    let strategies = match args.search.strategy {
        Some(s) => vec![s],
        None => Strategy::ALL.to_vec(),
    };
    let available: Vec<Strategy> = strategies
        .into_iter()
        .filter(|s| index.ivf().is_some() || matches!(s, Strategy::Exact | Strategy::Sfs))
        .collect();
    let config = BenchConfig {
        search,
        strategies: available,
        warmup: args.warmup,
    };
    let reports = benchmark(&index, &qa, &config)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn,phrase_index=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Build(a) => build(a),
        Command::Query(a) => query(a),
        Command::Serve(a) => {
            let defaults = a.search.config()?;
            tokio::runtime::Runtime::new()?.block_on(serve(a.index, a.addr, defaults))?;
            Ok(())
        }
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}
