mod provenance;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_terms::activation_io::{read_all, read_dump, validate_dump, write_dump};
use latent_terms::analysis::{feature_summary, loglog_slope, rank_frequency, write_rank_frequency};
use latent_terms::config::PipelineConfig;
use latent_terms::eval::{
    evaluate, load_qrels, load_run, tune_grid, write_run, Metric, MissingQueries, Run, TuneGrid,
    TuneOptions,
};
use latent_terms::index::{build_index, load_index, prune_top, save_index, FeatureStatistic};
use latent_terms::latent::{
    encode_corpus, pool_corpus, read_vectors, write_vectors, PhiTransform, Pooling,
};
use latent_terms::sae::{load_model, save_model, train, TrainConfig};
use latent_terms::scorer::{search_batch, Bm25Params, Scoring};
use latent_terms::synth::{PlantedConfig, PlantedCorpus};
use latent_terms::{Error, Execution, Result, SaeModel, TokenMatrix};

use provenance::Footer;

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
#[macro_export]
macro_rules! outln {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "lt", version, about = "Latent-feature BM25 retrieval pipeline")]
struct Cli {
    /// Pipeline config (TOML). Flags override it; it overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run every stage on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Activation dump utilities
    #[command(subcommand)]
    Dump(DumpCommand),
    /// Sparse autoencoder training
    #[command(subcommand)]
    Sae(SaeCommand),
    /// Encode a dump into pooled, φ-transformed sparse vectors
    Encode(EncodeArgs),
    /// Inverted index construction and pruning
    #[command(subcommand)]
    Index(IndexCommand),
    /// Rank documents for every query and write a TREC run
    Search(SearchArgs),
    /// Score a run against relevance judgments
    Eval(EvalArgs),
    /// Grid-search k1, b and α over a query set
    Tune(TuneArgs),
    /// Collection statistics
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Subcommand)]
enum DumpCommand {
    /// Check a dump end to end and report its shape
    Validate { path: PathBuf },
    /// Write a seeded synthetic corpus with planted relevance
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Small)]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 20 documents, 10 queries
    Small,
    /// 250 documents, 50 queries
    Planted,
}

#[derive(Subcommand)]
enum SaeCommand {
    Train(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dump: PathBuf,
    /// Expected hidden dimension; checked against the dump.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Per-step training log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dump: PathBuf,
    /// Exponent α of φ(u) = u^α.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Sum,
    Max,
}

#[derive(Subcommand)]
enum IndexCommand {
    Build {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Prune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, value_enum, default_value_t = StatArg::DocFreq)]
        statistic: StatArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    #[value(name = "doc_freq", alias = "doc-freq")]
    DocFreq,
    #[value(name = "total_mass", alias = "total-mass")]
    TotalMass,
}

impl From<StatArg> for FeatureStatistic {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::DocFreq => FeatureStatistic::DocFreq,
            StatArg::TotalMass => FeatureStatistic::TotalMass,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value_t = ScorerArg::Bm25)]
    scorer: ScorerArg,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Clamp IDF from below, e.g. 0 to drop negative weights.
    #[arg(long)]
    idf_floor: Option<f64>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    run: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Bm25,
    Dot,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Ndcg)]
    metric: MetricArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Count queries missing from the run or the judgments as 0.
    #[arg(long)]
    missing_as_zero: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Ndcg,
    Recall,
    Mrr,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Ndcg => Metric::Ndcg,
            MetricArg::Recall => Metric::Recall,
            MetricArg::Mrr => Metric::Mrr,
        }
    }
}

#[derive(Args)]
struct TuneArgs {
    /// Document activation dump.
    #[arg(long)]
    index_src: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Query activation dump.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Grid file with k1, b and alpha (or alpha_doc / alpha_query) lists.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Ndcg)]
    metric: MetricArg,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Rank-frequency table as CSV
    Zipf {
        #[arg(long)]
        index: PathBuf,
        #[arg(long, value_enum, default_value_t = StatArg::DocFreq)]
        stat: StatArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Statistics of one latent feature
    Feature {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        id: u32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let ctx = Context { config, exec };
    match cli.command {
        Command::Dump(DumpCommand::Validate { path }) => dump_validate(&path),
        Command::Dump(DumpCommand::Synth(args)) => dump_synth(&args),
        Command::Sae(SaeCommand::Train(args)) => sae_train(&ctx, &args),
        Command::Encode(args) => encode(&ctx, &args),
        Command::Index(IndexCommand::Build { vectors, out }) => index_build(&vectors, &out),
        Command::Index(IndexCommand::Prune {
            input,
            fraction,
            statistic,
            out,
        }) => index_prune(&input, fraction, statistic.into(), &out),
        Command::Search(args) => search(&ctx, &args),
        Command::Eval(args) => eval(&args),
        Command::Tune(args) => tune(&ctx, &args),
        Command::Stats(StatsCommand::Zipf { index, stat, out }) => {
            stats_zipf(&index, stat.into(), &out)
        }
        Command::Stats(StatsCommand::Feature { index, id }) => stats_feature(&index, id),
    }
}

struct Context {
    config: PipelineConfig,
    exec: Execution,
}

fn json(value: impl serde::Serialize) -> String {
    serde_json::to_string_pretty(&value).expect("serializable")
}

fn dump_validate(path: &Path) -> Result<()> {
    let report = validate_dump(path);
    outln!("{}", json(&report));
    let mut footer = Footer::new("dump validate");
    if path.is_file() {
        footer.input("dump", path)?;
    }
    footer.output("valid", report.is_valid());
    footer.print();
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(Error::FormatError(format!("dump is invalid: {v:?}"))),
    }
}

fn dump_synth(args: &SynthArgs) -> Result<()> {
    let cfg = PlantedConfig {
        seed: args.seed,
        ..match args.preset {
            Preset::Small => PlantedConfig::small(),
            Preset::Planted => PlantedConfig::default(),
        }
    };
    let corpus = PlantedCorpus::generate(&cfg);
    std::fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    write_dump(&corpus.docs, dir.join("docs.ltad"))?;
    write_dump(&corpus.queries, dir.join("queries.ltad"))?;
    // training tokens go out as fixed-size pseudo-documents
    let chunk = 256;
    let train: Vec<_> = corpus
        .train
        .as_slice()
        .chunks(chunk * cfg.d)
        .enumerate()
        .map(|(i, values)| {
            let rows = values.len() / cfg.d;
            (
                format!("train{i:05}"),
                TokenMatrix::new(rows, cfg.d, values.to_vec()).expect("whole rows"),
            )
        })
        .collect();
    write_dump(&train, dir.join("train.ltad"))?;
    let mut qrels = String::from("query-id\tcorpus-id\tscore\n");
    for q in corpus.qrels.judged_queries() {
        for (doc, rel) in corpus.qrels.query(q).expect("judged") {
            qrels.push_str(&format!("{q}\t{doc}\t{rel}\n"));
        }
    }
    std::fs::write(dir.join("qrels.tsv"), qrels)?;

    let mut footer = Footer::new("dump synth");
    footer.param("seed", args.seed);
    footer.param("d", cfg.d);
    footer.output("documents", corpus.docs.len());
    footer.output("queries", corpus.queries.len());
    footer.output("train_tokens", corpus.train.rows());
    for name in ["docs.ltad", "queries.ltad", "train.ltad", "qrels.tsv"] {
        footer.output(
            name,
            format!("sha256:{}", provenance::digest_path(&dir.join(name))?),
        );
    }
    footer.print();
    Ok(())
}

fn sae_train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let reader = read_dump(&args.dump)?;
    if let Some(d) = args.d {
        if d != reader.d() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: reader.d(),
            });
        }
    }
    let d = reader.d();
    let m = args.m.unwrap_or(ctx.config.sae.m);
    let k = args.k.unwrap_or(ctx.config.sae.k);
    let base = &ctx.config.train;
    let cfg = TrainConfig {
        total_steps: args.steps.unwrap_or(base.total_steps),
        seed: args.seed.unwrap_or(base.seed),
        batch_size: args.batch.unwrap_or(base.batch_size),
        peak_lr: args.lr.unwrap_or(base.peak_lr),
        warmup_fraction: args.warmup.unwrap_or(base.warmup_fraction),
        l1_weight: args.lambda.unwrap_or(base.l1_weight),
        weight_decay: args.weight_decay.unwrap_or(base.weight_decay),
        ..base.clone()
    };
    let init_seed = args.seed.unwrap_or(ctx.config.sae.seed);
    let model = SaeModel::init(d, m, k, init_seed)?;
    let (model, log) = train(&model, reader, &cfg)?;
    save_model(&model, &args.out)?;
    if let Some(path) = &args.log {
        let mut csv = String::from("step,lr,mse,l1,dead_features\n");
        for e in &log.entries {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                e.step, e.lr, e.mse, e.l1, e.dead_features
            ));
        }
        std::fs::write(path, csv)?;
    }
    if let Some(last) = log.entries.last() {
        outln!(
            "trained {} steps; final batch mse {:.6}",
            last.step,
            last.mse
        );
    }
    let mut footer = Footer::new("sae train");
    footer.input("dump", &args.dump)?;
    footer.param("d", d);
    footer.param("m", m);
    footer.param("k", k);
    footer.param("init_seed", init_seed);
    footer.param("train", &cfg);
    footer.output(
        "model",
        format!("sha256:{}", provenance::digest_path(&args.out)?),
    );
    footer.print();
    Ok(())
}

fn encode(ctx: &Context, args: &EncodeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let alpha = args.phi.unwrap_or(ctx.config.encode.alpha_doc);
    let phi = PhiTransform::power(alpha)?;
    let pooling = match args.pooling {
        Some(PoolingArg::Sum) => Pooling::Sum,
        Some(PoolingArg::Max) => Pooling::Max,
        None => ctx.config.encode.pooling,
    };
    let records = read_all(&args.dump)?;
    let vectors = encode_corpus(&model, &records, phi, pooling, ctx.exec)?;
    let written = write_vectors(&args.out, model.m(), &vectors)?;
    let nnz: usize = vectors.iter().map(|v| v.nnz()).sum();
    outln!(
        "encoded {written} inputs; mean support {:.2}",
        nnz as f64 / written.max(1) as f64
    );
    let mut footer = Footer::new("encode");
    footer.input("model", &args.model)?;
    footer.input("dump", &args.dump)?;
    footer.param("alpha", alpha);
    footer.param("pooling", pooling);
    footer.output(
        "vectors",
        format!("sha256:{}", provenance::digest_path(&args.out)?),
    );
    footer.print();
    Ok(())
}

fn index_build(vectors: &Path, out: &Path) -> Result<()> {
    let (m, docs) = read_vectors(vectors)?;
    let mut index = build_index(&docs, m)?;
    index.set_metadata(
        "source_vectors",
        format!("sha256:{}", provenance::digest_path(vectors)?),
    );
    save_index(&index, out)?;
    outln!(
        "indexed {} documents over {m} features; {} postings; avgdl {:.4}",
        index.n_docs(),
        index.total_postings(),
        index.avgdl()
    );
    let mut footer = Footer::new("index build");
    footer.input("vectors", vectors)?;
    footer.output("index", format!("sha256:{}", provenance::digest_path(out)?));
    footer.print();
    Ok(())
}

fn index_prune(input: &Path, fraction: f64, statistic: FeatureStatistic, out: &Path) -> Result<()> {
    let index = load_index(input)?;
    let mut pruned = prune_top(&index, fraction, statistic)?;
    pruned.set_metadata("pruned_fraction", fraction.to_string());
    save_index(&pruned, out)?;
    outln!(
        "removed {} of {} features",
        pruned.pruned_features().len(),
        index.m()
    );
    let mut footer = Footer::new("index prune");
    footer.input("index", input)?;
    footer.param("fraction", fraction);
    footer.param("statistic", statistic);
    footer.output("index", format!("sha256:{}", provenance::digest_path(out)?));
    footer.print();
    Ok(())
}

fn search(ctx: &Context, args: &SearchArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    let (m, queries) = read_vectors(&args.queries)?;
    if m != index.m() {
        return Err(Error::DimensionMismatch {
            expected: index.m(),
            found: m,
        });
    }
    let scoring = match args.scorer {
        ScorerArg::Dot => Scoring::Dot,
        ScorerArg::Bm25 => {
            let base = ctx.config.search.bm25;
            let mut params = Bm25Params::new(args.k1.unwrap_or(base.k1), args.b.unwrap_or(base.b))?;
            params.idf_floor = args.idf_floor.or(base.idf_floor);
            Scoring::Bm25(params)
        }
    };
    let top = args.top.unwrap_or(ctx.config.search.top_n);
    let lists = search_batch(&index, &queries, &scoring, top, ctx.exec)?;
    let empty = lists.iter().filter(|l| l.empty_query).count();
    if empty > 0 {
        eprintln!("note: {empty} queries have no features and returned no results");
    }
    write_run(&Run::from_lists(&lists, "latent-terms"), &args.run)?;
    outln!("ranked {} queries", lists.len());
    let mut footer = Footer::new("search");
    footer.input("index", &args.index)?;
    footer.input("queries", &args.queries)?;
    footer.param("scoring", scoring);
    footer.param("top", top);
    footer.output(
        "run",
        format!("sha256:{}", provenance::digest_path(&args.run)?),
    );
    footer.output("empty_queries", empty);
    footer.print();
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let run = load_run(&args.run)?;
    let qrels = load_qrels(&args.qrels)?;
    let missing = if args.missing_as_zero {
        MissingQueries::Zero
    } else {
        MissingQueries::Exclude
    };
    let metric: Metric = args.metric.into();
    let report = evaluate(&run, &qrels, metric, args.k, missing)?;
    outln!("{}@{}\t{:.6}", metric.name(), args.k, report.mean);
    let mut footer = Footer::new("eval");
    footer.input("run", &args.run)?;
    footer.input("qrels", &args.qrels)?;
    footer.param("metric", metric);
    footer.param("k", args.k);
    footer.param("missing", missing);
    footer.output("mean", report.mean);
    footer.output("queries", report.per_query.len());
    footer.print();
    Ok(())
}

fn tune(ctx: &Context, args: &TuneArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let grid = TuneGrid::from_toml(&std::fs::read_to_string(&args.grid)?)?;
    let qrels = load_qrels(&args.qrels)?;
    let pooling = ctx.config.encode.pooling;
    let docs = pool_corpus(&model, &read_all(&args.index_src)?, pooling, ctx.exec)?;
    let queries = pool_corpus(&model, &read_all(&args.queries)?, pooling, ctx.exec)?;
    let options = TuneOptions {
        metric: args.metric.into(),
        k: args.k,
        top_n: args.top.unwrap_or(ctx.config.search.top_n),
        missing: MissingQueries::Exclude,
        exec: ctx.exec,
    };
    let result = tune_grid(&docs, model.m(), &queries, &qrels, &grid, options)?;
    outln!("{}", json(&result));
    let mut footer = Footer::new("tune");
    footer.input("documents", &args.index_src)?;
    footer.input("model", &args.model)?;
    footer.input("queries", &args.queries)?;
    footer.input("qrels", &args.qrels)?;
    footer.input("grid", &args.grid)?;
    footer.param("pooling", pooling);
    footer.output("best", result.best);
    footer.output("best_value", result.best_value);
    footer.output("caveat", result.caveat);
    footer.print();
    Ok(())
}

fn stats_zipf(index_dir: &Path, stat: FeatureStatistic, out: &Path) -> Result<()> {
    let index = load_index(index_dir)?;
    let rows = rank_frequency(&index, stat);
    write_rank_frequency(&rows, out)?;
    let slope = loglog_slope(&rows);
    outln!(
        "{} ranked features; log-log slope {}",
        rows.len(),
        slope.map_or("n/a".into(), |s| format!("{s:.4}"))
    );
    let mut footer = Footer::new("stats zipf");
    footer.input("index", index_dir)?;
    footer.param("stat", stat);
    footer.output("table", format!("sha256:{}", provenance::digest_path(out)?));
    footer.output("slope", slope);
    footer.print();
    Ok(())
}

fn stats_feature(index_dir: &Path, id: u32) -> Result<()> {
    let index = load_index(index_dir)?;
    let summary = feature_summary(&index, id)?;
    outln!("{}", json(summary));
    let mut footer = Footer::new("stats feature");
    footer.input("index", index_dir)?;
    footer.param("id", id);
    footer.print();
    Ok(())
}
