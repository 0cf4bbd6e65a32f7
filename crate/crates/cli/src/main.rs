use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cascadexml::bundle::ModelBundle;
use cascadexml::config::RunConfig;
use cascadexml::data::{fit_tfidf, generate_synthetic, Dataset, SyntheticConfig};
use cascadexml::dismec::{self, DismecParams, SolverParams};
use cascadexml::metrics::{
    evaluate_rankings, Metric, DEFAULT_PROPENSITY_A, DEFAULT_PROPENSITY_B, VALID_METRICS,
};
use cascadexml::pipeline;
use cascadexml::Error;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (bundle format 1, weight store format 1)"
);

#[derive(Parser)]
#[command(name = "cascadexml", version = VERSION, about = "Multi-resolution label cascade for extreme multi-label classification")]
struct Cli {
    /// Worker threads for every parallel stage (default: available cores)
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Only log warnings and errors
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hierarchical dataset
    Synth(SynthArgs),
    /// Cluster labels into a hierarchical label tree
    BuildTree(BuildTreeArgs),
    /// Train a cascade model bundle
    Train(TrainArgs),
    /// Write top-k predictions as TSV
    Predict(PredictArgs),
    /// Report P@k / PSP@k as a metric table
    Evaluate(EvaluateArgs),
    /// Report per-level shortlist recall
    Recall(RecallArgs),
    /// Train one-vs-all squared-hinge classifiers over concatenated features
    DismecTrain(DismecTrainArgs),
    /// Predict with the one-vs-all classifiers
    DismecPredict(DismecPredictArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 256)]
    labels: usize,
    /// Depth of the latent label hierarchy; labels must equal b^depth
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 16)]
    docs_per_label: usize,
    /// Total documents (overrides labels * docs-per-label)
    #[arg(long)]
    num_docs: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    vocab: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 2)]
    extra_labels: usize,
    #[arg(long, default_value_t = 40)]
    doc_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Move this trailing fraction of documents into --test-out
    #[arg(long, requires = "test_out")]
    test_fraction: Option<f64>,
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildTreeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Run config supplying tree settings and seed
    #[arg(long)]
    config: Option<PathBuf>,
    /// Requested level sizes, e.g. 8,32,128 (overrides the config)
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<usize>>,
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Prebuilt tree; built from the data when absent
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Run config; desk-scale defaults when absent
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    beams: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_classifier: Option<f64>,
    #[arg(long)]
    lr_encoder: Option<f64>,
    /// Also write the per-epoch training log as JSON
    #[arg(long)]
    log_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_delimiter = ',')]
    beams: Option<Vec<usize>>,
    /// Output TSV (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long, default_value = "p@1,p@3,p@5,psp@1,psp@3,psp@5")]
    metrics: String,
    /// Propensity parameters as A=<a>,B=<b>
    #[arg(long)]
    propensity: Option<String>,
    /// Divide PSP@k by the best achievable PSP@k
    #[arg(long)]
    normalize_psp: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    metric: MetricArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecallArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    beams: Option<Vec<usize>>,
}

#[derive(Args)]
struct DismecTrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_newton: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DismecPredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Score every label instead of the cascade's final shortlist
    #[arg(long)]
    all_labels: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print these metrics for the predictions to standard output
    #[arg(long)]
    metrics: Option<String>,
}

/// Exit code 1: the invocation or its inputs are invalid.
/// Exit code 2: a valid invocation failed while running.
#[derive(Debug)]
enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::StaleCache | Error::NonFinite { .. } | Error::EmptyShortlist => {
                Failure::Runtime(e.to_string())
            }
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("{} {} not found", what, path.display())))
    }
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    existing(path, "data file")?;
    Ok(Dataset::load(path)?)
}

fn load_bundle(path: &Path) -> CliResult<ModelBundle> {
    existing(path, "model directory")?;
    Ok(ModelBundle::load(path)?)
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Runtime(format!("cannot create {}: {}", p.display(), e)))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn io_err(e: std::io::Error) -> Failure {
    Failure::Runtime(format!("write failed: {}", e))
}

fn parse_metrics(list: &str) -> CliResult<Vec<Metric>> {
    let metrics: Vec<Metric> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.parse::<Metric>())
        .collect::<Result<_, _>>()?;
    if metrics.is_empty() {
        return Err(Failure::Invalid(format!("no metrics given; valid metrics: {}", VALID_METRICS)));
    }
    Ok(metrics)
}

fn parse_propensity(arg: Option<&str>) -> CliResult<(f64, f64)> {
    let (mut a, mut b) = (DEFAULT_PROPENSITY_A, DEFAULT_PROPENSITY_B);
    let Some(arg) = arg else {
        return Ok((a, b));
    };
    for part in arg.split(',').filter(|p| !p.trim().is_empty()) {
        let bad = || Failure::Invalid(format!("bad propensity setting {:?}; expected A=<a>,B=<b>", part));
        let (k, v) = part.split_once('=').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        match k.trim() {
            "A" | "a" => a = v,
            "B" | "b" => b = v,
            _ => return Err(bad()),
        }
    }
    Ok((a, b))
}

fn write_predictions(out: &mut dyn Write, preds: &[Vec<(u32, f64)>]) -> CliResult<()> {
    for (i, labels) in preds.iter().enumerate() {
        write!(out, "{}", i).map_err(io_err)?;
        for (l, s) in labels {
            write!(out, "\t{}:{}", l, s).map_err(io_err)?;
        }
        writeln!(out).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn write_metric_table(out: &mut dyn Write, rows: &[(Metric, f64)]) -> CliResult<()> {
    writeln!(out, "metric\tvalue").map_err(io_err)?;
    for (m, v) in rows {
        writeln!(out, "{}\t{:.6}", m, v).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn synth(args: SynthArgs) -> CliResult<()> {
    let data = generate_synthetic(&SyntheticConfig {
        num_labels: args.labels,
        depth: args.depth,
        docs_per_label: args.docs_per_label,
        num_docs: args.num_docs,
        vocab: args.vocab,
        noise: args.noise,
        extra_labels: args.extra_labels,
        doc_length: args.doc_length,
        seed: args.seed,
    })?;
    match (args.test_fraction, args.test_out) {
        (Some(f), Some(test_out)) => {
            if !(0.0..1.0).contains(&f) {
                return Err(Failure::Invalid(format!("--test-fraction must lie in [0, 1), got {}", f)));
            }
            let (train, test) = data.split_tail(f);
            train.save(&args.out)?;
            test.save(&test_out)?;
            log::info!("wrote {} train and {} test instances", train.num_points(), test.num_points());
        }
        (None, Some(_)) => return Err(Failure::Invalid("--test-out requires --test-fraction".into())),
        _ => {
            data.save(&args.out)?;
            log::info!("wrote {} instances", data.num_points());
        }
    }
    Ok(())
}

fn build_tree(args: BuildTreeArgs) -> CliResult<()> {
    let ds = load_dataset(&args.data)?;
    let mut cfg = match &args.config {
        Some(p) => {
            existing(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::desk_scale(0),
    };
    if let Some(levels) = args.levels {
        cfg.tree.level_sizes = levels;
    } else if args.config.is_none() {
        return Err(Failure::Invalid("build-tree needs --levels or --config".into()));
    }
    if let Some(b) = args.branching {
        cfg.tree.branching = b;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let tfidf = fit_tfidf(&ds);
    let tree = pipeline::build_tree(&ds, &tfidf, &cfg)?;
    log::info!("tree level sizes {:?}", tree.level_sizes());
    tree.save(&args.out)?;
    Ok(())
}

fn train(args: TrainArgs, workers: Option<usize>) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => {
            existing(p, "config file")?;
            RunConfig::load(p)?
        }
        None => RunConfig::desk_scale(0),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    if let Some(b) = args.beams {
        cfg.beam_widths = b;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.lr_classifier {
        cfg.train.lr_classifier = lr;
    }
    if let Some(lr) = args.lr_encoder {
        cfg.train.lr_encoder = lr;
    }
    let data_path = args
        .data
        .or_else(|| cfg.paths.train.clone())
        .ok_or_else(|| Failure::Invalid("no training data: pass --data or set paths.train".into()))?;
    let out = args
        .out
        .or_else(|| cfg.paths.out.clone())
        .ok_or_else(|| Failure::Invalid("no output directory: pass --out or set paths.out".into()))?;
    let tree_path = args.tree.or_else(|| cfg.paths.tree.clone());
    cfg.validate()?;
    let ds = load_dataset(&data_path)?;
    let tree = match &tree_path {
        Some(p) => {
            existing(p, "tree file")?;
            Some(cascadexml::hlt::LabelTree::load(p)?)
        }
        None => None,
    };
    let (bundle, log) = pipeline::train_bundle(&ds, tree, &cfg)?;
    for e in &log.epochs {
        match &e.valid_recall {
            Some(r) => log::info!("epoch {} loss {:.5} lr x{:.3} recall {:?}", e.epoch, e.loss, e.lr_factor, r),
            None => log::info!("epoch {} loss {:.5} lr x{:.3}", e.epoch, e.loss, e.lr_factor),
        }
    }
    bundle.save(&out)?;
    if let Some(p) = args.log_out {
        let text = serde_json::to_string_pretty(&log).map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(&p, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {}", p.display(), e)))?;
    }
    log::info!("model written to {}", out.display());
    Ok(())
}

fn predict(args: PredictArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.model)?;
    let ds = load_dataset(&args.data)?;
    let preds = pipeline::predict_dataset(&bundle, &ds, args.beams.as_deref(), args.k)?;
    let rows: Vec<Vec<(u32, f64)>> = preds.into_iter().map(|p| p.labels).collect();
    write_predictions(&mut *output(args.out.as_deref())?, &rows)
}

fn evaluate(args: EvaluateArgs) -> CliResult<()> {
    let metrics = parse_metrics(&args.metric.metrics)?;
    let (a, b) = parse_propensity(args.metric.propensity.as_deref())?;
    let bundle = load_bundle(&args.model)?;
    let ds = load_dataset(&args.data)?;
    let prop = pipeline::propensity(&bundle, a, b)?;
    let rows = pipeline::evaluate(&bundle, &ds, &metrics, Some(&prop), args.metric.normalize_psp)?;
    write_metric_table(&mut *output(args.out.as_deref())?, &rows)
}

fn recall(args: RecallArgs) -> CliResult<()> {
    let bundle = load_bundle(&args.model)?;
    let ds = load_dataset(&args.data)?;
    let beams = args.beams.unwrap_or_else(|| bundle.model.config.beam_widths.clone());
    let recall = pipeline::recall(&bundle, &ds, Some(&beams))?;
    let mut out = output(None)?;
    writeln!(out, "level\tclusters\tbeam\trecall").map_err(io_err)?;
    for (t, r) in recall.iter().enumerate() {
        writeln!(out, "{}\t{}\t{}\t{:.6}", t + 1, bundle.model.tree.level_size(t + 1), beams[t], r)
            .map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn dismec_train(args: DismecTrainArgs, workers: usize) -> CliResult<()> {
    let bundle = load_bundle(&args.model)?;
    let ds = load_dataset(&args.data)?;
    let params = DismecParams {
        solver: SolverParams {
            lambda: args.lambda,
            tol: args.tol,
            max_newton: args.max_newton,
        },
        delta: args.delta,
        workers,
    };
    let stack = pipeline::train_dismec(&bundle, &ds, &params)?;
    let nnz: usize = stack.models.iter().map(|m| m.weights.nnz()).sum();
    log::info!("{} label models, {} stored weights", stack.models.len(), nnz);
    dismec::save_weights(&args.out, &stack.models, bundle.model.encoder.config.hidden_dim)?;
    Ok(())
}

fn dismec_predict(args: DismecPredictArgs) -> CliResult<()> {
    let metrics = args.metrics.as_deref().map(parse_metrics).transpose()?;
    let bundle = load_bundle(&args.model)?;
    existing(&args.weights, "weight file")?;
    let store = dismec::load_weights(&args.weights)?;
    let ds = load_dataset(&args.data)?;
    let preds = pipeline::predict_dismec(&bundle, &store.models, &ds, args.k, !args.all_labels)?;
    if args.out.is_some() || metrics.is_none() {
        write_predictions(&mut *output(args.out.as_deref())?, &preds)?;
    }
    if let Some(metrics) = metrics {
        let prop = pipeline::propensity(&bundle, DEFAULT_PROPENSITY_A, DEFAULT_PROPENSITY_B)?;
        let rankings: Vec<Vec<u32>> = preds.iter().map(|p| p.iter().map(|l| l.0).collect()).collect();
        let rows = evaluate_rankings(&ds, &rankings, &metrics, Some(&prop), false)?;
        write_metric_table(&mut *output(None)?, &rows)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let workers = match cli.workers {
        Some(0) => return Err(Failure::Invalid("--workers must be >= 1".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("cannot start worker pool: {}", e)))?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildTree(a) => build_tree(a),
        Command::Train(a) => train(a, cli.workers),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Recall(a) => recall(a),
        Command::DismecTrain(a) => dismec_train(a, workers),
        Command::DismecPredict(a) => dismec_predict(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {}", m);
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {}", m);
            ExitCode::from(2)
        }
    }
}
