use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use mvgsl::gcn::{GcnConfig, Supervision};
use mvgsl::graph::{self, AdjacencyMatrix};
use mvgsl::io;
use mvgsl::learners::{self, LearnerKind, TrainConfig};
use mvgsl::merge::{self, MergeConfig, MergeLaplacian};
use mvgsl::pipeline::{self, PipelineConfig, Prepared, SweepParam};
use mvgsl::synth::{self, SynthConfig};

#[derive(Parser)]
#[command(name = "mvgsl", version, about = "Learn, merge and classify with multiple graph views")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one structure learner and write its graph.
    Learn(LearnArgs),
    /// Merge several .adj views into one graph.
    Merge(MergeArgs),
    /// Train the GCN on a graph and report test accuracy.
    Classify(ClassifyArgs),
    /// Run learn, merge and classify from a JSON config.
    Pipeline(PipelineArgs),
    /// Repeat the pipeline over a grid of alpha or k.
    Sweep(SweepArgs),
    /// Export graph entries in class order for spy plots.
    Spy(SpyArgs),
    /// Check a graph file or a dataset directory.
    Validate(ValidateArgs),
    /// Write a synthetic planted-partition dataset.
    Synth(SynthArgs),
    /// Print the default pipeline config.
    Config,
}

#[derive(Args)]
struct LearnArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    kind: LearnerKind,
    /// Starting graph; defaults to the dataset's graph.adj.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Override a training option, e.g. `epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Use the features as stored instead of row-normalizing them.
    #[arg(long)]
    raw_features: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long, num_args = 1.., required = true)]
    views: Vec<PathBuf>,
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    /// Subspace dimension. Give this or --classes.
    #[arg(long)]
    p: Option<usize>,
    /// Number of classes; sets p to ten times this.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 30)]
    k: usize,
    #[arg(long, default_value = "normalized", value_parser = parse_laplacian)]
    laplacian: MergeLaplacian,
    /// Also write the averaging baseline here.
    #[arg(long)]
    average_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Graph to classify on; defaults to the dataset's graph.adj.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override a classifier option, e.g. `hidden=32`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    raw_features: bool,
    /// Write the accuracy summary as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config leaf by dotted path, e.g. `merge.alpha=0.6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    param: SweepParam,
    /// Comma-separated values; the built-in grid when omitted.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args)]
struct SpyArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Dataset whose labels define the node order; identity order otherwise.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = pipeline::SPY_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, required_unless_present = "dataset")]
    graph: Option<PathBuf>,
    /// Expected node count for --graph.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Override a generator option, e.g. `n=1000`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_laplacian(s: &str) -> std::result::Result<MergeLaplacian, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown laplacian {s:?}"))
}

/// Serializes `base`, applies `key=value` overrides and reads it back.
fn with_overrides<T>(base: &T, set: &[String]) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    for s in set {
        pipeline::apply_override(&mut v, s)?;
    }
    Ok(serde_json::from_value(v)?)
}

fn load_dataset(dir: &Path, raw: bool) -> Result<io::NodeDataset> {
    let ds = io::load_dataset(dir).map_err(|e| e.in_stage("load"))?;
    Ok(if raw { ds } else { ds.with_row_normalized_features() })
}

fn load_graph(path: &Path, n: Option<usize>) -> Result<AdjacencyMatrix> {
    let (a, diag) = io::import_adjacency(path, n).map_err(|e| e.in_stage("load"))?;
    if !diag.is_empty() {
        log::warn!("{}: {}", path.display(), diag.summary());
    }
    Ok(a)
}

fn learn(args: LearnArgs) -> Result<()> {
    let ds = load_dataset(&args.dataset, args.raw_features)?;
    let graph_path = args.graph.unwrap_or_else(|| io::graph_path(&args.dataset));
    let a0 = load_graph(&graph_path, Some(ds.n()))?;
    let cfg: TrainConfig = with_overrides(&TrainConfig::default(), &args.set)?;
    cfg.validate()?;
    let learned = learners::train_learner(args.kind, &ds, &a0, &cfg).map_err(|e| e.in_stage("learn"))?;
    io::export_adjacency(&learned.adjacency, &args.out).map_err(|e| e.in_stage("write"))?;
    println!(
        "{}: {} edges, final loss {}",
        args.kind,
        learned.adjacency.nnz() / 2,
        learned.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn merge_cmd(args: MergeArgs) -> Result<()> {
    let p = match (args.p, args.classes) {
        (Some(p), _) => p,
        (None, Some(c)) => 10 * c,
        (None, None) => bail!("merge needs --p or --classes"),
    };
    let views = args
        .views
        .iter()
        .map(|v| load_graph(v, None))
        .collect::<Result<Vec<_>>>()?;
    let cfg = MergeConfig {
        alpha: args.alpha,
        p,
        k: args.k,
        laplacian: args.laplacian,
    };
    let merged = merge::merge_graphs(&views, &cfg).map_err(|e| e.in_stage("merge"))?;
    io::export_adjacency(&merged, &args.out).map_err(|e| e.in_stage("write"))?;
    if let Some(path) = args.average_out {
        let avg = merge::average_merge_baseline(&views).map_err(|e| e.in_stage("merge"))?;
        io::export_adjacency(&avg, path).map_err(|e| e.in_stage("write"))?;
    }
    println!("merged {} views: {} edges", views.len(), merged.nnz() / 2);
    Ok(())
}

fn classify_cmd(args: ClassifyArgs) -> Result<()> {
    if args.repetitions == 0 {
        bail!("--repetitions must be at least 1");
    }
    let ds = load_dataset(&args.dataset, args.raw_features)?;
    let graph_path = args.graph.unwrap_or_else(|| io::graph_path(&args.dataset));
    let a = load_graph(&graph_path, Some(ds.n()))?;
    let gcn: GcnConfig = with_overrides(&GcnConfig::default(), &args.set)?;
    gcn.validate()?;
    let prep = Prepared {
        supervision: Supervision::from_dataset(&ds),
        dataset: ds,
        views: vec![],
        labels: vec![],
        timings: vec![],
    };
    let summary = pipeline::classify(&prep, &a, &gcn, args.repetitions, args.seed).map_err(|e| e.in_stage("classify"))?;
    println!("test accuracy {:.4} +- {:.4} over {} runs", summary.mean, summary.std, args.repetitions);
    if let Some(out) = args.out {
        let json = serde_json::to_string_pretty(&summary)? + "\n";
        std::fs::write(&out, json).map_err(|e| anyhow::anyhow!("write: {}: {e}", out.display()))?;
    }
    Ok(())
}

fn pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig> {
    let cfg = match &args.config {
        Some(path) => PipelineConfig::load(path, &args.set)?,
        None => with_overrides(&PipelineConfig::default(), &args.set)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline_cmd(args: PipelineArgs) -> Result<()> {
    let cfg = pipeline_config(&args)?;
    let report = pipeline::run_pipeline(&cfg)?;
    println!(
        "{}: test accuracy {:.4} +- {:.4} over {} runs",
        report.dataset, report.test.mean, report.test.std, cfg.repetitions
    );
    for (name, s) in [
        ("average merge", &report.baselines.average),
        ("ensemble average", &report.baselines.ensemble_average),
        ("ensemble max", &report.baselines.ensemble_max),
    ] {
        if let Some(s) = s {
            println!("{name}: {:.4} +- {:.4}", s.mean, s.std);
        }
    }
    println!("outputs in {}", cfg.output.display());
    Ok(())
}

fn sweep_cmd(args: SweepArgs) -> Result<()> {
    let cfg = pipeline_config(&args.pipeline)?;
    let values = if args.values.is_empty() {
        args.param.grid()
    } else {
        args.values
    };
    let table = pipeline::run_sweep(&cfg, args.param, &values)?;
    emit(&table.to_csv())
}

fn spy_cmd(args: SpyArgs) -> Result<()> {
    let a = load_graph(&args.graph, None)?;
    let perm = match &args.dataset {
        Some(dir) => pipeline::class_order(&io::load_dataset(dir).map_err(|e| e.in_stage("load"))?.labels),
        None => (0..a.n()).collect(),
    };
    pipeline::export_spy_csv(&a, &perm, &args.out, args.threshold).map_err(|e| e.in_stage("spy"))?;
    Ok(())
}

fn validate_cmd(args: ValidateArgs) -> Result<()> {
    let mut problems = Vec::new();
    let mut n = args.n;
    if let Some(dir) = &args.dataset {
        let ds = io::load_dataset(dir).map_err(|e| e.in_stage("validate"))?;
        ds.validate().map_err(|m| anyhow::anyhow!("validate: {}: {m}", dir.display()))?;
        println!(
            "{}: {} nodes, {} features, {} classes, split {}/{}/{}",
            dir.display(),
            ds.n(),
            ds.num_features(),
            ds.num_classes(),
            ds.train().len(),
            ds.val().len(),
            ds.test().len()
        );
        n = n.or(Some(ds.n()));
        let g = io::graph_path(dir);
        if args.graph.is_none() && g.exists() {
            problems.extend(check_graph(&g, n)?);
        }
    }
    if let Some(g) = &args.graph {
        problems.extend(check_graph(g, n)?);
    }
    if !problems.is_empty() {
        bail!("validate: {}", problems.join("; "));
    }
    Ok(())
}

fn check_graph(path: &Path, n: Option<usize>) -> Result<Vec<String>> {
    let (a, diag) = io::import_adjacency(path, n).map_err(|e| e.in_stage("validate"))?;
    let after = graph::validate_adjacency(a.weights(), true);
    println!("{}: {} nodes, {} edges, input {}", path.display(), a.n(), a.nnz() / 2, diag.summary());
    Ok(if after.is_empty() {
        vec![]
    } else {
        vec![format!("{}: {}", path.display(), after.summary())]
    })
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = with_overrides(&SynthConfig::default(), &args.set)?;
    let s = synth::generate(&cfg).map_err(|e| e.in_stage("synth"))?;
    synth::write(&s, &args.out).map_err(|e| e.in_stage("write"))?;
    println!("{}: {} nodes, {} edges", args.out.display(), s.dataset.n(), s.graph.nnz() / 2);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Learn(a) => learn(a),
        Command::Merge(a) => merge_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Spy(a) => spy_cmd(a),
        Command::Validate(a) => validate_cmd(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Config => emit(&format!("{}\n", PipelineConfig::default().to_json())),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
