//! Command-line interface.
//!
//! Exit codes: 0 success, 1 data or model error, 2 usage error.

use crate::cart::MaxFeatures;
use crate::dataset::{
    canonical_name, load_bundled, load_csv, load_feature_rows, registry_entry, registry_names,
    validate_against_registry, DataError, Dataset,
};
use crate::forest::{fit_forest, FittedForest, ForestConfig};
use crate::harness::{
    run_experiment, ExperimentConfig, GridSpec, NoObserver, Protocol, TuningMetric,
};
use crate::regularize::{apply, RegularizerKind, RegularizerSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "treesmooth",
    version,
    about = "Random forests with post-hoc leaf calibration"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset's dimensions and class counts against the registry
    ValidateData(ValidateArgs),
    /// Run a benchmark experiment
    Bench(BenchArgs),
    /// Fit a forest, optionally calibrate it, and write it as JSON
    DumpModel(DumpArgs),
    /// Load and check a model file
    LoadModel(LoadArgs),
    /// Write per-sample class-1 probabilities as CSV
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
struct DataSource {
    /// Registry name of a bundled dataset
    #[arg(long)]
    dataset: Option<String>,
    /// CSV file with a header; the last column is the label
    #[arg(long)]
    path: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForestArgs {
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_samples_leaf: usize,
    /// all, sqrt, or a count
    #[arg(long, default_value = "sqrt", value_parser = parse_max_features)]
    max_features: MaxFeatures,
    #[arg(long)]
    no_bootstrap: bool,
}

impl ForestArgs {
    fn config(&self, seed: u64) -> ForestConfig {
        let mut cfg = ForestConfig::default().with_seed(seed);
        cfg.n_trees = self.trees;
        cfg.tree.max_depth = self.max_depth;
        cfg.tree.min_samples_leaf = self.min_samples_leaf;
        cfg.tree.max_features = self.max_features;
        cfg.bootstrap = !self.no_bootstrap;
        cfg
    }
}

#[derive(Debug, Args)]
struct CalibrationArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::None)]
    method: MethodArg,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    None,
    Hs,
    Beta,
}

impl From<MethodArg> for RegularizerKind {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::None => RegularizerKind::None,
            MethodArg::Hs => RegularizerKind::Hs,
            MethodArg::Beta => RegularizerKind::Beta,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Cv,
    Holdout,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    BalancedAccuracy,
    RocAuc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    source: DataSource,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    source: DataSource,
    #[arg(long, value_enum, default_value_t = MethodArg::None)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Cv)]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.3)]
    test_fraction: f64,
    /// Comma-separated shrinkage strengths
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Comma-separated prior values, crossed for alpha and beta
    #[arg(long, value_delimiter = ',')]
    prior_grid: Option<Vec<f64>>,
    /// Search only alpha = beta
    #[arg(long)]
    tied_prior: bool,
    #[arg(long, value_enum, default_value_t = MetricArg::BalancedAccuracy)]
    tuning_metric: MetricArg,
    #[command(flatten)]
    forest: ForestArgs,
    /// Report file; omitted means no report is written
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    calibration: CalibrationArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Model file; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LoadArgs {
    #[arg(long)]
    model: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    /// Saved model; otherwise a forest is fitted on --dataset/--path
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    forest: ForestArgs,
    #[command(flatten)]
    calibration: CalibrationArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature CSV to score; a `target` column is ignored. Defaults to the training data.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output CSV; standard output when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_max_features(s: &str) -> Result<MaxFeatures, String> {
    match s {
        "all" => Ok(MaxFeatures::All),
        "sqrt" => Ok(MaxFeatures::Sqrt),
        n => match usize::from_str(n) {
            Ok(c) if c >= 1 => Ok(MaxFeatures::Count(c)),
            _ => Err(format!("expected all, sqrt or a positive count, got '{n}'")),
        },
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

fn fail(e: impl fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

fn io_fail(e: std::io::Error) -> CliError {
    CliError::Failure(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32, CliError> {
    let go = move || {
        let mut buf = Vec::new();
        let code = match cli.command {
            Command::ValidateData(a) => cmd_validate_data(a, &mut buf),
            Command::Bench(a) => cmd_bench(a, &mut buf),
            Command::DumpModel(a) => cmd_dump_model(a, &mut buf),
            Command::LoadModel(a) => cmd_load_model(a, &mut buf),
            Command::Predict(a) => cmd_predict(a, &mut buf),
        };
        (code, buf)
    };
    let (code, buf) = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(fail)?;
            pool.install(go)
        }
        None => go(),
    };
    out.write_all(&buf).map_err(io_fail)?;
    code
}

fn load_source(src: &DataSource) -> Result<Dataset, CliError> {
    match (&src.dataset, &src.path) {
        (Some(_), Some(_)) => Err(CliError::Usage("give --dataset or --path, not both".into())),
        (None, None) => Err(CliError::Usage(
            "one of --dataset or --path is required".into(),
        )),
        (Some(name), None) => load_bundled(name).map_err(|e| match e {
            DataError::UnknownDataset { name, known } => CliError::Failure(format!(
                "unknown dataset '{name}'; known datasets: {}",
                known.join(", ")
            )),
            e => fail(e),
        }),
        (None, Some(path)) => load_csv(path).map_err(fail),
    }
}

fn cmd_validate_data(args: ValidateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let ds = load_source(&args.source)?;
    let [c0, c1] = ds.class_counts();
    writeln!(
        out,
        "{} samples, {} features, classes {c0}/{c1}",
        ds.n_samples(),
        ds.n_features()
    )
    .map_err(io_fail)?;
    let Some(entry) = registry_entry(ds.name()) else {
        writeln!(
            out,
            "'{}' is not a registry dataset; known datasets: {}",
            canonical_name(ds.name()),
            registry_names().join(", ")
        )
        .map_err(io_fail)?;
        return Ok(EXIT_FAILURE);
    };
    let report = validate_against_registry(&ds, entry);
    if report.is_ok() {
        writeln!(out, "{}: matches registry", entry.name).map_err(io_fail)?;
        Ok(EXIT_OK)
    } else {
        for m in &report.mismatches {
            writeln!(out, "{}: mismatch: {m}", entry.name).map_err(io_fail)?;
        }
        Ok(EXIT_FAILURE)
    }
}

fn calibration_spec(args: &CalibrationArgs) -> Result<RegularizerSpec, CliError> {
    let usage = |m: &str| CliError::Usage(m.to_string());
    match args.method {
        MethodArg::None => {
            if args.lambda.is_some() || args.alpha.is_some() || args.beta.is_some() {
                return Err(usage("--lambda/--alpha/--beta need --method hs or beta"));
            }
            Ok(RegularizerSpec::None)
        }
        MethodArg::Hs => {
            if args.alpha.is_some() || args.beta.is_some() {
                return Err(usage("--alpha/--beta are for --method beta"));
            }
            let lambda = args
                .lambda
                .ok_or_else(|| usage("--method hs needs --lambda"))?;
            RegularizerSpec::hs(lambda).map_err(|e| CliError::Usage(e.to_string()))
        }
        MethodArg::Beta => {
            if args.lambda.is_some() {
                return Err(usage("--lambda is for --method hs"));
            }
            match (args.alpha, args.beta) {
                (Some(a), Some(b)) => {
                    RegularizerSpec::beta(a, b).map_err(|e| CliError::Usage(e.to_string()))
                }
                _ => Err(usage("--method beta needs --alpha and --beta")),
            }
        }
    }
}

fn bench_grid(args: &BenchArgs) -> Result<GridSpec, CliError> {
    let usage = |e: crate::harness::HarnessError| CliError::Usage(e.to_string());
    match args.method {
        MethodArg::None => {
            if args.lambda_grid.is_some() || args.prior_grid.is_some() || args.tied_prior {
                return Err(CliError::Usage(
                    "grid flags need --method hs or beta".into(),
                ));
            }
            Ok(GridSpec::none())
        }
        MethodArg::Hs => {
            if args.prior_grid.is_some() || args.tied_prior {
                return Err(CliError::Usage(
                    "--prior-grid/--tied-prior are for --method beta".into(),
                ));
            }
            match &args.lambda_grid {
                Some(values) => GridSpec::hs(values).map_err(usage),
                None => Ok(GridSpec::default_for(RegularizerKind::Hs, false)),
            }
        }
        MethodArg::Beta => {
            if args.lambda_grid.is_some() {
                return Err(CliError::Usage("--lambda-grid is for --method hs".into()));
            }
            match (&args.prior_grid, args.tied_prior) {
                (Some(v), true) => GridSpec::beta_tied(v).map_err(usage),
                (Some(v), false) => GridSpec::beta_cartesian(v).map_err(usage),
                (None, tied) => Ok(GridSpec::default_for(RegularizerKind::Beta, tied)),
            }
        }
    }
}

fn cmd_bench(args: BenchArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let grid = bench_grid(&args)?;
    let ds = load_source(&args.source)?;
    let protocol = match args.protocol {
        ProtocolArg::Cv => Protocol::Cv,
        ProtocolArg::Holdout => Protocol::Holdout,
    };
    let mut cfg = ExperimentConfig::new(ds.name(), protocol, args.method.into());
    cfg.grid = grid;
    cfg.folds = args.folds;
    cfg.repetitions = args.reps;
    cfg.master_seed = args.seed;
    cfg.test_fraction = args.test_fraction;
    cfg.tuning_metric = match args.tuning_metric {
        MetricArg::BalancedAccuracy => TuningMetric::BalancedAccuracy,
        MetricArg::RocAuc => TuningMetric::RocAuc,
    };
    cfg.forest = args.forest.config(args.seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = run_experiment(&cfg, &ds, &NoObserver).map_err(fail)?;

    if let Some(path) = &args.out {
        let text = match args.format {
            FormatArg::Json => report.to_json() + "\n",
            FormatArg::Csv => report.to_csv(),
        };
        std::fs::write(path, text)
            .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    }
    let s = &report.summary;
    writeln!(
        out,
        "{:<16} {:<8} {:<8} {:>22} {:>22}",
        "dataset", "protocol", "method", "balanced_accuracy", "roc_auc"
    )
    .map_err(io_fail)?;
    writeln!(
        out,
        "{:<16} {:<8} {:<8} {:>22} {:>22}",
        cfg.dataset,
        cfg.protocol,
        cfg.method,
        format!(
            "{:.4} ± {:.4}",
            s.balanced_accuracy.mean, s.balanced_accuracy.std
        ),
        format!("{:.4} ± {:.4}", s.roc_auc.mean, s.roc_auc.std),
    )
    .map_err(io_fail)?;
    Ok(EXIT_OK)
}

fn fit_calibrated(
    source: &DataSource,
    forest: &ForestArgs,
    calibration: &CalibrationArgs,
    seed: u64,
) -> Result<(Dataset, FittedForest), CliError> {
    let spec = calibration_spec(calibration)?;
    let cfg = forest.config(seed);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ds = load_source(source)?;
    let model = fit_forest(&ds, &cfg).map_err(fail)?;
    let model = apply(&model, spec).map_err(fail)?;
    Ok((ds, model))
}

fn write_output(path: Option<&PathBuf>, text: &str, out: &mut dyn Write) -> Result<(), CliError> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| CliError::Failure(format!("{}: {e}", p.display())))
        }
        None => out.write_all(text.as_bytes()).map_err(io_fail),
    }
}

fn cmd_dump_model(args: DumpArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (_, model) = fit_calibrated(&args.source, &args.forest, &args.calibration, args.seed)?;
    write_output(args.out.as_ref(), &(model.to_json() + "\n"), out)?;
    Ok(EXIT_OK)
}

fn read_model(path: &PathBuf) -> Result<FittedForest, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))?;
    FittedForest::from_json(&text)
        .map_err(|e| CliError::Failure(format!("{}: {e}", path.display())))
}

fn cmd_load_model(args: LoadArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let model = read_model(&args.model)?;
    let leaves: usize = model.trees().iter().map(|t| t.root().n_leaves()).sum();
    writeln!(
        out,
        "{} trees, {} features, {} leaves, calibration {}",
        model.trees().len(),
        model.n_features(),
        leaves,
        model.calibration()
    )
    .map_err(io_fail)?;
    Ok(EXIT_OK)
}

fn cmd_predict(args: PredictArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let (model, training) = match &args.model {
        Some(path) => {
            if args.source.dataset.is_some() || args.source.path.is_some() {
                return Err(CliError::Usage(
                    "--model cannot be combined with --dataset/--path".into(),
                ));
            }
            let model = read_model(path)?;
            let model = match calibration_spec(&args.calibration)? {
                RegularizerSpec::None => model,
                spec => apply(&model, spec).map_err(fail)?,
            };
            (model, None)
        }
        None => {
            let (ds, model) =
                fit_calibrated(&args.source, &args.forest, &args.calibration, args.seed)?;
            (model, Some(ds))
        }
    };
    let rows: Vec<Vec<f64>> = match (&args.input, training) {
        (Some(path), _) => {
            let (header, rows) = load_feature_rows(path).map_err(fail)?;
            match header.iter().position(|h| h == "target") {
                Some(t) => rows
                    .into_iter()
                    .map(|mut r| {
                        r.remove(t);
                        r
                    })
                    .collect(),
                None => rows,
            }
        }
        (None, Some(ds)) => ds.rows().map(<[f64]>::to_vec).collect(),
        (None, None) => return Err(CliError::Usage("--model needs --input".into())),
    };
    let mut text = String::from("row,proba\n");
    for (i, row) in rows.iter().enumerate() {
        let p = model
            .predict_proba(row)
            .map_err(|e| CliError::Failure(format!("row {i}: {e}")))?;
        text.push_str(&format!("{i},{p}\n"));
    }
    write_output(args.out.as_ref(), &text, out)?;
    Ok(EXIT_OK)
}
