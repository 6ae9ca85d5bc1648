//! `tln` command-line front end.
//!
//! Exit codes: 0 success, 2 bad flags or malformed configuration, 3 data or
//! file problems, 4 training divergence, undefined metric or a tolerance
//! that was exceeded. Machine-readable output goes to stdout; everything
//! else to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use tln::baselines::{self, FitOptions, FlatRegression, Regularization};
use tln::data::{self, DataOptions, InputMode, ScalerKind, Splits, WindowedDataset};
use tln::equivalence::{self, default_feature_names};
use tln::harness::{self, SweepConfig};
use tln::metrics::{self, Metric};
use tln::train::{self, TrainConfig};
use tln::{EquivalentLinear, FlatLinearModel, Real, TlnConfig, TlnModel};

#[derive(Parser)]
#[command(name = "tln", version, about = "Temporal Linear Network forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a TLN and write the model file and training report.
    Train(TrainArgs),
    /// Score a model file on one split of a dataset.
    Evaluate(EvaluateArgs),
    /// Collapse a TLN into its equivalent linear map and verify it.
    Extract(ExtractArgs),
    /// Write the weight table feeding one output as CSV.
    ExportWeights(ExportArgs),
    /// Run a benchmark grid from a JSON configuration.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CSV file with a timestamp column and numeric columns.
    #[arg(long)]
    data: PathBuf,
    /// Column to forecast.
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "date")]
    timestamp_column: String,
    /// Use every column as input, not just the target.
    #[arg(long)]
    multivariate: bool,
    /// Append hour-of-day and day-of-week inputs.
    #[arg(long)]
    time_features: bool,
    #[arg(long, value_enum)]
    scaler: Option<ScalerArg>,
    /// JSON file of settings; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScalerArg {
    Standard,
    Minmax,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Tln,
    TlnNoConv,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum, default_value = "tln")]
    model: ModelArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Model file to write.
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Training report to write; defaults to `<out stem>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    R2,
    Mse,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::R2 => Metric::R2,
            MetricArg::Mse => Metric::Mse,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    /// TLN model file or fitted baseline file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, value_enum, default_value = "mse")]
    metric: MetricArg,
    /// Report the metric for each forecast step as well.
    #[arg(long)]
    per_horizon: bool,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    model: PathBuf,
    /// Equivalent-map file to write.
    #[arg(long, default_value = "equivalent.json")]
    out: PathBuf,
    /// Largest acceptable deviation between the model and its equivalent.
    #[arg(long, default_value_t = 1e-9)]
    tolerance: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Tln,
    Ols,
    Ridge,
    Lasso,
    Elasticnet,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, value_enum, default_value = "tln")]
    model_kind: KindArg,
    /// TLN model, equivalent map or fitted baseline. Baselines can instead be
    /// fitted here from `--data`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value = "date")]
    timestamp_column: String,
    #[arg(long)]
    multivariate: bool,
    #[arg(long)]
    time_features: bool,
    #[arg(long, value_enum)]
    scaler: Option<ScalerArg>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    l1_ratio: f64,
    /// Where to save a baseline fitted from `--data`.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Forecast step whose weights are exported.
    #[arg(long, default_value_t = 0)]
    output_step: usize,
    #[arg(long, default_value_t = 0)]
    output_feature: usize,
    /// Comma-separated input feature names.
    #[arg(long, value_delimiter = ',')]
    feature_names: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report path stem; `.csv` and `.json` are written side by side.
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
}

/// Settings a `--config` file may provide.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    seq_len: Option<usize>,
    horizon: Option<usize>,
    seed: Option<u64>,
    scaler: Option<ScalerKind>,
    fractions: Option<(f64, f64, f64)>,
    hidden_shapes: Option<Vec<(usize, usize)>>,
    conv_kernel_size: Option<usize>,
    dilation_schedule: Option<Vec<usize>>,
    train: Option<TrainConfig>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait OrExit<T> {
    fn or_exit(self, code: u8) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_exit(self, code: u8) -> CliResult<T> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn fail<T>(code: u8, error: anyhow::Error) -> CliResult<T> {
    Err(Failure { code, error })
}

/// Exit code for an error from a data-dependent step.
fn data_code(e: &tln::Error) -> u8 {
    match e {
        tln::Error::Training { .. } | tln::Error::NonFiniteGradient(_) | tln::Error::UndefinedVariance => 4,
        _ => 3,
    }
}

fn data_step<T>(r: tln::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure {
        code: data_code(&e),
        error: e.into(),
    })
}

fn print_json(value: &serde_json::Value) {
    println!("{value}");
}

fn load_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .or_exit(2)?;
    serde_json::from_str(&text)
        .map_err(|e| anyhow!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column()))
        .or_exit(2)
}

impl DataArgs {
    fn options(&self, cfg: &RunConfig, seq_len: usize, horizon: usize) -> DataOptions {
        let mut opts = DataOptions::new(seq_len, horizon);
        opts.mode = if self.multivariate { InputMode::Multivariate } else { InputMode::Univariate };
        opts.time_features = self.time_features;
        opts.scaler = match self.scaler {
            Some(ScalerArg::Standard) => ScalerKind::Standard,
            Some(ScalerArg::Minmax) => ScalerKind::MinMax,
            None => cfg.scaler.unwrap_or(opts.scaler),
        };
        if let Some(f) = cfg.fractions {
            opts.fractions = f;
        }
        opts
    }

    fn load(&self, opts: &DataOptions) -> CliResult<Splits<Real>> {
        let frame = data_step(data::load_csv(&self.data, &self.timestamp_column, &self.target))?;
        log::info!("loaded {} rows from {}", frame.len(), self.data.display());
        data_step(data::prepare_splits(&frame, opts))
    }
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = load_run_config(args.data.config.as_deref())?;
    let (Some(seq_len), Some(horizon)) = (args.seq_len.or(cfg.seq_len), args.horizon.or(cfg.horizon)) else {
        return fail(2, anyhow!("--seq-len and --horizon are required (as flags or in --config)"));
    };
    let opts = args.data.options(&cfg, seq_len, horizon);
    let splits = args.data.load(&opts)?;

    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let mut train_cfg = cfg.train.clone().unwrap_or_default();
    train_cfg.seed = seed;
    if let Some(v) = args.epochs {
        train_cfg.max_epochs = v;
        train_cfg.patience = train_cfg.patience.min(v);
    }
    if let Some(v) = args.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.patience {
        train_cfg.patience = v;
    }
    train_cfg.validate().or_exit(2)?;

    let features = splits.train.inputs[0].cols();
    let mut model_cfg = TlnConfig::new(seq_len, features, horizon, 1)
        .with_convolution(args.model == ModelArg::Tln)
        .with_seed(seed);
    if let Some(h) = cfg.hidden_shapes {
        model_cfg = model_cfg.with_hidden_shapes(h);
    }
    if let Some(k) = cfg.conv_kernel_size {
        model_cfg.conv_kernel_size = k;
    }
    model_cfg.dilation_schedule = cfg.dilation_schedule;
    let model = TlnModel::build(model_cfg).or_exit(2)?;
    log::info!(
        "training {} parameters on {} windows ({} validation)",
        model.param_count(),
        splits.train.len(),
        splits.val.len()
    );

    let (trained, report) = data_step(train::fit(&model, &splits.train, &splits.val, &train_cfg))?;
    trained.save(&args.out).or_exit(3)?;
    let report_path = args.report.unwrap_or_else(|| args.out.with_extension("report.json"));
    report.write_json(&report_path).or_exit(3)?;
    eprintln!(
        "best validation loss {:.6} at epoch {} of {}",
        report.best_val_loss, report.best_epoch, report.epochs_run
    );
    print_json(&json!({
        "model": args.out,
        "report": report_path,
        "param_count": trained.param_count(),
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "epochs_run": report.epochs_run,
        "wall_seconds": report.wall_seconds,
    }));
    Ok(())
}

/// A model file of either family.
enum AnyModel {
    Tln(TlnModel),
    Flat(FlatLinearModel),
    Equivalent(EquivalentLinear),
}

impl AnyModel {
    fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading model {}", path.display()))
            .or_exit(3)?;
        let probe: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("{} is not JSON", path.display()))
            .or_exit(3)?;
        let loaded = match probe.get("kind").and_then(|k| k.as_str()) {
            Some("flat_linear") => FlatLinearModel::from_json(&text).map(AnyModel::Flat),
            Some("equivalent_linear") => EquivalentLinear::from_json(&text).map(AnyModel::Equivalent),
            _ => TlnModel::from_json(&text).map(AnyModel::Tln),
        };
        loaded.with_context(|| format!("loading model {}", path.display())).or_exit(3)
    }

    fn shapes(&self) -> ((usize, usize), (usize, usize)) {
        match self {
            AnyModel::Tln(m) => (m.input_shape(), m.output_shape()),
            AnyModel::Flat(m) => (m.input_shape, m.output_shape),
            AnyModel::Equivalent(m) => {
                let (s, f, so, fo) = m.shapes();
                ((s, f), (so, fo))
            }
        }
    }

    fn predict(&self, x: &tln::SequenceTensor) -> tln::Result<tln::SequenceTensor> {
        match self {
            AnyModel::Tln(m) => m.forward(x),
            AnyModel::Flat(m) => m.predict(x),
            AnyModel::Equivalent(m) => m.predict(x),
        }
    }

    fn equivalent(&self) -> tln::Result<EquivalentLinear> {
        match self {
            AnyModel::Tln(m) => equivalence::extract_equivalent(m),
            AnyModel::Flat(m) => m.to_equivalent(),
            AnyModel::Equivalent(m) => Ok(m.clone()),
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let model = AnyModel::load(&args.model)?;
    let cfg = load_run_config(args.data.config.as_deref())?;
    let ((s, f), (h, _)) = model.shapes();
    let opts = args.data.options(&cfg, s, h);
    let splits = args.data.load(&opts)?;
    let set: &WindowedDataset<Real> = match args.split {
        SplitArg::Train => &splits.train,
        SplitArg::Val => &splits.val,
        SplitArg::Test => &splits.test,
    };
    let data_features = set.inputs[0].cols();
    if data_features != f {
        return fail(
            3,
            anyhow!("model expects {f} input features but the data flags give {data_features}"),
        );
    }
    let predictions = set.inputs.iter().map(|x| model.predict(x)).collect::<tln::Result<Vec<_>>>();
    let predictions = data_step(predictions)?;
    let metric = Metric::from(args.metric);
    let result = data_step(metrics::evaluate(metric, &set.targets, &predictions))?;
    let mut out = serde_json::to_value(&result).or_exit(3)?;
    if args.per_horizon {
        let per = data_step(metrics::evaluate_per_horizon(metric, &set.targets, &predictions))?;
        out["per_horizon"] = per.iter().map(|m| json!(m.value)).collect();
    }
    print_json(&out);
    Ok(())
}

fn cmd_extract(args: ExtractArgs) -> CliResult<()> {
    let model = match AnyModel::load(&args.model)? {
        AnyModel::Tln(m) => m,
        _ => return fail(3, anyhow!("{} is not a TLN model file", args.model.display())),
    };
    let eq = equivalence::extract_equivalent(&model).or_exit(3)?;
    let deviation = equivalence::verify_equivalence(&model, &eq, args.trials, args.seed).or_exit(2)?;
    eq.save(&args.out).or_exit(3)?;
    print_json(&json!({
        "equivalent": args.out,
        "max_deviation": deviation,
        "trials": args.trials,
        "tln_param_count": model.param_count(),
        "equivalent_param_count": eq.param_count(),
    }));
    if deviation > args.tolerance {
        return fail(
            4,
            anyhow!("equivalent map deviates by {deviation:e}, above tolerance {:e}", args.tolerance),
        );
    }
    Ok(())
}

fn cmd_export_weights(args: ExportArgs) -> CliResult<()> {
    let mut data_names = None;
    let model = match (&args.model, &args.data) {
        (Some(path), _) => {
            let model = AnyModel::load(path)?;
            let family_matches = match (&model, args.model_kind) {
                (AnyModel::Flat(m), kind) => kind != KindArg::Tln && m.regularization.name() == kind_name(kind),
                (_, kind) => kind == KindArg::Tln,
            };
            if !family_matches {
                return fail(3, anyhow!("{} does not hold a {} model", path.display(), kind_name(args.model_kind)));
            }
            model
        }
        (None, Some(data_path)) => {
            if args.model_kind == KindArg::Tln {
                return fail(2, anyhow!("exporting a TLN needs --model; train one with `tln train`"));
            }
            let (Some(target), Some(seq_len), Some(horizon)) = (&args.target, args.seq_len, args.horizon) else {
                return fail(2, anyhow!("fitting from --data needs --target, --seq-len and --horizon"));
            };
            let data_args = DataArgs {
                data: data_path.clone(),
                target: target.clone(),
                timestamp_column: args.timestamp_column.clone(),
                multivariate: args.multivariate,
                time_features: args.time_features,
                scaler: args.scaler,
                config: None,
            };
            let splits = data_args.load(&data_args.options(&RunConfig::default(), seq_len, horizon))?;
            data_names = splits.train.provenance.as_ref().map(|p| p.feature_names.clone());
            let problem = data_step(FlatRegression::from_dataset(&splits.train))?.with_options(FitOptions::default());
            let reg = regularization(args.model_kind, args.alpha, args.l1_ratio).or_exit(2)?;
            let fitted = data_step(baselines::fit(&problem, reg))?;
            if !fitted.converged {
                log::warn!("coordinate descent stopped before converging");
            }
            if let Some(path) = &args.save_model {
                fitted.save(path).or_exit(3)?;
            }
            AnyModel::Flat(fitted)
        }
        (None, None) => return fail(2, anyhow!("either --model or --data is required")),
    };
    let eq = model.equivalent().or_exit(3)?;
    let (_, f, _, _) = eq.shapes();
    let names = args.feature_names.or(data_names).unwrap_or_else(|| default_feature_names(f));
    equivalence::export_weight_table(&eq, args.output_step, args.output_feature, &names, &args.out).or_exit(3)?;
    print_json(&json!({
        "table": args.out,
        "model_kind": kind_name(args.model_kind),
        "output_step": args.output_step,
        "output_feature": args.output_feature,
    }));
    Ok(())
}

fn kind_name(kind: KindArg) -> &'static str {
    match kind {
        KindArg::Tln => "tln",
        KindArg::Ols => "ols",
        KindArg::Ridge => "ridge",
        KindArg::Lasso => "lasso",
        KindArg::Elasticnet => "elasticnet",
    }
}

fn regularization(kind: KindArg, alpha: Option<f64>, l1_ratio: f64) -> anyhow::Result<Regularization> {
    let defaults = harness::Alphas::default();
    Ok(match kind {
        KindArg::Ols => Regularization::None,
        KindArg::Ridge => Regularization::Ridge {
            alpha: alpha.unwrap_or(defaults.ridge),
        },
        KindArg::Lasso => Regularization::Lasso {
            alpha: alpha.unwrap_or(defaults.lasso),
        },
        KindArg::Elasticnet => Regularization::ElasticNet {
            alpha: alpha.unwrap_or(defaults.elasticnet),
            l1_ratio,
        },
        KindArg::Tln => return Err(anyhow!("a TLN is not a regression baseline")),
    })
}

fn cmd_sweep(args: SweepArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading sweep config {}", args.config.display()))
        .or_exit(2)?;
    let mut cfg = SweepConfig::from_json(&text)
        .with_context(|| format!("sweep config {}", args.config.display()))
        .or_exit(2)?;
    if let Some(j) = args.jobs {
        cfg.jobs = j;
    }
    if let Some(m) = args.metric {
        cfg.metric = m.into();
    }
    cfg.validate().or_exit(2)?;
    eprintln!("running {} cells", cfg.grid_size());
    let report = data_step(harness::run_sweep(&cfg))?;
    let (csv_path, json_path) = report.write(&args.out).or_exit(3)?;
    let failures = report.failures().count();
    if failures > 0 {
        eprintln!("{failures} of {} cells did not produce a metric; see the reason column", report.rows.len());
    }
    print_json(&json!({
        "rows": report.rows.len(),
        "failures": failures,
        "csv": csv_path,
        "json": json_path,
    }));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("TLN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Extract(a) => cmd_extract(a),
        Command::ExportWeights(a) => cmd_export_weights(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
