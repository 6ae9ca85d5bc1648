//! Benchmark sweeps over model × sequence length × horizon × input variant ×
//! seed, producing one report row per cell.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{fit as fit_flat, FitOptions, FlatRegression, Regularization};
use crate::data::{
    add_time_features, input_feature_names, load_csv, prepare_splits, DataOptions, InputMode, ScalerKind, Splits,
    TimeSeriesFrame, DAY_OF_WEEK_COLUMN, HOUR_COLUMN,
};
use crate::metrics::{evaluate, Metric};
use crate::model::{Tln, TlnConfig};
use crate::tensor::Tensor;
use crate::train::{fit, TrainConfig};
use crate::{Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub path: PathBuf,
    #[serde(default = "default_timestamp_column")]
    pub timestamp_column: String,
    pub target_column: String,
}

fn default_timestamp_column() -> String {
    "date".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tln,
    TlnNoConv,
    Ols,
    Ridge,
    Lasso,
    Elasticnet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tln => "tln",
            ModelKind::TlnNoConv => "tln_no_conv",
            ModelKind::Ols => "ols",
            ModelKind::Ridge => "ridge",
            ModelKind::Lasso => "lasso",
            ModelKind::Elasticnet => "elasticnet",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Variant {
    #[serde(default)]
    pub multivariate: bool,
    #[serde(default)]
    pub time_features: bool,
}

impl Variant {
    /// `uni`, `multi`, `uni+time`, `multi+time`.
    pub fn name(&self) -> String {
        let base = if self.multivariate { "multi" } else { "uni" };
        if self.time_features {
            format!("{base}+time")
        } else {
            base.to_string()
        }
    }
}

/// Penalties used by the regularized baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Alphas {
    pub ridge: f64,
    pub lasso: f64,
    pub elasticnet: f64,
    pub l1_ratio: f64,
}

impl Default for Alphas {
    fn default() -> Self {
        Alphas {
            ridge: 1.0,
            lasso: 0.01,
            elasticnet: 0.01,
            l1_ratio: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dataset: DatasetSpec,
    #[serde(default = "default_seq_lens")]
    pub seq_lens: Vec<usize>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    pub models: Vec<ModelKind>,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default = "default_metric")]
    pub metric: Metric,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_scaler")]
    pub scaler: ScalerKind,
    #[serde(default = "default_fractions")]
    pub fractions: (f64, f64, f64),
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub alphas: Alphas,
    #[serde(default)]
    pub fit_options: FitOptions,
    /// Cells run concurrently when above 1.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

fn default_seq_lens() -> Vec<usize> {
    vec![3, 10, 20, 50, 100, 200, 400]
}
fn default_horizons() -> Vec<usize> {
    vec![1, 6, 15, 30, 90, 180, 360]
}
fn default_variants() -> Vec<Variant> {
    vec![Variant::default()]
}
fn default_metric() -> Metric {
    Metric::R2
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_scaler() -> ScalerKind {
    ScalerKind::Standard
}
fn default_fractions() -> (f64, f64, f64) {
    (0.7, 0.2, 0.1)
}
fn default_jobs() -> usize {
    1
}

impl SweepConfig {
    /// Defaults for everything except the dataset and model list.
    pub fn new(dataset: DatasetSpec, models: Vec<ModelKind>) -> Self {
        SweepConfig {
            dataset,
            seq_lens: default_seq_lens(),
            horizons: default_horizons(),
            models,
            variants: default_variants(),
            metric: default_metric(),
            seeds: default_seeds(),
            scaler: default_scaler(),
            fractions: default_fractions(),
            train: TrainConfig::default(),
            alphas: Alphas::default(),
            fit_options: FitOptions::default(),
            jobs: default_jobs(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SweepConfig = serde_json::from_str(text).map_err(Error::from_json)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("seq_lens", self.seq_lens.is_empty()),
            ("horizons", self.horizons.is_empty()),
            ("models", self.models.is_empty()),
            ("variants", self.variants.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("sweep `{name}` must not be empty")));
        }
        if self.seq_lens.contains(&0) || self.horizons.contains(&0) {
            return Err(Error::Config("sequence lengths and horizons must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Number of rows a complete run produces.
    pub fn grid_size(&self) -> usize {
        self.models.len() * self.seq_lens.len() * self.horizons.len() * self.variants.len() * self.seeds.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    /// OLS with fewer training rows than design columns.
    InsufficientSamples,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: ModelKind,
    pub seq_len: usize,
    pub horizon: usize,
    pub variant: String,
    pub seed: u64,
    pub status: CellStatus,
    pub metric: Metric,
    pub value: Option<f64>,
    pub param_count: Option<usize>,
    pub train_seconds: Option<f64>,
    pub reason: Option<String>,
}

impl SweepRow {
    fn key(&self) -> (ModelKind, usize, usize, &str, u64) {
        (self.model, self.seq_len, self.horizon, &self.variant, self.seed)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(Error::from_json)
    }

    /// Writes `<stem>.csv` and `<stem>.json` side by side.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
        let stem = stem.as_ref();
        let csv_path = stem.with_extension("csv");
        let json_path = stem.with_extension("json");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        fs::write(&json_path, self.to_json()?).map_err(|e| Error::io(&json_path, e))?;
        Ok((csv_path, json_path))
    }

    /// The columns that must be identical across reruns: everything except
    /// training time, one CSV line per row.
    pub fn metric_columns(&self) -> String {
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{},{},{},{},{:?},{},{}",
                    r.model.name(),
                    r.seq_len,
                    r.horizon,
                    r.variant,
                    r.seed,
                    r.status,
                    r.value.map(|v| format!("{v:?}")).unwrap_or_default(),
                    r.param_count.map(|v| v.to_string()).unwrap_or_default()
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn failures(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.status != CellStatus::Ok)
    }
}

struct Cell {
    model: ModelKind,
    seq_len: usize,
    horizon: usize,
    variant: Variant,
    seed: u64,
}

struct Outcome {
    value: f64,
    param_count: usize,
    train_seconds: f64,
}

/// Checks that every column the grid needs is present before any cell runs.
fn check_schema(frame: &TimeSeriesFrame, cfg: &SweepConfig) -> Result<()> {
    if cfg.variants.iter().any(|v| v.time_features) {
        for name in [HOUR_COLUMN, DAY_OF_WEEK_COLUMN] {
            if frame.column(name).is_some() {
                return Err(Error::Schema(format!("dataset already has a `{name}` column")));
            }
        }
    }
    for v in &cfg.variants {
        let mode = if v.multivariate { InputMode::Multivariate } else { InputMode::Univariate };
        let with_time = if v.time_features { add_time_features(frame)? } else { frame.clone() };
        input_feature_names(&with_time, mode, v.time_features)?;
    }
    Ok(())
}

fn run_cell(cell: &Cell, splits: &Splits<Real>, cfg: &SweepConfig) -> Result<std::result::Result<Outcome, String>> {
    let features = splits.train.inputs[0].cols();
    let predictions: Vec<Tensor<Real>>;
    let param_count;
    let train_seconds;
    match cell.model {
        ModelKind::Tln | ModelKind::TlnNoConv => {
            let model_cfg = TlnConfig::new(cell.seq_len, features, cell.horizon, 1)
                .with_convolution(cell.model == ModelKind::Tln)
                .with_seed(cell.seed);
            let model = Tln::<Real>::build(model_cfg)?;
            let train_cfg = TrainConfig {
                seed: cell.seed,
                ..cfg.train.clone()
            };
            let start = Instant::now();
            let (trained, _) = match fit(&model, &splits.train, &splits.val, &train_cfg) {
                Ok(r) => r,
                Err(e @ (Error::Training { .. } | Error::NonFiniteGradient(_))) => return Ok(Err(e.to_string())),
                Err(e) => return Err(e),
            };
            train_seconds = start.elapsed().as_secs_f64();
            param_count = trained.param_count();
            predictions = splits.test.inputs.iter().map(|x| trained.forward(x)).collect::<Result<_>>()?;
        }
        kind => {
            let problem = FlatRegression::from_dataset(&splits.train)?.with_options(cfg.fit_options.clone());
            let a = &cfg.alphas;
            let reg = match kind {
                ModelKind::Ols => Regularization::None,
                ModelKind::Ridge => Regularization::Ridge { alpha: a.ridge },
                ModelKind::Lasso => Regularization::Lasso { alpha: a.lasso },
                _ => Regularization::ElasticNet {
                    alpha: a.elasticnet,
                    l1_ratio: a.l1_ratio,
                },
            };
            let start = Instant::now();
            let fitted = match fit_flat(&problem, reg) {
                Ok(m) => m,
                Err(e @ (Error::Singular { .. } | Error::NonFinite(_))) => return Ok(Err(e.to_string())),
                Err(e) => return Err(e),
            };
            train_seconds = start.elapsed().as_secs_f64();
            param_count = fitted.param_count();
            predictions = splits.test.inputs.iter().map(|x| fitted.predict(x)).collect::<Result<_>>()?;
        }
    }
    match evaluate(cfg.metric, &splits.test.targets, &predictions) {
        Ok(m) => Ok(Ok(Outcome {
            value: m.value,
            param_count,
            train_seconds,
        })),
        Err(e @ Error::UndefinedVariance) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

fn row_for(cell: &Cell, cfg: &SweepConfig, status: CellStatus, outcome: Option<Outcome>, reason: Option<String>) -> SweepRow {
    SweepRow {
        model: cell.model,
        seq_len: cell.seq_len,
        horizon: cell.horizon,
        variant: cell.variant.name(),
        seed: cell.seed,
        status,
        metric: cfg.metric,
        value: outcome.as_ref().map(|o| o.value),
        param_count: outcome.as_ref().map(|o| o.param_count),
        train_seconds: outcome.as_ref().map(|o| o.train_seconds),
        reason,
    }
}

fn execute(cell: &Cell, splits: &std::result::Result<Splits<Real>, String>, cfg: &SweepConfig) -> SweepRow {
    let splits = match splits {
        Ok(s) => s,
        Err(reason) => return row_for(cell, cfg, CellStatus::Failed, None, Some(reason.clone())),
    };
    if cell.model == ModelKind::Ols {
        let columns = splits.train.inputs[0].len();
        if splits.train.len() < columns {
            let reason = format!("{} training samples for {columns} design columns", splits.train.len());
            return row_for(cell, cfg, CellStatus::InsufficientSamples, None, Some(reason));
        }
    }
    match run_cell(cell, splits, cfg) {
        Ok(Ok(outcome)) => row_for(cell, cfg, CellStatus::Ok, Some(outcome), None),
        Ok(Err(reason)) => row_for(cell, cfg, CellStatus::Failed, None, Some(reason)),
        Err(e) => row_for(cell, cfg, CellStatus::Failed, None, Some(e.to_string())),
    }
}

/// Runs every cell of the grid. Dataset loading and schema problems abort
/// before any cell runs; per-cell problems become `failed` or
/// `insufficient-samples` rows. Rows are sorted by (model, S, H, variant,
/// seed).
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let ds = &cfg.dataset;
    let frame = load_csv(&ds.path, &ds.timestamp_column, &ds.target_column)?;
    run_sweep_on(&frame, cfg)
}

/// [`run_sweep`] on an already loaded frame.
pub fn run_sweep_on(frame: &TimeSeriesFrame, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    check_schema(frame, cfg)?;

    // Splits are shared by all models and seeds of a (S, H, variant) group.
    let mut groups = Vec::new();
    let mut cells = Vec::new();
    for &s in &cfg.seq_lens {
        for &h in &cfg.horizons {
            for &variant in &cfg.variants {
                let opts = DataOptions {
                    seq_len: s,
                    horizon: h,
                    mode: if variant.multivariate { InputMode::Multivariate } else { InputMode::Univariate },
                    time_features: variant.time_features,
                    scaler: cfg.scaler,
                    fractions: cfg.fractions,
                };
                let splits = prepare_splits::<Real>(frame, &opts).map_err(|e| e.to_string());
                for &model in &cfg.models {
                    for &seed in &cfg.seeds {
                        cells.push((
                            groups.len(),
                            Cell {
                                model,
                                seq_len: s,
                                horizon: h,
                                variant,
                                seed,
                            },
                        ));
                    }
                }
                groups.push(splits);
            }
        }
    }

    let rows = Mutex::new(Vec::with_capacity(cells.len()));
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some((g, cell)) = cells.get(i) else { break };
        let row = execute(cell, &groups[*g], cfg);
        log::info!(
            "{} S={} H={} {} seed={}: {:?} {:?}",
            row.model.name(),
            row.seq_len,
            row.horizon,
            row.variant,
            row.seed,
            row.status,
            row.value
        );
        rows.lock().expect("report accumulator poisoned").push(row);
    };
    if cfg.jobs > 1 {
        std::thread::scope(|scope| {
            for _ in 0..cfg.jobs.min(cells.len()) {
                scope.spawn(worker);
            }
        });
    } else {
        worker();
    }

    let mut rows = rows.into_inner().expect("report accumulator poisoned");
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok(SweepReport { rows })
}
