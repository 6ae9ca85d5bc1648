//! CSV ingestion, scaling, calendar features, windowing and chronological
//! splits.
//!
//! The usual pipeline is [`load_csv`] → [`add_time_features`] (optional) →
//! [`chrono_split`] → [`fit_scaler`] on the training segment →
//! [`ScalerState::transform`] on every segment → [`make_windows`].
//! [`prepare_splits`] runs all of it.

use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

pub const HOUR_COLUMN: &str = "hour";
pub const DAY_OF_WEEK_COLUMN: &str = "day_of_week";

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Named, equally long feature series on strictly increasing timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFrame {
    timestamps: Vec<NaiveDateTime>,
    columns: Vec<Column>,
    target: String,
}

impl TimeSeriesFrame {
    pub fn new(timestamps: Vec<NaiveDateTime>, columns: Vec<Column>, target: impl Into<String>) -> Result<Self> {
        let target = target.into();
        if timestamps.is_empty() {
            return Err(Error::Data("frame has no rows".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if c.values.len() != timestamps.len() {
                return Err(Error::Schema(format!(
                    "column `{}` has {} values for {} timestamps",
                    c.name,
                    c.values.len(),
                    timestamps.len()
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column `{}`", c.name)));
            }
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!("column `{}` row {i} is not finite", c.name)));
            }
        }
        if !seen.contains(target.as_str()) {
            return Err(Error::Schema(format!("target column `{target}` not found")));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Ordering {
                row: i + 1,
                message: format!("{} follows {}", timestamps[i + 1], timestamps[i]),
            });
        }
        Ok(TimeSeriesFrame {
            timestamps,
            columns,
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn target_name(&self) -> &str {
        &self.target
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Rows `range` as a new frame.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Range(format!("rows {range:?} of a {}-row frame", self.len())));
        }
        TimeSeriesFrame::new(
            self.timestamps[range.clone()].to_vec(),
            self.columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    values: c.values[range.clone()].to_vec(),
                })
                .collect(),
            self.target.clone(),
        )
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    const FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .or_else(|| DateTime::parse_from_rfc3339(s).ok().map(|d| d.naive_utc()))
        .or_else(|| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0)))
}

/// Reads a headed CSV. Every column other than `timestamp_column` becomes a
/// numeric feature; unparseable or missing values are reported with their
/// 1-based data row numbers.
pub fn load_csv(path: impl AsRef<Path>, timestamp_column: &str, target_column: &str) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, timestamp_column, target_column)
}

pub fn read_csv(reader: impl std::io::Read, timestamp_column: &str, target_column: &str) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ts_idx = headers
        .iter()
        .position(|h| h == timestamp_column)
        .ok_or_else(|| Error::Schema(format!("timestamp column `{timestamp_column}` not found")))?;
    if !headers.iter().any(|h| h == target_column) {
        return Err(Error::Schema(format!("target column `{target_column}` not found")));
    }
    let feature_idx: Vec<usize> = (0..headers.len()).filter(|&i| i != ts_idx).collect();
    let mut timestamps = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); feature_idx.len()];
    let mut bad_rows = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let data_row = row + 1;
        let Some(ts) = record.get(ts_idx).and_then(parse_timestamp) else {
            return Err(Error::Data(format!(
                "data row {data_row}: unparseable timestamp {:?}",
                record.get(ts_idx).unwrap_or("")
            )));
        };
        timestamps.push(ts);
        let mut ok = true;
        for (col, &i) in feature_idx.iter().enumerate() {
            match record.get(i).map(str::parse::<f64>) {
                Some(Ok(v)) if v.is_finite() => values[col].push(v),
                _ => {
                    ok = false;
                    values[col].push(0.0);
                }
            }
        }
        if !ok {
            bad_rows.push(data_row);
        }
    }
    if !bad_rows.is_empty() {
        let shown: Vec<String> = bad_rows.iter().take(20).map(usize::to_string).collect();
        return Err(Error::Data(format!(
            "{} rows with missing or non-numeric values: {}{}",
            bad_rows.len(),
            shown.join(", "),
            if bad_rows.len() > 20 { ", ..." } else { "" }
        )));
    }
    let columns = feature_idx
        .iter()
        .zip(values)
        .map(|(&i, values)| Column {
            name: headers[i].to_string(),
            values,
        })
        .collect();
    TimeSeriesFrame::new(timestamps, columns, target_column)
}

/// Appends `hour` (0–23) and `day_of_week` (Monday = 0) as raw integers.
pub fn add_time_features(frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    for name in [HOUR_COLUMN, DAY_OF_WEEK_COLUMN] {
        if frame.column(name).is_some() {
            return Err(Error::Schema(format!("column `{name}` already present")));
        }
    }
    let mut columns = frame.columns.clone();
    columns.push(Column {
        name: HOUR_COLUMN.into(),
        values: frame.timestamps.iter().map(|t| t.hour() as f64).collect(),
    });
    columns.push(Column {
        name: DAY_OF_WEEK_COLUMN.into(),
        values: frame
            .timestamps
            .iter()
            .map(|t| t.weekday().num_days_from_monday() as f64)
            .collect(),
    });
    TimeSeriesFrame::new(frame.timestamps.clone(), columns, frame.target.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerKind {
    MinMax,
    Standard,
}

/// Per-column `(offset, scale)`: `transform(v) = (v − offset) / scale`.
/// A zero scale marks a constant column, which transforms to 0 and inverts
/// to its offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub offset: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerState {
    pub kind: ScalerKind,
    pub columns: Vec<ColumnStats>,
}

/// Fits per-column statistics on rows `fit_range` only.
///
/// Min-max maps the range minimum to 0 and maximum to 1; standard uses the
/// population mean and standard deviation.
pub fn fit_scaler(frame: &TimeSeriesFrame, kind: ScalerKind, fit_range: std::ops::Range<usize>) -> Result<ScalerState> {
    if fit_range.start >= fit_range.end || fit_range.end > frame.len() {
        return Err(Error::Range(format!(
            "scaler fit range {fit_range:?} of a {}-row frame",
            frame.len()
        )));
    }
    let columns = frame
        .columns
        .iter()
        .map(|c| {
            let v = &c.values[fit_range.clone()];
            let (offset, scale) = match kind {
                ScalerKind::MinMax => {
                    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (min, max - min)
                }
                ScalerKind::Standard => {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                    (mean, var.sqrt())
                }
            };
            ColumnStats {
                name: c.name.clone(),
                offset,
                scale,
            }
        })
        .collect();
    Ok(ScalerState { kind, columns })
}

impl ColumnStats {
    pub fn transform(&self, v: f64) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            (v - self.offset) / self.scale
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        if self.scale == 0.0 {
            self.offset
        } else {
            v * self.scale + self.offset
        }
    }
}

impl ScalerState {
    pub fn stats(&self, name: &str) -> Result<&ColumnStats> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::Schema(format!("scaler has no statistics for column `{name}`")))
    }

    pub fn transform(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.map_frame(frame, ColumnStats::transform)
    }

    pub fn inverse_transform(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.map_frame(frame, ColumnStats::inverse)
    }

    /// Inverse-transforms values of one column, e.g. forecasts of the target.
    pub fn inverse_column(&self, name: &str, values: &[f64]) -> Result<Vec<f64>> {
        let stats = self.stats(name)?;
        Ok(values.iter().map(|&v| stats.inverse(v)).collect())
    }

    fn map_frame(&self, frame: &TimeSeriesFrame, f: fn(&ColumnStats, f64) -> f64) -> Result<TimeSeriesFrame> {
        let columns = frame
            .columns
            .iter()
            .map(|c| {
                let stats = self.stats(&c.name)?;
                Ok(Column {
                    name: c.name.clone(),
                    values: c.values.iter().map(|&v| f(stats, v)).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TimeSeriesFrame::new(frame.timestamps.clone(), columns, frame.target.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Only the target column (plus time features when requested).
    Univariate,
    /// Every column.
    Multivariate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seq_len: usize,
    pub horizon: usize,
    pub feature_names: Vec<String>,
    pub target: String,
    pub split: String,
}

/// Aligned `(input window, target window)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset<T> {
    /// Each `seq_len × features`.
    pub inputs: Vec<Tensor<T>>,
    /// Each `horizon × 1`.
    pub targets: Vec<Tensor<T>>,
    pub scaler: Option<ScalerState>,
    pub provenance: Option<Provenance>,
}

impl<T: Scalar> WindowedDataset<T> {
    pub fn from_samples(inputs: Vec<Tensor<T>>, targets: Vec<Tensor<T>>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape(
                "windowed dataset",
                format!("{} inputs", inputs.len()),
                format!("{} targets", targets.len()),
            ));
        }
        for (name, set) in [("inputs", &inputs), ("targets", &targets)] {
            if let Some(first) = set.first() {
                if let Some(bad) = set.iter().position(|t| t.shape() != first.shape()) {
                    return Err(Error::shape(
                        "windowed dataset",
                        format!("{name}[0] {}", first.shape_str()),
                        format!("{name}[{bad}] {}", set[bad].shape_str()),
                    ));
                }
            }
        }
        Ok(WindowedDataset {
            inputs,
            targets,
            scaler: None,
            provenance: None,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Every input window flattened position-major, one row per sample.
    pub fn flat_inputs(&self) -> Vec<Vec<T>> {
        self.inputs.iter().map(|x| x.as_slice().to_vec()).collect()
    }

    pub fn flat_targets(&self) -> Vec<Vec<T>> {
        self.targets.iter().map(|y| y.as_slice().to_vec()).collect()
    }
}

/// Names of the input features `make_windows` would use.
pub fn input_feature_names(frame: &TimeSeriesFrame, mode: InputMode, with_time: bool) -> Result<Vec<String>> {
    let is_time = |n: &str| n == HOUR_COLUMN || n == DAY_OF_WEEK_COLUMN;
    let mut names: Vec<String> = match mode {
        InputMode::Univariate => vec![frame.target.clone()],
        InputMode::Multivariate => frame
            .columns
            .iter()
            .filter(|c| !is_time(&c.name))
            .map(|c| c.name.clone())
            .collect(),
    };
    if with_time {
        for n in [HOUR_COLUMN, DAY_OF_WEEK_COLUMN] {
            if frame.column(n).is_none() {
                return Err(Error::Config(format!(
                    "time features requested but column `{n}` is missing; add them before windowing"
                )));
            }
            names.push(n.to_string());
        }
    }
    Ok(names)
}

/// Slides a window over the frame: sample `i` reads rows `[i, i+seq_len)` as
/// input and target rows `[i+seq_len, i+seq_len+horizon)`. Yields
/// `len − seq_len − horizon + 1` samples.
pub fn make_windows<T: Scalar>(
    frame: &TimeSeriesFrame,
    seq_len: usize,
    horizon: usize,
    mode: InputMode,
    with_time: bool,
) -> Result<WindowedDataset<T>> {
    if seq_len == 0 || horizon == 0 {
        return Err(Error::Config("sequence length and horizon must be at least 1".into()));
    }
    let needed = seq_len + horizon;
    if frame.len() < needed {
        return Err(Error::Config(format!(
            "insufficient rows: {} available, at least {needed} required for sequence length {seq_len} and horizon {horizon}",
            frame.len()
        )));
    }
    let names = input_feature_names(frame, mode, with_time)?;
    let features: Vec<&[f64]> = names
        .iter()
        .map(|n| frame.column(n).map(|c| c.values.as_slice()))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Schema("feature column vanished".into()))?;
    let target = &frame.column(&frame.target).expect("validated at construction").values;

    let count = frame.len() - needed + 1;
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for i in 0..count {
        inputs.push(Tensor::from_fn(seq_len, names.len(), |s, f| T::of(features[f][i + s]))?);
        targets.push(Tensor::from_fn(horizon, 1, |h, _| T::of(target[i + seq_len + h]))?);
    }
    let mut ds = WindowedDataset::from_samples(inputs, targets)?;
    ds.provenance = Some(Provenance {
        seq_len,
        horizon,
        feature_names: names,
        target: frame.target.clone(),
        split: String::new(),
    });
    Ok(ds)
}

/// Contiguous `(train, val, test)` row ranges for fractions of `len`.
pub fn split_ranges(len: usize, fractions: (f64, f64, f64)) -> Result<[std::ops::Range<usize>; 3]> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::Validation(format!("split fractions must be positive, got {fractions:?}")));
    }
    if a + b + c > 1.0 + 1e-12 {
        return Err(Error::Validation(format!("split fractions sum to {} > 1", a + b + c)));
    }
    let count = |f: f64| (len as f64 * f + 1e-9).floor() as usize;
    let n_train = count(a);
    let n_val = count(b);
    let n_test = count(c).min(len - n_train - n_val);
    Ok([
        0..n_train,
        n_train..n_train + n_val,
        n_train + n_val..n_train + n_val + n_test,
    ])
}

/// Splits into contiguous chronological `(train, val, test)` frames.
pub fn chrono_split(frame: &TimeSeriesFrame, fractions: (f64, f64, f64)) -> Result<[TimeSeriesFrame; 3]> {
    let [r0, r1, r2] = split_ranges(frame.len(), fractions)?;
    Ok([frame.slice(r0)?, frame.slice(r1)?, frame.slice(r2)?])
}

/// Everything needed to go from a raw frame to windowed splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataOptions {
    pub seq_len: usize,
    pub horizon: usize,
    pub mode: InputMode,
    pub time_features: bool,
    pub scaler: ScalerKind,
    pub fractions: (f64, f64, f64),
}

impl DataOptions {
    pub fn new(seq_len: usize, horizon: usize) -> Self {
        DataOptions {
            seq_len,
            horizon,
            mode: InputMode::Univariate,
            time_features: false,
            scaler: ScalerKind::Standard,
            fractions: (0.7, 0.2, 0.1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits<T> {
    pub train: WindowedDataset<T>,
    pub val: WindowedDataset<T>,
    pub test: WindowedDataset<T>,
    pub scaler: ScalerState,
}

/// Adds time features if requested, splits chronologically, fits the scaler
/// on the training segment only and windows each segment separately so no
/// window straddles a boundary.
pub fn prepare_splits<T: Scalar>(frame: &TimeSeriesFrame, opts: &DataOptions) -> Result<Splits<T>> {
    let frame = if opts.time_features {
        add_time_features(frame)?
    } else {
        frame.clone()
    };
    let [r0, r1, r2] = split_ranges(frame.len(), opts.fractions)?;
    for (name, r) in [("train", &r0), ("validation", &r1), ("test", &r2)] {
        if r.len() < opts.seq_len + opts.horizon {
            return Err(Error::Config(format!(
                "insufficient rows: {name} segment has {} rows, at least {} required for sequence length {} and horizon {}",
                r.len(),
                opts.seq_len + opts.horizon,
                opts.seq_len,
                opts.horizon
            )));
        }
    }
    let scaler = fit_scaler(&frame, opts.scaler, r0.clone())?;
    let scaled = scaler.transform(&frame)?;
    let window = |r: std::ops::Range<usize>, split: &str| -> Result<WindowedDataset<T>> {
        let mut ds = make_windows(&scaled.slice(r)?, opts.seq_len, opts.horizon, opts.mode, opts.time_features)?;
        ds.scaler = Some(scaler.clone());
        if let Some(p) = ds.provenance.as_mut() {
            p.split = split.to_string();
        }
        Ok(ds)
    };
    Ok(Splits {
        train: window(r0, "train")?,
        val: window(r1, "val")?,
        test: window(r2, "test")?,
        scaler: scaler.clone(),
    })
}
