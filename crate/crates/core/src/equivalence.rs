//! Collapsing a TLN into the single affine map it computes.
//!
//! Every stage of the network is affine, so the whole network is
//! `Y = Σ_{i,j} W[i, j] · X[i, j] + b`. The bias is the response to the zero
//! input, and each `W[i, j]` (an `S' × F'` block) is the response to the unit
//! input `e_ij` minus the bias: `S·F + 1` forward passes in total.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::Tln;
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

pub const EQUIVALENT_FILE_VERSION: u32 = 1;

/// Weights indexed `(input position, input feature, output position,
/// output feature)` plus an `S' × F'` bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EquivalentFile<T>", into = "EquivalentFile<T>")]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct LinearEquivalent<T: Scalar> {
    shapes: (usize, usize, usize, usize),
    weights: Vec<T>,
    bias: Tensor<T>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct EquivalentFile<T: Scalar> {
    version: u32,
    kind: String,
    /// `[S, F, S', F']`.
    shapes: [usize; 4],
    weights: Vec<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> From<LinearEquivalent<T>> for EquivalentFile<T> {
    fn from(eq: LinearEquivalent<T>) -> Self {
        let (s, f, so, fo) = eq.shapes;
        EquivalentFile {
            version: EQUIVALENT_FILE_VERSION,
            kind: "equivalent_linear".into(),
            shapes: [s, f, so, fo],
            weights: eq.weights,
            bias: eq.bias,
        }
    }
}

impl<T: Scalar> TryFrom<EquivalentFile<T>> for LinearEquivalent<T> {
    type Error = Error;

    fn try_from(file: EquivalentFile<T>) -> Result<Self> {
        if file.version != EQUIVALENT_FILE_VERSION || file.kind != "equivalent_linear" {
            return Err(Error::Validation(format!(
                "expected equivalent_linear version {EQUIVALENT_FILE_VERSION}, found {} version {}",
                file.kind, file.version
            )));
        }
        let [s, f, so, fo] = file.shapes;
        LinearEquivalent::new((s, f, so, fo), file.weights, file.bias)
    }
}

impl<T: Scalar> LinearEquivalent<T> {
    pub fn new(shapes: (usize, usize, usize, usize), weights: Vec<T>, bias: Tensor<T>) -> Result<Self> {
        let (s, f, so, fo) = shapes;
        if [s, f, so, fo].contains(&0) {
            return Err(Error::Validation(format!("equivalent map shapes {shapes:?} must be positive")));
        }
        if weights.len() != s * f * so * fo {
            return Err(Error::Validation(format!(
                "equivalent map {shapes:?} needs {} weights, found {}",
                s * f * so * fo,
                weights.len()
            )));
        }
        if bias.shape() != (so, fo) {
            return Err(Error::Validation(format!(
                "equivalent map bias is {}, expected {so}x{fo}",
                bias.shape_str()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("equivalent map weights".into()));
        }
        Ok(LinearEquivalent { shapes, weights, bias })
    }

    /// `(S, F, S', F')`.
    pub fn shapes(&self) -> (usize, usize, usize, usize) {
        self.shapes
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn weight(&self, i: usize, j: usize, out_pos: usize, out_feat: usize) -> T {
        let (_, f, so, fo) = self.shapes;
        self.weights[((i * f + j) * so + out_pos) * fo + out_feat]
    }

    /// The `S' × F'` response block of input entry `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> Result<Tensor<T>> {
        let (s, f, so, fo) = self.shapes;
        if i >= s || j >= f {
            return Err(Error::Range(format!("input entry ({i}, {j}) outside {s}x{f}")));
        }
        let start = (i * f + j) * so * fo;
        Tensor::new(so, fo, self.weights[start..start + so * fo].to_vec())
    }

    /// The `S × F` table of weights feeding one output entry.
    pub fn slice(&self, out_pos: usize, out_feat: usize) -> Result<Tensor<T>> {
        let (s, f, so, fo) = self.shapes;
        if out_pos >= so || out_feat >= fo {
            return Err(Error::Range(format!(
                "output entry ({out_pos}, {out_feat}) outside {so}x{fo}"
            )));
        }
        Tensor::from_fn(s, f, |i, j| self.weight(i, j, out_pos, out_feat))
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// `Σ_{i,j} W[i, j] · x[i, j] + b`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (s, f, so, fo) = self.shapes;
        if x.shape() != (s, f) {
            return Err(Error::shape("linear_predict", format!("map input {s}x{f}"), format!("tensor {}", x.shape_str())));
        }
        let mut out = self.bias.as_slice().to_vec();
        for (idx, &xv) in x.as_slice().iter().enumerate() {
            let block = &self.weights[idx * so * fo..(idx + 1) * so * fo];
            for (o, &w) in out.iter_mut().zip(block) {
                *o = *o + w * xv;
            }
        }
        Tensor::new(so, fo, out)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(Error::from_json)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from_json)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Probes `model` with the zero input and every unit input.
pub fn extract_equivalent<T: Scalar>(model: &Tln<T>) -> Result<LinearEquivalent<T>> {
    let (s, f) = model.input_shape();
    let (so, fo) = model.output_shape();
    let bias = model.forward(&Tensor::zeros(s, f)?)?;
    let mut weights = Vec::with_capacity(s * f * so * fo);
    for idx in 0..s * f {
        let mut probe = vec![T::zero(); s * f];
        probe[idx] = T::one();
        let response = model.forward(&Tensor::new(s, f, probe)?)?;
        weights.extend(response.sub(&bias)?.into_vec());
    }
    LinearEquivalent::new((s, f, so, fo), weights, bias)
}

/// Largest `|model(x) − equivalent(x)|` over `trials` inputs drawn uniformly
/// from `[−1, 1]`. Reports; the caller decides what is acceptable.
pub fn verify_equivalence<T: Scalar>(model: &Tln<T>, eq: &LinearEquivalent<T>, trials: usize, seed: u64) -> Result<T> {
    if trials == 0 {
        return Err(Error::Config("verify_equivalence needs at least one trial".into()));
    }
    let (s, f) = model.input_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for _ in 0..trials {
        let x = Tensor::from_fn(s, f, |_, _| T::of(rng.gen_range(-1.0..=1.0)))?;
        let deviation = model.forward(&x)?.max_abs_diff(&eq.predict(&x)?)?;
        worst = worst.max(deviation);
    }
    Ok(worst)
}

/// Writes an `S × F` weight table as CSV: a header of `lag` followed by the
/// feature names, then one row per input position (oldest first) whose first
/// cell is the lag `S − 1 − i` behind the most recent input.
pub fn write_weight_table<T: Scalar>(table: &Tensor<T>, feature_names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if feature_names.len() != table.cols() {
        return Err(Error::shape(
            "weight table",
            format!("{} feature columns", table.cols()),
            format!("{} names", feature_names.len()),
        ));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["lag".to_string()];
    header.extend(feature_names.iter().cloned());
    w.write_record(&header)?;
    for i in 0..table.rows() {
        let mut record = vec![(table.rows() - 1 - i).to_string()];
        record.extend(table.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_weight_table`], returning the feature
/// names and the `S × F` weights.
pub fn read_weight_table(path: impl AsRef<Path>) -> Result<(Vec<String>, Tensor<f64>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let names: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| Error::Data(format!("weight table value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((names, Tensor::from_rows(&rows)?))
}

/// Feature names `f0, f1, …` for tables without a data source.
pub fn default_feature_names(count: usize) -> Vec<String> {
    (0..count).map(|j| format!("f{j}")).collect()
}

/// Writes the weight table feeding output `(out_pos, out_feat)`.
pub fn export_weight_table<T: Scalar>(
    eq: &LinearEquivalent<T>,
    out_pos: usize,
    out_feat: usize,
    feature_names: &[String],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_weight_table(&eq.slice(out_pos, out_feat)?, feature_names, path)
}
