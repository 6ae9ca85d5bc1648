//! Linear regression baselines on flattened windows.
//!
//! An `S × F` window becomes a length `S·F` row (position-major) and the
//! `S' × F'` target a length `S'·F'` row. Every fitter centers the design and
//! targets, solves for the weights, and recovers an unpenalized intercept
//! `ȳ − x̄ᵀw`. Output columns are independent problems.
//!
//! Penalties:
//! - ridge: `‖y − Xw − b‖² + α‖w‖²`
//! - lasso / elastic net: `(1/2N)‖y − Xw − b‖² + α(ρ‖w‖₁ + (1−ρ)/2·‖w‖²)`,
//!   solved by cyclic coordinate descent.
//!
//! Elastic net with `ρ = 0` and penalty `α` is therefore ridge with `α·N`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::equivalence::LinearEquivalent;
use crate::linalg::lstsq;
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

pub const FLAT_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularization {
    None,
    Ridge { alpha: f64 },
    Lasso { alpha: f64 },
    ElasticNet { alpha: f64, l1_ratio: f64 },
}

impl Regularization {
    pub fn name(&self) -> &'static str {
        match self {
            Regularization::None => "ols",
            Regularization::Ridge { .. } => "ridge",
            Regularization::Lasso { .. } => "lasso",
            Regularization::ElasticNet { .. } => "elasticnet",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// OLS: fail on a rank-deficient design instead of returning the
    /// minimum-norm solution.
    pub strict: bool,
    /// Coordinate descent: work on columns scaled to unit variance and map
    /// the coefficients back afterwards.
    pub standardize: bool,
    /// Coordinate descent: stop when no coefficient moves more than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            strict: false,
            standardize: false,
            tol: 1e-6,
            max_iter: 10_000,
        }
    }
}

/// Position-major flattening, `(i, j) → i·F + j`.
pub fn flatten_window<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    x.as_slice().to_vec()
}

/// Inverse of [`flatten_window`].
pub fn unflatten_window<T: Scalar>(v: &[T], seq_len: usize, features: usize) -> Result<Tensor<T>> {
    if v.len() != seq_len * features {
        return Err(Error::shape("unflatten", format!("{} values", v.len()), format!("{seq_len}x{features}")));
    }
    Tensor::new(seq_len, features, v.to_vec())
}

/// `S·F·S'·F' + S'·F'`.
pub fn flat_param_count(input: (usize, usize), output: (usize, usize)) -> usize {
    input.0 * input.1 * output.0 * output.1 + output.0 * output.1
}

/// `N × (S·F)` design and `N × (S'·F')` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatRegression<T> {
    pub design: Tensor<T>,
    pub targets: Tensor<T>,
    pub input_shape: (usize, usize),
    pub output_shape: (usize, usize),
    pub options: FitOptions,
}

impl<T: Scalar> FlatRegression<T> {
    /// Shapes default to `(P, 1)` and `(M, 1)`.
    pub fn new(design: Tensor<T>, targets: Tensor<T>) -> Result<Self> {
        if design.rows() != targets.rows() {
            return Err(Error::shape("flat regression", design.shape_str(), targets.shape_str()));
        }
        Ok(FlatRegression {
            input_shape: (design.cols(), 1),
            output_shape: (targets.cols(), 1),
            design,
            targets,
            options: FitOptions::default(),
        })
    }

    pub fn from_dataset(data: &WindowedDataset<T>) -> Result<Self> {
        let (Some(x0), Some(y0)) = (data.inputs.first(), data.targets.first()) else {
            return Err(Error::Config("flat regression needs at least one sample".into()));
        };
        let design = Tensor::new(data.len(), x0.len(), data.inputs.iter().flat_map(flatten_window).collect())?;
        let targets = Tensor::new(data.len(), y0.len(), data.targets.iter().flat_map(flatten_window).collect())?;
        let mut p = Self::new(design, targets)?;
        p.input_shape = x0.shape();
        p.output_shape = y0.shape();
        Ok(p)
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }

    fn check(&self) -> Result<()> {
        let (s, f) = self.input_shape;
        let (so, fo) = self.output_shape;
        if s * f != self.design.cols() || so * fo != self.targets.cols() {
            return Err(Error::shape(
                "flat regression",
                format!("shapes {s}x{f} -> {so}x{fo}"),
                format!("design {} targets {}", self.design.shape_str(), self.targets.shape_str()),
            ));
        }
        if self.design.rows() != self.targets.rows() {
            return Err(Error::shape("flat regression", self.design.shape_str(), self.targets.shape_str()));
        }
        Ok(())
    }

    fn centered(&self) -> Result<Centered<T>> {
        self.check()?;
        let x_mean = column_means(&self.design);
        let y_mean = column_means(&self.targets);
        let x = Tensor::from_fn(self.design.rows(), self.design.cols(), |i, j| self.design.get(i, j) - x_mean[j])?;
        let y = Tensor::from_fn(self.targets.rows(), self.targets.cols(), |i, j| self.targets.get(i, j) - y_mean[j])?;
        Ok(Centered { x, y, x_mean, y_mean })
    }
}

struct Centered<T> {
    x: Tensor<T>,
    y: Tensor<T>,
    x_mean: Vec<T>,
    y_mean: Vec<T>,
}

fn column_means<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let n = T::of(t.rows() as f64);
    (0..t.cols()).map(|j| (0..t.rows()).map(|i| t.get(i, j)).sum::<T>() / n).collect()
}

/// A fitted `x ↦ xW + b` on flattened windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct FlatLinear<T: Scalar> {
    /// `(S·F) × (S'·F')`.
    pub weights: Tensor<T>,
    pub intercept: Vec<T>,
    pub regularization: Regularization,
    pub input_shape: (usize, usize),
    pub output_shape: (usize, usize),
    /// False when coordinate descent hit `max_iter` on some output.
    pub converged: bool,
    /// Largest number of coordinate-descent sweeps over the outputs.
    pub iterations: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct FlatFile<T: Scalar> {
    version: u32,
    kind: String,
    model: FlatLinear<T>,
}

impl<T: Scalar> FlatLinear<T> {
    fn assemble(p: &FlatRegression<T>, c: &Centered<T>, weights: Tensor<T>, reg: Regularization) -> Result<Self> {
        let intercept = (0..weights.cols())
            .map(|o| c.y_mean[o] - (0..weights.rows()).fold(T::zero(), |s, j| s + c.x_mean[j] * weights.get(j, o)))
            .collect::<Vec<_>>();
        if weights.as_slice().iter().chain(&intercept).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} coefficients", reg.name())));
        }
        Ok(FlatLinear {
            weights,
            intercept,
            regularization: reg,
            input_shape: p.input_shape,
            output_shape: p.output_shape,
            converged: true,
            iterations: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.intercept.len()
    }

    /// `xW + b` for one flattened window.
    pub fn predict_flat(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.weights.rows() {
            return Err(Error::shape(
                "predict_flat",
                format!("{} inputs", x.len()),
                format!("{} weight rows", self.weights.rows()),
            ));
        }
        Ok((0..self.weights.cols())
            .map(|o| x.iter().enumerate().fold(self.intercept[o], |s, (j, &v)| s + v * self.weights.get(j, o)))
            .collect())
    }

    /// Prediction for an `S × F` window, shaped `S' × F'`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape() != self.input_shape {
            return Err(Error::shape("predict", x.shape_str(), format!("{}x{}", self.input_shape.0, self.input_shape.1)));
        }
        let (so, fo) = self.output_shape;
        Tensor::new(so, fo, self.predict_flat(x.as_slice())?)
    }

    /// The same map in the layout used for TLN equivalents, so weight tables
    /// export identically.
    pub fn to_equivalent(&self) -> Result<LinearEquivalent<T>> {
        let (s, f) = self.input_shape;
        let (so, fo) = self.output_shape;
        LinearEquivalent::new(
            (s, f, so, fo),
            self.weights.as_slice().to_vec(),
            Tensor::new(so, fo, self.intercept.clone())?,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let file = FlatFile {
            version: FLAT_FILE_VERSION,
            kind: "flat_linear".into(),
            model: self.clone(),
        };
        serde_json::to_string(&file).map_err(Error::from_json)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: FlatFile<T> = serde_json::from_str(text).map_err(Error::from_json)?;
        if file.version != FLAT_FILE_VERSION || file.kind != "flat_linear" {
            return Err(Error::Validation(format!(
                "expected flat_linear version {FLAT_FILE_VERSION}, found {} version {}",
                file.kind, file.version
            )));
        }
        let m = file.model;
        let (s, f) = m.input_shape;
        let (so, fo) = m.output_shape;
        if m.weights.shape() != (s * f, so * fo) || m.intercept.len() != so * fo {
            return Err(Error::Validation(format!(
                "flat model weights {} / intercept {} do not fit {s}x{f} -> {so}x{fo}",
                m.weights.shape_str(),
                m.intercept.len()
            )));
        }
        if m.intercept.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("flat model intercept".into()));
        }
        Ok(m)
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

/// Least squares through pivoted QR; minimum-norm when rank-deficient unless
/// `options.strict`.
pub fn fit_ols<T: Scalar>(p: &FlatRegression<T>) -> Result<FlatLinear<T>> {
    let c = p.centered()?;
    let sol = lstsq(&c.x, &c.y)?;
    if p.options.strict && sol.rank < c.x.cols() {
        return Err(Error::Singular {
            rank: sol.rank,
            cols: c.x.cols(),
        });
    }
    FlatLinear::assemble(p, &c, sol.solution, Regularization::None)
}

/// Minimizes `‖y − Xw − b‖² + α‖w‖²` by least squares on the design
/// augmented with `√α·I`.
pub fn fit_ridge<T: Scalar>(p: &FlatRegression<T>, alpha: f64) -> Result<FlatLinear<T>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("ridge alpha must be finite and >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        let mut m = fit_ols(&FlatRegression {
            options: FitOptions {
                strict: false,
                ..p.options.clone()
            },
            ..p.clone()
        })?;
        m.regularization = Regularization::Ridge { alpha };
        return Ok(m);
    }
    let c = p.centered()?;
    let (n, cols) = c.x.shape();
    let root = T::of(alpha.sqrt());
    let x = Tensor::from_fn(n + cols, cols, |i, j| {
        if i < n {
            c.x.get(i, j)
        } else if i - n == j {
            root
        } else {
            T::zero()
        }
    })?;
    let y = Tensor::from_fn(n + cols, c.y.cols(), |i, j| if i < n { c.y.get(i, j) } else { T::zero() })?;
    let sol = lstsq(&x, &y)?;
    FlatLinear::assemble(p, &c, sol.solution, Regularization::Ridge { alpha })
}

pub fn fit_lasso<T: Scalar>(p: &FlatRegression<T>, alpha: f64) -> Result<FlatLinear<T>> {
    let mut m = coordinate_descent(p, alpha, 1.0)?;
    m.regularization = Regularization::Lasso { alpha };
    Ok(m)
}

pub fn fit_elasticnet<T: Scalar>(p: &FlatRegression<T>, alpha: f64, l1_ratio: f64) -> Result<FlatLinear<T>> {
    if !(0.0..=1.0).contains(&l1_ratio) {
        return Err(Error::Config(format!("l1_ratio must be in [0, 1], got {l1_ratio}")));
    }
    coordinate_descent(p, alpha, l1_ratio)
}

fn soft_threshold<T: Scalar>(rho: T, lambda: T) -> T {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        rho + lambda
    } else {
        T::zero()
    }
}

fn coordinate_descent<T: Scalar>(p: &FlatRegression<T>, alpha: f64, l1_ratio: f64) -> Result<FlatLinear<T>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be finite and > 0, got {alpha}")));
    }
    let opts = &p.options;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Config("coordinate descent needs tol > 0 and max_iter >= 1".into()));
    }
    let c = p.centered()?;
    let (n, cols) = c.x.shape();
    let nf = T::of(n as f64);

    // Column-major copy of the (optionally standardized) design.
    let mut scales = vec![T::one(); cols];
    let columns: Vec<Vec<T>> = (0..cols)
        .map(|j| {
            let col: Vec<T> = (0..n).map(|i| c.x.get(i, j)).collect();
            if opts.standardize {
                let sd = (col.iter().fold(T::zero(), |s, &v| s + v * v) / nf).sqrt();
                if sd > T::zero() {
                    scales[j] = sd;
                    return col.iter().map(|&v| v / sd).collect();
                }
            }
            col
        })
        .collect();
    let curvature: Vec<T> = columns.iter().map(|col| col.iter().fold(T::zero(), |s, &v| s + v * v) / nf).collect();
    let l1 = T::of(alpha * l1_ratio);
    let l2 = T::of(alpha * (1.0 - l1_ratio));
    let tol = T::of(opts.tol);

    let mut weights = vec![T::zero(); cols * c.y.cols()];
    let mut converged = true;
    let mut iterations = 0;
    for o in 0..c.y.cols() {
        let mut w = vec![T::zero(); cols];
        let mut residual: Vec<T> = (0..n).map(|i| c.y.get(i, o)).collect();
        let mut done = false;
        let mut sweeps = 0;
        while sweeps < opts.max_iter {
            sweeps += 1;
            let mut max_delta = T::zero();
            for j in 0..cols {
                let col = &columns[j];
                let old = w[j];
                let rho = col.iter().zip(&residual).fold(T::zero(), |s, (&x, &r)| s + x * r) / nf + curvature[j] * old;
                let denom = curvature[j] + l2;
                let new = if denom > T::zero() {
                    soft_threshold(rho, l1) / denom
                } else {
                    T::zero()
                };
                if new != old {
                    let delta = new - old;
                    for (r, &x) in residual.iter_mut().zip(col) {
                        *r = *r - x * delta;
                    }
                    w[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if !max_delta.is_finite() {
                return Err(Error::NonFinite(format!("coordinate descent diverged on output {o}")));
            }
            if max_delta < tol {
                done = true;
                break;
            }
        }
        if !done {
            log::warn!("coordinate descent did not converge on output {o} after {sweeps} sweeps");
            converged = false;
        }
        iterations = iterations.max(sweeps);
        for j in 0..cols {
            weights[j * c.y.cols() + o] = w[j] / scales[j];
        }
    }
    let mut m = FlatLinear::assemble(
        p,
        &c,
        Tensor::new(cols, c.y.cols(), weights)?,
        Regularization::ElasticNet { alpha, l1_ratio },
    )?;
    m.converged = converged;
    m.iterations = iterations;
    Ok(m)
}

/// Fits according to `reg`.
pub fn fit<T: Scalar>(p: &FlatRegression<T>, reg: Regularization) -> Result<FlatLinear<T>> {
    match reg {
        Regularization::None => fit_ols(p),
        Regularization::Ridge { alpha } => fit_ridge(p, alpha),
        Regularization::Lasso { alpha } => fit_lasso(p, alpha),
        Regularization::ElasticNet { alpha, l1_ratio } => fit_elasticnet(p, alpha, l1_ratio),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(rng: &mut ChaCha8Rng, n: usize, p: usize, m: usize) -> FlatRegression<f64> {
        let x = Tensor::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0)).unwrap();
        let w = Tensor::from_fn(p, m, |_, _| rng.gen_range(-2.0..2.0)).unwrap();
        let noise = Tensor::from_fn(n, m, |_, _| rng.gen_range(-0.1..0.1)).unwrap();
        let y = x.matmul(&w).unwrap().add(&noise).unwrap();
        FlatRegression::new(x, y).unwrap()
    }

    /// Gauss-Jordan elimination with partial pivoting.
    fn solve(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let n = a.rows();
        let mut m: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).iter().chain(b.row(i)).copied().collect()).collect();
        for c in 0..n {
            let p = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, p);
            let d = m[c][c];
            m[c].iter_mut().for_each(|v| *v /= d);
            let pivot = m[c].clone();
            for (r, row) in m.iter_mut().enumerate() {
                if r != c {
                    let f = row[c];
                    row.iter_mut().zip(&pivot).for_each(|(v, p)| *v -= f * p);
                }
            }
        }
        Tensor::from_fn(n, b.cols(), |i, j| m[i][n + j]).unwrap()
    }

    fn center(t: &Tensor<f64>) -> Tensor<f64> {
        let means = column_means(t);
        Tensor::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j) - means[j]).unwrap()
    }

    /// `(XcᵀXc + αI)⁻¹ Xcᵀ yc`.
    fn ridge_oracle(p: &FlatRegression<f64>, alpha: f64) -> Tensor<f64> {
        let xc = center(&p.design);
        let yc = center(&p.targets);
        let gram = xc.transpose().matmul(&xc).unwrap();
        let reg = Tensor::from_fn(gram.rows(), gram.cols(), |i, j| gram.get(i, j) + if i == j { alpha } else { 0.0 }).unwrap();
        solve(&reg, &xc.transpose().matmul(&yc).unwrap())
    }

    fn rel(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.max_abs_diff(b).unwrap() / b.max_abs().max(1e-300)
    }

    #[test]
    fn flatten_examples() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(flatten_window(&x), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flatten_window(&Tensor::from_rows(&[[7.0]]).unwrap()), vec![7.0]);
        assert_eq!(unflatten_window(&flatten_window(&x), 2, 2).unwrap(), x);
        assert!(unflatten_window(&[1.0, 2.0, 3.0], 2, 2).is_err());
    }

    #[test]
    fn exact_line() {
        let p = FlatRegression::new(Tensor::column(&[1.0, 2.0]).unwrap(), Tensor::column(&[2.0, 4.0]).unwrap()).unwrap();
        let m = fit_ols(&p).unwrap();
        assert!((m.weights.get(0, 0) - 2.0f64).abs() < 1e-14);
        assert!(f64::abs(m.intercept[0]) < 1e-14);
    }

    #[test]
    fn param_counts() {
        assert_eq!(flat_param_count((3, 1), (1, 1)), 4);
        assert_eq!(flat_param_count((50, 1), (6, 1)), 306);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = problem(&mut rng, 20, 3, 1);
        p.input_shape = (3, 1);
        assert_eq!(fit_ols(&p).unwrap().param_count(), 4);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = problem(&mut rng, 40, 6, 2);
            let m = fit_ols(&p).unwrap();
            let xc = center(&p.design);
            let oracle = solve(&xc.transpose().matmul(&xc).unwrap(), &xc.transpose().matmul(&center(&p.targets)).unwrap());
            assert!(rel(&m.weights, &oracle) < 1e-8);
        }
    }

    #[test]
    fn ols_residuals_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = problem(&mut rng, 50, 5, 1);
        let m = fit_ols(&p).unwrap();
        let r: Vec<f64> = (0..50).map(|i| p.targets.get(i, 0) - m.predict_flat(p.design.row(i)).unwrap()[0]).collect();
        let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..5 {
            let col: Vec<f64> = (0..50).map(|i| p.design.get(i, j)).collect();
            let cn = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-8 * cn * rn.max(1e-12));
        }
    }

    #[test]
    fn strict_mode_reports_rank() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]).unwrap();
        let y = Tensor::column(&[1.0, 2.0, 3.0]).unwrap();
        let p = FlatRegression::new(x, y).unwrap();
        assert!(fit_ols(&p).is_ok());
        let strict = p.with_options(FitOptions {
            strict: true,
            ..FitOptions::default()
        });
        assert!(matches!(fit_ols(&strict), Err(Error::Singular { rank: 1, cols: 2 })));
    }

    #[test]
    fn ridge_closed_form_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = problem(&mut rng, 20, 5, 1);
        assert!(rel(&fit_ridge(&p, 1.0).unwrap().weights, &ridge_oracle(&p, 1.0)) < 1e-8);
        let ols = fit_ols(&p).unwrap();
        assert!(rel(&fit_ridge(&p, 0.0).unwrap().weights, &ols.weights) < 1e-8);
        let huge = fit_ridge(&p, 1e12).unwrap();
        assert!(huge.weights.max_abs() < 1e-6);
        let mean = column_means(&p.targets)[0];
        assert!((huge.intercept[0] - mean).abs() < 1e-5);
        assert!(fit_ridge(&p, -1.0).is_err());
    }

    #[test]
    fn ridge_norm_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = problem(&mut rng, 30, 6, 1);
        let norms: Vec<f64> = [0.0, 0.1, 1.0, 10.0, 100.0]
            .iter()
            .map(|&a| fit_ridge(&p, a).unwrap().weights.as_slice().iter().map(|v| v * v).sum())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    /// Evaluated exactly as the solver does: centered column, dot product in
    /// index order, divided by N.
    fn lasso_zero_bound(p: &FlatRegression<f64>, o: usize) -> f64 {
        let xc = center(&p.design);
        let yc = center(&p.targets);
        let n = p.design.rows() as f64;
        (0..xc.cols())
            .map(|j| (0..xc.rows()).fold(0.0, |s, i| s + xc.get(i, j) * yc.get(i, o)).abs() / n)
            .fold(0.0, f64::max)
    }

    #[test]
    fn lasso_threshold_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let p = problem(&mut rng, 25, 4, 1);
            let bound = lasso_zero_bound(&p, 0);
            let m = fit_lasso(&p, bound).unwrap();
            assert!(m.weights.as_slice().iter().all(|&w| w == 0.0));
            let below = fit_lasso(&p, bound * 0.9).unwrap();
            assert!(below.weights.as_slice().iter().any(|&w| w != 0.0));
        }
    }

    #[test]
    fn lasso_single_feature_closed_form() {
        let x = [1.0, -2.0, 0.5, 3.0, -1.5];
        let y = [2.0, -3.0, 1.0, 7.0, -2.0];
        let p = FlatRegression::new(Tensor::column(&x).unwrap(), Tensor::column(&y).unwrap()).unwrap();
        let xc = center(&p.design);
        let yc = center(&p.targets);
        let n = 5.0;
        let rho: f64 = (0..5).map(|i| xc.get(i, 0) * yc.get(i, 0)).sum::<f64>() / n;
        let xx: f64 = (0..5).map(|i| xc.get(i, 0).powi(2)).sum::<f64>() / n;
        for alpha in [0.1, 0.5, 2.0, 100.0] {
            let expect = rho.signum() * (rho.abs() - alpha).max(0.0) / xx;
            let got = fit_lasso(&p, alpha).unwrap().weights.get(0, 0);
            assert!((got - expect).abs() < 1e-12, "alpha {alpha}: {got} vs {expect}");
        }
    }

    #[test]
    fn lasso_small_alpha_approaches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = problem(&mut rng, 60, 4, 1).with_options(FitOptions {
            tol: 1e-12,
            ..FitOptions::default()
        });
        let lasso = fit_lasso(&p, 1e-6).unwrap();
        assert!(rel(&lasso.weights, &fit_ols(&p).unwrap().weights) < 1e-3);
    }

    #[test]
    fn lasso_sparsity_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = problem(&mut rng, 40, 8, 1);
        let zeros: Vec<usize> = [0.001, 0.01, 0.05, 0.1, 0.3, 1.0, 3.0]
            .iter()
            .map(|&a| fit_lasso(&p, a).unwrap().weights.as_slice().iter().filter(|&&w| w == 0.0).count())
            .collect();
        assert!(zeros.windows(2).all(|w| w[1] >= w[0]), "{zeros:?}");
    }

    #[test]
    fn elasticnet_degenerate_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = problem(&mut rng, 30, 4, 2).with_options(FitOptions {
            tol: 1e-13,
            ..FitOptions::default()
        });
        let lasso = fit_lasso(&p, 0.05).unwrap();
        let en1 = fit_elasticnet(&p, 0.05, 1.0).unwrap();
        assert!(lasso.weights.max_abs_diff(&en1.weights).unwrap() < 1e-8);
        let en0 = fit_elasticnet(&p, 0.05, 0.0).unwrap();
        let ridge = fit_ridge(&p, 0.05 * 30.0).unwrap();
        assert!(en0.weights.max_abs_diff(&ridge.weights).unwrap() < 1e-6);
        assert!(fit_elasticnet(&p, 0.05, 1.5).is_err());
        assert!(fit_elasticnet(&p, 0.0, 0.5).is_err());
    }

    /// Independent solver: FISTA (accelerated proximal gradient) on the same
    /// objective, iterated far past convergence.
    fn fista(p: &FlatRegression<f64>, alpha: f64, l1_ratio: f64) -> Vec<f64> {
        let xc = center(&p.design);
        let yc = center(&p.targets);
        let (n, d) = xc.shape();
        let nf = n as f64;
        let gram = xc.transpose().matmul(&xc).unwrap().scale(1.0 / nf).unwrap();
        let xty: Vec<f64> = (0..d).map(|j| (0..n).map(|i| xc.get(i, j) * yc.get(i, 0)).sum::<f64>() / nf).collect();
        // Lipschitz bound: Frobenius norm of the Gram matrix plus the ridge part.
        let lip = gram.dot(&gram).unwrap().sqrt() + alpha * (1.0 - l1_ratio);
        let step = 1.0 / lip;
        let mut w = vec![0.0; d];
        let mut z = w.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let grad: Vec<f64> = (0..d)
                .map(|j| (0..d).map(|k| gram.get(j, k) * z[k]).sum::<f64>() - xty[j] + alpha * (1.0 - l1_ratio) * z[j])
                .collect();
            let next: Vec<f64> = (0..d)
                .map(|j| {
                    let v = z[j] - step * grad[j];
                    v.signum() * (v.abs() - step * alpha * l1_ratio).max(0.0)
                })
                .collect();
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            z = (0..d).map(|j| next[j] + (t - 1.0) / t_next * (next[j] - w[j])).collect();
            w = next;
            t = t_next;
        }
        w
    }

    #[test]
    fn elasticnet_matches_proximal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = problem(&mut rng, 10, 3, 1).with_options(FitOptions {
            tol: 1e-15,
            max_iter: 100_000,
            ..FitOptions::default()
        });
        let m = fit_elasticnet(&p, 0.1, 0.5).unwrap();
        let oracle = fista(&p, 0.1, 0.5);
        for j in 0..3 {
            assert!((m.weights.get(j, 0) - oracle[j]).abs() < 1e-10, "{} vs {}", m.weights.get(j, 0), oracle[j]);
        }
    }

    #[test]
    fn standardized_lasso_is_deterministic_and_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = problem(&mut rng, 30, 5, 1).with_options(FitOptions {
            standardize: true,
            ..FitOptions::default()
        });
        let a = fit_lasso(&p, 0.01).unwrap();
        assert_eq!(a, fit_lasso(&p, 0.01).unwrap());
        assert!(a.converged);
    }

    #[test]
    fn non_convergence_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = problem(&mut rng, 30, 5, 1).with_options(FitOptions {
            tol: 1e-300,
            max_iter: 2,
            ..FitOptions::default()
        });
        let m = fit_lasso(&p, 1e-4).unwrap();
        assert!(!m.converged);
        assert_eq!(m.iterations, 2);
    }

    #[test]
    fn predict_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut p = problem(&mut rng, 20, 4, 2);
        p.input_shape = (2, 2);
        p.output_shape = (2, 1);
        let m = fit_ols(&p).unwrap();
        let zeros = m.predict_flat(&[0.0; 4]).unwrap();
        assert_eq!(zeros, m.intercept);
        let x = [0.5, -1.0, 2.0, 0.25];
        let oracle: Vec<f64> = (0..2).map(|o| m.intercept[o] + (0..4).map(|j| x[j] * m.weights.get(j, o)).sum::<f64>()).collect();
        let got = m.predict_flat(&x).unwrap();
        assert!(got.iter().zip(&oracle).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(matches!(m.predict_flat(&[1.0; 3]), Err(Error::Shape { .. })));

        let eq = m.to_equivalent().unwrap();
        let window = unflatten_window(&x, 2, 2).unwrap();
        assert!(eq.predict(&window).unwrap().max_abs_diff(&m.predict(&window).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = fit_lasso(&problem(&mut rng, 20, 3, 1), 0.01).unwrap();
        assert_eq!(FlatLinear::<f64>::from_json(&m.to_json().unwrap()).unwrap(), m);
        assert!(FlatLinear::<f64>::from_json("{\"version\":2}").is_err());
    }

    #[test]
    fn fitters_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = problem(&mut rng, 20, 3, 2);
        for reg in [
            Regularization::None,
            Regularization::Ridge { alpha: 1.0 },
            Regularization::Lasso { alpha: 0.01 },
            Regularization::ElasticNet { alpha: 0.01, l1_ratio: 0.5 },
        ] {
            assert_eq!(fit(&p, reg).unwrap(), fit(&p, reg).unwrap());
        }
    }
}
