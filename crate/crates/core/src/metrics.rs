//! R² and mean squared error.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    R2,
    Mse,
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r2" => Ok(Metric::R2),
            "mse" => Ok(Metric::Mse),
            other => Err(Error::Config(format!("unknown metric `{other}` (expected r2 or mse)"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::R2 => "r2",
            Metric::Mse => "mse",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: Metric,
    pub value: f64,
    pub n: usize,
}

fn check_lengths<T>(y: &[T], yhat: &[T], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::shape("metric", format!("{} targets", y.len()), format!("{} predictions", yhat.len())));
    }
    if y.len() < min {
        return Err(Error::shape("metric", format!("{} values", y.len()), format!("at least {min}")));
    }
    Ok(())
}

pub fn mse<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T> {
    check_lengths(y, yhat, 1)?;
    let sum = y.iter().zip(yhat).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(sum / T::of(y.len() as f64))
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`. May be negative; undefined for constant `y`.
pub fn r2_score<T: Scalar>(y: &[T], yhat: &[T]) -> Result<T> {
    check_lengths(y, yhat, 2)?;
    let n = T::of(y.len() as f64);
    let mean = y.iter().copied().sum::<T>() / n;
    let total = y.iter().fold(T::zero(), |acc, &a| acc + (a - mean) * (a - mean));
    if total == T::zero() {
        return Err(Error::UndefinedVariance);
    }
    let residual = y.iter().zip(yhat).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
    Ok(T::one() - residual / total)
}

/// Population variance.
pub fn variance<T: Scalar>(y: &[T]) -> T {
    let n = T::of(y.len() as f64);
    let mean = y.iter().copied().sum::<T>() / n;
    y.iter().fold(T::zero(), |acc, &a| acc + (a - mean) * (a - mean)) / n
}

/// Computes `metric` over every entry of every sample, flattened.
pub fn evaluate<T: Scalar>(metric: Metric, targets: &[Tensor<T>], predictions: &[Tensor<T>]) -> Result<MetricResult> {
    if targets.len() != predictions.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} targets", targets.len()),
            format!("{} predictions", predictions.len()),
        ));
    }
    let mut y = Vec::new();
    let mut yhat = Vec::new();
    for (t, p) in targets.iter().zip(predictions) {
        if t.shape() != p.shape() {
            return Err(Error::shape("evaluate", t.shape_str(), p.shape_str()));
        }
        y.extend_from_slice(t.as_slice());
        yhat.extend_from_slice(p.as_slice());
    }
    let value = match metric {
        Metric::R2 => r2_score(&y, &yhat)?,
        Metric::Mse => mse(&y, &yhat)?,
    };
    Ok(MetricResult {
        name: metric,
        value: value.as_f64(),
        n: y.len(),
    })
}

/// `metric` separately for each forecast step (row of the target windows).
pub fn evaluate_per_horizon<T: Scalar>(
    metric: Metric,
    targets: &[Tensor<T>],
    predictions: &[Tensor<T>],
) -> Result<Vec<MetricResult>> {
    let Some(first) = targets.first() else {
        return Err(Error::shape("evaluate_per_horizon", "0 targets", "at least 1"));
    };
    (0..first.rows())
        .map(|h| {
            let pick = |set: &[Tensor<T>]| -> Result<Vec<Tensor<T>>> {
                set.iter()
                    .map(|t| {
                        if h >= t.rows() {
                            return Err(Error::shape("evaluate_per_horizon", first.shape_str(), t.shape_str()));
                        }
                        Tensor::new(1, t.cols(), t.row(h).to_vec())
                    })
                    .collect()
            };
            evaluate(metric, &pick(targets)?, &pick(predictions)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
        assert_eq!(r2_score(&y, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(r2_score(&y, &[1.0, 2.0, 4.0]).unwrap(), 0.5);
        assert!(matches!(r2_score(&[4.0, 4.0], &[1.0, 2.0]), Err(Error::UndefinedVariance)));
        assert!(r2_score(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((mse(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap() - 2.0f64 / 3.0).abs() < 1e-15);
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn evaluate_flattens_and_splits_by_horizon() {
        let t = |v: &[f64]| Tensor::column(v).unwrap();
        let targets = [t(&[1.0, 2.0]), t(&[3.0, 4.0])];
        let preds = [t(&[1.0, 3.0]), t(&[3.0, 2.0])];
        let all = evaluate(Metric::Mse, &targets, &preds).unwrap();
        assert_eq!((all.value, all.n), (5.0 / 4.0, 4));
        let per = evaluate_per_horizon(Metric::Mse, &targets, &preds).unwrap();
        assert_eq!(per.iter().map(|m| m.value).collect::<Vec<_>>(), vec![0.0, 2.5]);
    }

    proptest! {
        #[test]
        fn r2_mse_identity(y in prop::collection::vec(-5.0f64..5.0, 2..40), noise in prop::collection::vec(-1.0f64..1.0, 40)) {
            prop_assume!(variance(&y) > 1e-6);
            let yhat: Vec<f64> = y.iter().zip(&noise).map(|(a, e)| a + e).collect();
            let r2 = r2_score(&y, &yhat).unwrap();
            let via_mse = 1.0 - mse(&y, &yhat).unwrap() / variance(&y);
            prop_assert!((r2 - via_mse).abs() < 1e-12);
        }

        #[test]
        fn mse_translation_invariant(y in prop::collection::vec(-5.0f64..5.0, 1..20), c in -3.0f64..3.0) {
            let yhat: Vec<f64> = y.iter().map(|v| v * 0.5).collect();
            let a = mse(&y, &yhat).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
            let yhs: Vec<f64> = yhat.iter().map(|v| v + c).collect();
            prop_assert!((a - mse(&ys, &yhs).unwrap()).abs() < 1e-12 * a.max(1.0));
        }

        #[test]
        fn r2_affine_invariant(y in prop::collection::vec(-5.0f64..5.0, 3..20), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
            prop_assume!(variance(&y) > 1e-3);
            let yhat: Vec<f64> = y.iter().map(|v| 0.8 * v + 0.1).collect();
            let map = |v: &f64| scale * v + shift;
            let a = r2_score(&y, &yhat).unwrap();
            let b = r2_score(&y.iter().map(map).collect::<Vec<_>>(), &yhat.iter().map(map).collect::<Vec<_>>()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
