//! Dense row-major 2-D arrays.
//!
//! A [`Tensor`] holds a `(rows × cols)` block in position-major order: the
//! column (feature) index is the fast axis. Every constructor rejects empty
//! shapes and non-finite entries, so a value that exists is always usable.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Which extent a broadcast kernel runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// One kernel value per row, shared across the row's columns.
    Rows,
    /// One kernel value per column, shared across rows.
    Cols,
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor<T>", bound(deserialize = "T: Scalar"))]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

#[derive(Deserialize)]
struct RawTensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> TryFrom<RawTensor<T>> for Tensor<T> {
    type Error = Error;

    fn try_from(raw: RawTensor<T>) -> Result<Self> {
        Tensor::new(raw.rows, raw.cols, raw.data)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("tensor", format!("{rows}x{cols}"), "at least 1x1"));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "tensor",
                format!("{rows}x{cols}"),
                format!("{} values", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "tensor entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_fn(n, n, |i, j| if i == j { T::one() } else { T::zero() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// Builds from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "from_rows",
                    format!("row 0 has {cols} values"),
                    format!("row {i} has {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// A single-column tensor.
    pub fn column(values: &[T]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Position-major view of all entries.
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Standard matrix product.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape_str(), other.shape_str()));
        }
        let mut out = vec![T::zero(); self.rows * other.cols];
        for i in 0..self.rows {
            let out_row = &mut out[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o = *o + a * b;
                }
            }
        }
        Tensor::new(self.rows, other.cols, out)
    }

    /// Multiplies each entry by the kernel value of its row or column.
    pub fn hadamard_broadcast(&self, kernel: &[T], axis: Axis) -> Result<Tensor<T>> {
        let extent = match axis {
            Axis::Rows => self.rows,
            Axis::Cols => self.cols,
        };
        if kernel.len() != extent {
            return Err(Error::shape(
                "hadamard_broadcast",
                format!("{} ({axis:?} extent {extent})", self.shape_str()),
                format!("kernel of length {}", kernel.len()),
            ));
        }
        let cols = self.cols;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(idx, &v)| match axis {
                Axis::Rows => v * kernel[idx / cols],
                Axis::Cols => v * kernel[idx % cols],
            })
            .collect();
        Tensor::new(self.rows, self.cols, data)
    }

    pub fn transpose(&self) -> Tensor<T> {
        let mut data = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                data.push(self.get(i, j));
            }
        }
        Tensor {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|&v| v * c).collect())
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Tensor<T>) -> Result<T> {
        self.check_same("dot", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.check_same("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    fn zip_with(&self, op: &'static str, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check_same(op, other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::new(self.rows, self.cols, data)
    }

    fn check_same(&self, op: &'static str, other: &Tensor<T>) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape_str(), other.shape_str()));
        }
        Ok(())
    }

    pub(crate) fn shape_str(&self) -> String {
        format!("{}x{}", self.rows, self.cols)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for row in self.data.chunks(self.cols.max(1)) {
            list.entry(&row);
        }
        list.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let id = Tensor::<f64>::identity(2).unwrap();
        assert_eq!(id.matmul(&t(&[&[3.0], &[4.0]])).unwrap(), t(&[&[3.0], &[4.0]]));
        assert_eq!(
            t(&[&[1.0, 2.0], &[3.0, 4.0]]).matmul(&t(&[&[0.0], &[1.0]])).unwrap(),
            t(&[&[2.0], &[4.0]])
        );
        assert_eq!(t(&[&[2.0]]).matmul(&t(&[&[5.0]])).unwrap(), t(&[&[10.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = t(&[&[1.0, 2.0]]).matmul(&t(&[&[1.0, 2.0]])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn hadamard_examples() {
        let x = t(&[&[3.0], &[4.0]]);
        assert_eq!(x.hadamard_broadcast(&[1.0, 1.0], Axis::Rows).unwrap(), x);
        assert_eq!(
            t(&[&[1.0], &[1.0]]).hadamard_broadcast(&[2.0, 3.0], Axis::Rows).unwrap(),
            t(&[&[2.0], &[3.0]])
        );
        assert_eq!(
            x.hadamard_broadcast(&[0.0], Axis::Cols).unwrap(),
            t(&[&[0.0], &[0.0]])
        );
        assert!(matches!(
            x.hadamard_broadcast(&[1.0], Axis::Rows),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn transpose_examples() {
        assert_eq!(
            t(&[&[1.0, 2.0], &[3.0, 4.0]]).transpose(),
            t(&[&[1.0, 3.0], &[2.0, 4.0]])
        );
        assert_eq!(t(&[&[1.0, 2.0, 3.0]]).transpose().shape(), (3, 1));
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(matches!(Tensor::<f64>::new(0, 1, vec![]), Err(Error::Shape { .. })));
        assert!(matches!(Tensor::new(1, 2, vec![1.0]), Err(Error::Shape { .. })));
        assert!(matches!(Tensor::new(1, 2, vec![1.0, f64::NAN]), Err(Error::NonFinite(_))));
        assert!(matches!(
            Tensor::new(1, 1, vec![f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
        let json = r#"{"rows":1,"cols":2,"data":[1.0]}"#;
        assert!(serde_json::from_str::<Tensor<f64>>(json).is_err());
    }

    fn tensor_strategy(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| Tensor::new(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn transpose_is_involution(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let x = Tensor::<f64>::from_fn(rows, cols, |i, j| {
                ((seed.wrapping_mul(31).wrapping_add((i * 7 + j) as u64) % 1000) as f64) / 7.0
            }).unwrap();
            prop_assert_eq!(x.transpose().transpose(), x);
        }

        #[test]
        fn ones_kernel_is_identity(x in tensor_strategy(3, 4)) {
            prop_assert_eq!(x.hadamard_broadcast(&[1.0; 3], Axis::Rows).unwrap(), x.clone());
            prop_assert_eq!(x.hadamard_broadcast(&[1.0; 4], Axis::Cols).unwrap(), x);
        }

        #[test]
        fn matmul_is_associative(
            a in tensor_strategy(3, 4),
            b in tensor_strategy(4, 2),
            c in tensor_strategy(2, 5),
        ) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-12 * scale);
        }
    }
}
