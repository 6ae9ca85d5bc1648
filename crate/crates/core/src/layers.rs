//! The two layer primitives and their exact adjoints.
//!
//! [`SequentialDense`] maps an `S_in × F_in` window to `S_out × F_out` in three
//! stages:
//!
//! ```text
//! X̃ = K ⊙ X                          (base kernel, one scale per position)
//! Z = F ⊙ (X̃ W_xᵀ + b_x)             (feature transform, shared across positions)
//! Y = τ ⊙ (W_t Z + B_t)              (time transform, shared across features)
//! ```
//!
//! [`DepthwiseConv`] is a causal, dilated, per-feature convolution with left
//! zero padding:
//!
//! ```text
//! y[t, q] = b[q] + Σ_k W[k, q] · x[t − k·d, q]
//! ```
//!
//! Tap `k = 0` reads the current position. Reversing a kernel recovers the
//! forward-looking form `x[t + k·d]`.

use serde::{Deserialize, Serialize};

use crate::tensor::{Axis, Tensor};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SequentialDense<T> {
    /// Length `S_in`.
    pub base_kernel: Vec<T>,
    /// `F_out × F_in`.
    pub feature_weights: Tensor<T>,
    /// Length `F_out`.
    pub feature_bias: Vec<T>,
    /// Length `F_out`.
    pub feature_kernel: Vec<T>,
    /// `S_out × S_in`.
    pub time_weights: Tensor<T>,
    /// Length `S_out`, broadcast across features.
    pub time_bias: Vec<T>,
    /// Length `S_out`.
    pub time_kernel: Vec<T>,
}

/// Names of the [`SequentialDense`] parameter blocks, in [`SequentialDense::blocks`] order.
pub const SEQDENSE_BLOCKS: [&str; 7] = [
    "base_kernel",
    "feature_weights",
    "feature_bias",
    "feature_kernel",
    "time_weights",
    "time_bias",
    "time_kernel",
];

impl<T: Scalar> SequentialDense<T> {
    /// All-ones kernels with the given weight matrices and zero biases.
    pub fn with_weights(feature_weights: Tensor<T>, time_weights: Tensor<T>) -> Result<Self> {
        let (f_out, _) = feature_weights.shape();
        let (s_out, s_in) = time_weights.shape();
        let p = SequentialDense {
            base_kernel: vec![T::one(); s_in],
            feature_weights,
            feature_bias: vec![T::zero(); f_out],
            feature_kernel: vec![T::one(); f_out],
            time_weights,
            time_bias: vec![T::zero(); s_out],
            time_kernel: vec![T::one(); s_out],
        };
        p.validate()?;
        Ok(p)
    }

    /// Identity map on `seq_len × features` inputs.
    pub fn identity(seq_len: usize, features: usize) -> Result<Self> {
        Self::with_weights(Tensor::identity(features)?, Tensor::identity(seq_len)?)
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.time_weights.cols(), self.feature_weights.cols())
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.time_weights.rows(), self.feature_weights.rows())
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (s_in, f_in) = self.input_shape();
        let (s_out, f_out) = self.output_shape();
        let expect = [
            ("base_kernel", self.base_kernel.len(), s_in),
            ("feature_bias", self.feature_bias.len(), f_out),
            ("feature_kernel", self.feature_kernel.len(), f_out),
            ("time_bias", self.time_bias.len(), s_out),
            ("time_kernel", self.time_kernel.len(), s_out),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Validation(format!(
                    "sequential dense {name} has length {got}, expected {want} \
                     (input {s_in}x{f_in}, output {s_out}x{f_out})"
                )));
            }
        }
        for (name, block) in SEQDENSE_BLOCKS.iter().zip(self.blocks()) {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("sequential dense {name}")));
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> [&[T]; 7] {
        [
            &self.base_kernel,
            self.feature_weights.as_slice(),
            &self.feature_bias,
            &self.feature_kernel,
            self.time_weights.as_slice(),
            &self.time_bias,
            &self.time_kernel,
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [T]; 7] {
        [
            &mut self.base_kernel,
            self.feature_weights.as_mut_slice(),
            &mut self.feature_bias,
            &mut self.feature_kernel,
            self.time_weights.as_mut_slice(),
            &mut self.time_bias,
            &mut self.time_kernel,
        ]
    }

    /// Same shapes, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.blocks_mut() {
            block.fill(T::zero());
        }
        z
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (s_in, f_in) = self.input_shape();
        if x.shape() != (s_in, f_in) {
            return Err(Error::shape(
                "sequential dense",
                format!("layer input {s_in}x{f_in}"),
                format!("tensor {}", x.shape_str()),
            ));
        }
        Ok(())
    }

    /// Returns `(X̃, Q, Z, P)` where `Q` is the feature stage before the
    /// feature kernel and `P` the time stage before the time kernel.
    fn stages(&self, x: &Tensor<T>) -> Result<[Tensor<T>; 4]> {
        self.validate()?;
        self.check_input(x)?;
        let scaled = x.hadamard_broadcast(&self.base_kernel, Axis::Rows)?;
        let mixed = scaled.matmul(&self.feature_weights.transpose())?;
        let pre_feature = add_row_vector(&mixed, &self.feature_bias)?;
        let feature_out = pre_feature.hadamard_broadcast(&self.feature_kernel, Axis::Cols)?;
        let timed = self.time_weights.matmul(&feature_out)?;
        let pre_time = add_col_vector(&timed, &self.time_bias)?;
        Ok([scaled, pre_feature, feature_out, pre_time])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, _, _, pre_time] = self.stages(x)?;
        pre_time.hadamard_broadcast(&self.time_kernel, Axis::Rows)
    }

    /// Gradients of a scalar loss with respect to every parameter and to `x`,
    /// given `grad_out = ∂loss/∂forward(x)`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Self, Tensor<T>)> {
        let [scaled, pre_feature, feature_out, pre_time] = self.stages(x)?;
        if grad_out.shape() != pre_time.shape() {
            return Err(Error::shape(
                "sequential dense backward",
                format!("output {}", pre_time.shape_str()),
                format!("grad {}", grad_out.shape_str()),
            ));
        }
        let (s_out, f_out) = pre_time.shape();

        let time_kernel = (0..s_out)
            .map(|t| dot(grad_out.row(t), pre_time.row(t)))
            .collect();
        let d_pre_time = grad_out.hadamard_broadcast(&self.time_kernel, Axis::Rows)?;
        let time_bias = (0..s_out).map(|t| d_pre_time.row(t).iter().copied().sum()).collect();
        let time_weights = d_pre_time.matmul(&feature_out.transpose())?;
        let d_feature_out = self.time_weights.transpose().matmul(&d_pre_time)?;

        let feature_kernel = column_dots(&d_feature_out, &pre_feature);
        let d_pre_feature = d_feature_out.hadamard_broadcast(&self.feature_kernel, Axis::Cols)?;
        let feature_bias = column_sums(&d_pre_feature);
        let feature_weights = d_pre_feature.transpose().matmul(&scaled)?;
        let d_scaled = d_pre_feature.matmul(&self.feature_weights)?;

        let base_kernel = (0..x.rows()).map(|s| dot(d_scaled.row(s), x.row(s))).collect();
        let grad_in = d_scaled.hadamard_broadcast(&self.base_kernel, Axis::Rows)?;

        debug_assert_eq!(feature_bias.len(), f_out);
        let grads = SequentialDense {
            base_kernel,
            feature_weights,
            feature_bias,
            feature_kernel,
            time_weights,
            time_bias,
            time_kernel,
        };
        grads.validate()?;
        Ok((grads, grad_in))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct DepthwiseConv<T> {
    /// `kernel_size × channels`; column `q` is the filter of channel `q`.
    pub kernel: Tensor<T>,
    /// Length `channels`.
    pub bias: Vec<T>,
    pub dilation: usize,
}

/// Names of the [`DepthwiseConv`] parameter blocks, in [`DepthwiseConv::blocks`] order.
pub const CONV_BLOCKS: [&str; 2] = ["kernel", "bias"];

impl<T: Scalar> DepthwiseConv<T> {
    pub fn new(kernel: Tensor<T>, bias: Vec<T>, dilation: usize) -> Result<Self> {
        let conv = DepthwiseConv {
            kernel,
            bias,
            dilation,
        };
        conv.validate()?;
        Ok(conv)
    }

    /// Kernel whose only non-zero tap (value 1) reads the current position.
    pub fn identity(kernel_size: usize, channels: usize, dilation: usize) -> Result<Self> {
        let kernel = Tensor::from_fn(kernel_size, channels, |k, _| {
            if k == 0 {
                T::one()
            } else {
                T::zero()
            }
        })?;
        Self::new(kernel, vec![T::zero(); channels], dilation)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.rows()
    }

    pub fn channels(&self) -> usize {
        self.kernel.cols()
    }

    /// Number of input positions one output position can see.
    pub fn receptive_field(&self) -> usize {
        (self.kernel_size() - 1) * self.dilation + 1
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation == 0 {
            return Err(Error::Config("convolution dilation must be at least 1".into()));
        }
        if self.bias.len() != self.channels() {
            return Err(Error::Validation(format!(
                "convolution bias has length {}, expected {} channels",
                self.bias.len(),
                self.channels()
            )));
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("convolution bias".into()));
        }
        Ok(())
    }

    /// Checks the receptive field fits a sequence of `seq_len` positions.
    pub fn check_fits(&self, seq_len: usize) -> Result<()> {
        if self.receptive_field() > seq_len {
            return Err(Error::Config(format!(
                "convolution receptive field {} (kernel {}, dilation {}) exceeds sequence length {seq_len}",
                self.receptive_field(),
                self.kernel_size(),
                self.dilation
            )));
        }
        Ok(())
    }

    pub fn blocks(&self) -> [&[T]; 2] {
        [self.kernel.as_slice(), &self.bias]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [T]; 2] {
        [self.kernel.as_mut_slice(), &mut self.bias]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for block in z.blocks_mut() {
            block.fill(T::zero());
        }
        z
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        self.validate()?;
        if x.cols() != self.channels() {
            return Err(Error::shape(
                "conv1d",
                format!("{} channels", self.channels()),
                format!("tensor {}", x.shape_str()),
            ));
        }
        self.check_fits(x.rows())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let d = self.dilation;
        Tensor::from_fn(x.rows(), x.cols(), |t, q| {
            (0..self.kernel_size())
                .take_while(|k| k * d <= t)
                .fold(self.bias[q], |acc, k| acc + self.kernel.get(k, q) * x.get(t - k * d, q))
        })
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Self, Tensor<T>)> {
        self.check_input(x)?;
        if grad_out.shape() != x.shape() {
            return Err(Error::shape(
                "conv1d backward",
                format!("output {}", x.shape_str()),
                format!("grad {}", grad_out.shape_str()),
            ));
        }
        let d = self.dilation;
        let s = x.rows();
        // Causal cross-correlation of the cotangent with the input.
        let kernel = Tensor::from_fn(self.kernel_size(), self.channels(), |k, q| {
            (k * d..s).fold(T::zero(), |acc, t| acc + grad_out.get(t, q) * x.get(t - k * d, q))
        })?;
        let bias = column_sums(grad_out);
        // Anti-causal convolution of the cotangent with the kernel.
        let grad_in = Tensor::from_fn(s, self.channels(), |p, q| {
            (0..self.kernel_size())
                .take_while(|k| p + k * d < s)
                .fold(T::zero(), |acc, k| acc + self.kernel.get(k, q) * grad_out.get(p + k * d, q))
        })?;
        Ok((
            DepthwiseConv {
                kernel,
                bias,
                dilation: d,
            },
            grad_in,
        ))
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

fn column_sums<T: Scalar>(t: &Tensor<T>) -> Vec<T> {
    let mut out = vec![T::zero(); t.cols()];
    for i in 0..t.rows() {
        for (o, &v) in out.iter_mut().zip(t.row(i)) {
            *o = *o + v;
        }
    }
    out
}

fn column_dots<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let mut out = vec![T::zero(); a.cols()];
    for i in 0..a.rows() {
        for ((o, &x), &y) in out.iter_mut().zip(a.row(i)).zip(b.row(i)) {
            *o = *o + x * y;
        }
    }
    out
}

fn add_row_vector<T: Scalar>(t: &Tensor<T>, v: &[T]) -> Result<Tensor<T>> {
    Tensor::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j) + v[j])
}

fn add_col_vector<T: Scalar>(t: &Tensor<T>, v: &[T]) -> Result<Tensor<T>> {
    Tensor::from_fn(t.rows(), t.cols(), |i, j| t.get(i, j) + v[i])
}
