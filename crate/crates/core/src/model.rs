//! Layer stacks: configuration, initialization, forward/backward through the
//! whole network, parameter counting and the JSON model file.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{DepthwiseConv, SequentialDense, CONV_BLOCKS, SEQDENSE_BLOCKS};
use crate::tensor::Tensor;
use crate::{Error, Result, Scalar};

/// Model file format version written by [`Tln::save`].
pub const MODEL_FILE_VERSION: u32 = 1;

fn default_kernel_size() -> usize {
    3
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlnConfig {
    pub input_seq_len: usize,
    pub input_features: usize,
    /// Forecast horizon.
    pub output_seq_len: usize,
    pub output_features: usize,
    /// `(seq_len, features)` of each intermediate layer output. The network
    /// has `hidden_shapes.len() + 1` layers.
    #[serde(default)]
    pub hidden_shapes: Vec<(usize, usize)>,
    #[serde(default = "default_true")]
    pub use_convolution: bool,
    #[serde(default = "default_kernel_size")]
    pub conv_kernel_size: usize,
    /// Per-layer dilations. `None` selects `2^l`, shrunk where a layer's
    /// sequence is too short for the full receptive field.
    #[serde(default)]
    pub dilation_schedule: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl TlnConfig {
    /// Two-layer network with one hidden shape `(output_seq_len, input_features)`.
    pub fn new(input_seq_len: usize, input_features: usize, output_seq_len: usize, output_features: usize) -> Self {
        TlnConfig {
            input_seq_len,
            input_features,
            output_seq_len,
            output_features,
            hidden_shapes: vec![(output_seq_len, input_features)],
            use_convolution: true,
            conv_kernel_size: default_kernel_size(),
            dilation_schedule: None,
            seed: 0,
        }
    }

    pub fn with_convolution(mut self, on: bool) -> Self {
        self.use_convolution = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_hidden_shapes(mut self, shapes: Vec<(usize, usize)>) -> Self {
        self.hidden_shapes = shapes;
        self
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_shapes.len() + 1
    }

    /// Input shape of the network followed by every layer's output shape.
    pub fn shape_chain(&self) -> Vec<(usize, usize)> {
        let mut chain = Vec::with_capacity(self.hidden_shapes.len() + 2);
        chain.push((self.input_seq_len, self.input_features));
        chain.extend(self.hidden_shapes.iter().copied());
        chain.push((self.output_seq_len, self.output_features));
        chain
    }

    pub fn validate(&self) -> Result<()> {
        for (i, &(s, f)) in self.shape_chain().iter().enumerate() {
            if s == 0 || f == 0 {
                return Err(Error::Config(format!(
                    "shape {i} of the layer chain is {s}x{f}; every extent must be at least 1"
                )));
            }
        }
        if self.use_convolution {
            if self.conv_kernel_size == 0 {
                return Err(Error::Config("conv_kernel_size must be at least 1".into()));
            }
            for l in 0..self.num_layers() {
                self.conv_geometry(l)?;
            }
        }
        Ok(())
    }

    /// `(kernel_size, dilation)` of layer `l`'s convolution.
    pub fn conv_geometry(&self, layer: usize) -> Result<(usize, usize)> {
        let (seq_len, _) = self.shape_chain()[layer + 1];
        match &self.dilation_schedule {
            Some(schedule) => {
                if schedule.len() != self.num_layers() {
                    return Err(Error::Config(format!(
                        "dilation schedule has {} entries for {} layers",
                        schedule.len(),
                        self.num_layers()
                    )));
                }
                let d = schedule[layer];
                let k = self.conv_kernel_size;
                if d == 0 {
                    return Err(Error::Config(format!("layer {layer}: dilation must be at least 1")));
                }
                if (k - 1) * d + 1 > seq_len {
                    return Err(Error::Config(format!(
                        "layer {layer}: receptive field {} (kernel {k}, dilation {d}) exceeds sequence length {seq_len}",
                        (k - 1) * d + 1
                    )));
                }
                Ok((k, d))
            }
            None => {
                let k = self.conv_kernel_size.min(seq_len);
                let mut d = 1usize << layer.min(30);
                if k > 1 && (k - 1) * d + 1 > seq_len {
                    d = ((seq_len - 1) / (k - 1)).max(1);
                }
                Ok((k, d))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct Layer<T> {
    pub seqdense: SequentialDense<T>,
    pub conv: Option<DepthwiseConv<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn input_shape(&self) -> (usize, usize) {
        self.seqdense.input_shape()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.seqdense.output_shape()
    }

    pub fn param_count(&self) -> usize {
        self.seqdense.param_count() + self.conv.as_ref().map_or(0, |c| c.param_count())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.seqdense.forward(x)?;
        match &self.conv {
            Some(conv) => conv.forward(&y),
            None => Ok(y),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Layer {
            seqdense: self.seqdense.zeros_like(),
            conv: self.conv.as_ref().map(|c| c.zeros_like()),
        }
    }

    /// Parameter blocks with their names, `seqdense.*` first.
    pub fn blocks(&self) -> Vec<(&'static str, &[T])> {
        let mut out: Vec<(&'static str, &[T])> = SEQDENSE_BLOCKS.into_iter().zip(self.seqdense.blocks()).collect();
        if let Some(conv) = &self.conv {
            out.extend(CONV_BLOCKS.into_iter().zip(conv.blocks()));
        }
        out
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.seqdense.blocks_mut().into_iter().collect();
        if let Some(conv) = &mut self.conv {
            out.extend(conv.blocks_mut());
        }
        out
    }

    fn validate(&self, index: usize) -> Result<()> {
        let named = |e: Error| Error::Validation(format!("layer {index}: {e}"));
        self.seqdense.validate().map_err(named)?;
        if let Some(conv) = &self.conv {
            conv.validate().map_err(named)?;
            let (seq_len, features) = self.output_shape();
            if conv.channels() != features {
                return Err(Error::Validation(format!(
                    "layer {index}: convolution has {} channels but the dense stage outputs {features} features",
                    conv.channels()
                )));
            }
            conv.check_fits(seq_len).map_err(named)?;
        }
        Ok(())
    }
}

/// A Temporal Linear Network.
#[derive(Clone, Debug, PartialEq)]
pub struct Tln<T> {
    config: TlnConfig,
    layers: Vec<Layer<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
struct ModelFile<T> {
    version: u32,
    config: TlnConfig,
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Tln<T> {
    /// Wraps existing layers, checking them against `config`.
    pub fn new(config: TlnConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        let chain = config.shape_chain();
        if layers.len() != chain.len() - 1 {
            return Err(Error::Validation(format!(
                "config declares {} layers, found {}",
                chain.len() - 1,
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            layer.validate(l)?;
            if layer.input_shape() != chain[l] || layer.output_shape() != chain[l + 1] {
                return Err(Error::Validation(format!(
                    "layer {l}: maps {:?} to {:?}, config expects {:?} to {:?}",
                    layer.input_shape(),
                    layer.output_shape(),
                    chain[l],
                    chain[l + 1]
                )));
            }
            if layer.conv.is_some() != config.use_convolution {
                return Err(Error::Validation(format!(
                    "layer {l}: convolution block {} but use_convolution is {}",
                    if layer.conv.is_some() { "present" } else { "absent" },
                    config.use_convolution
                )));
            }
        }
        Ok(Tln { config, layers })
    }

    /// Builds a freshly initialized network.
    ///
    /// Multiplicative kernels start at one and biases at zero; dense weights
    /// are drawn uniformly from `±sqrt(6 / (fan_in + fan_out))`; each
    /// convolution starts as the identity tap. A fresh network is therefore a
    /// plain stack of dense maps.
    pub fn build(config: TlnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let chain = config.shape_chain();
        let mut layers = Vec::with_capacity(chain.len() - 1);
        for l in 0..chain.len() - 1 {
            let (s_in, f_in) = chain[l];
            let (s_out, f_out) = chain[l + 1];
            let feature_weights = glorot_uniform(&mut rng, f_out, f_in)?;
            let time_weights = glorot_uniform(&mut rng, s_out, s_in)?;
            let seqdense = SequentialDense::with_weights(feature_weights, time_weights)?;
            let conv = if config.use_convolution {
                let (k, d) = config.conv_geometry(l)?;
                Some(DepthwiseConv::identity(k, f_out, d)?)
            } else {
                None
            };
            layers.push(Layer { seqdense, conv });
        }
        Tln::new(config, layers)
    }

    pub fn config(&self) -> &TlnConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.config.input_seq_len, self.config.input_features)
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.config.output_seq_len, self.config.output_features)
    }

    /// Number of scalar parameters; depends only on the structure.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Same structure with every parameter set to zero.
    pub fn zeroed(&self) -> Self {
        Tln {
            config: self.config.clone(),
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.layers.iter().try_fold(x.clone(), |h, layer| layer.forward(&h))
    }

    /// Gradients of a scalar loss with respect to every layer's parameters
    /// and to `x`, given `grad_out = ∂loss/∂forward(x)`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Vec<Layer<T>>, Tensor<T>)> {
        self.check_input(x)?;
        // Inputs to each dense stage and each convolution.
        let mut dense_inputs = Vec::with_capacity(self.layers.len());
        let mut conv_inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let y = layer.seqdense.forward(&h)?;
            dense_inputs.push(h);
            h = match &layer.conv {
                Some(conv) => {
                    let out = conv.forward(&y)?;
                    conv_inputs.push(Some(y));
                    out
                }
                None => {
                    conv_inputs.push(None);
                    y
                }
            };
        }
        if grad_out.shape() != h.shape() {
            return Err(Error::shape(
                "model backward",
                format!("output {}", h.shape_str()),
                format!("grad {}", grad_out.shape_str()),
            ));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let conv_grad = match (&layer.conv, &conv_inputs[l]) {
                (Some(conv), Some(input)) => {
                    let (cg, gi) = conv.backward(input, &g)?;
                    g = gi;
                    Some(cg)
                }
                _ => None,
            };
            let (dg, gi) = layer.seqdense.backward(&dense_inputs[l], &g)?;
            g = gi;
            grads.push(Layer {
                seqdense: dg,
                conv: conv_grad,
            });
        }
        grads.reverse();
        Ok((grads, g))
    }

    /// Parameter blocks named `layer{l}.seqdense.<block>` / `layer{l}.conv.<block>`.
    pub fn named_blocks(&self) -> Vec<(String, &[T])> {
        named_blocks(&self.layers)
    }

    pub(crate) fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(Layer::blocks_mut).collect()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::shape(
                "model forward",
                format!("model input {}x{}", self.config.input_seq_len, self.config.input_features),
                format!("tensor {}", x.shape_str()),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            config: self.config.clone(),
            layers: self.layers.clone(),
        };
        serde_json::to_string_pretty(&file).map_err(Error::from_json)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile<T> = serde_json::from_str(text).map_err(Error::from_json)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(Error::Validation(format!(
                "unsupported model file version {} (expected {MODEL_FILE_VERSION})",
                file.version
            )));
        }
        Tln::new(file.config, file.layers)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub(crate) fn named_blocks<T: Scalar>(layers: &[Layer<T>]) -> Vec<(String, &[T])> {
    let mut out = Vec::new();
    for (l, layer) in layers.iter().enumerate() {
        for (i, (name, block)) in layer.blocks().into_iter().enumerate() {
            let kind = if i < SEQDENSE_BLOCKS.len() { "seqdense" } else { "conv" };
            out.push((format!("layer{l}.{kind}.{name}"), block));
        }
    }
    out
}

fn glorot_uniform<T: Scalar>(rng: &mut ChaCha8Rng, fan_out: usize, fan_in: usize) -> Result<Tensor<T>> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(fan_out, fan_in, |_, _| T::of(rng.gen_range(-limit..=limit)))
}
