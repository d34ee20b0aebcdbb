//! The three networks used by the training objectives.
//!
//! * [`SrModel`]: residual refiner on a bicubic-upsampled frame, `out = x + stack(x)`.
//! * [`Discriminator`]: strided conv stack pooled to one logit per image.
//! * [`FeatureExtractor`]: fixed, randomly initialised conv stack for the feature loss.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::ConvParams;
use crate::error::CoreError;
use crate::math;
use crate::tape::{ParamSet, Parameter, Tape, Var};
use crate::tensor::{Shape, Tensor};

pub const LEAKY_SLOPE: f32 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    conv: ConvParams,
    activation: Option<f32>,
}

/// A plain sequence of convolutions with optional leaky-ReLU after each.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack {
    layers: Vec<ConvLayer>,
    params: ParamSet,
}

/// Declarative description of one layer, used to build a stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Option<f32>,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in) * gain`.
    Kaiming { gain: f32 },
    Zeros,
}

impl ConvStack {
    pub fn build<R: Rng>(specs: &[LayerSpec], trainable: bool, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, s) in specs.iter().enumerate() {
            let wshape = Shape::new(s.out_channels, s.in_channels, s.kernel, s.kernel);
            let weight = match s.init {
                Init::Zeros => Tensor::zeros(wshape),
                Init::Kaiming { gain } => {
                    let fan_in = (s.in_channels * s.kernel * s.kernel) as f32;
                    let bound = math::sqrt(6.0 / fan_in) * gain;
                    Tensor::from_fn(wshape, |_, _, _, _| rng.gen_range(-bound..=bound))
                }
            };
            let bias = Tensor::zeros(Shape::new(1, s.out_channels, 1, 1));
            let w = params.push(Parameter::new(format!("conv{i}.weight"), weight, trainable));
            let b = params.push(Parameter::new(format!("conv{i}.bias"), bias, trainable));
            layers.push(ConvLayer {
                weight: w,
                bias: b,
                conv: ConvParams { stride: s.stride, pad: s.kernel / 2 },
                activation: s.activation,
            });
        }
        ConvStack { layers, params }
    }

    /// Builds a stack from explicit weights and biases.
    pub fn from_weights(layers: Vec<(Tensor, Tensor, ConvParams, Option<f32>)>, trainable: bool) -> Self {
        let mut params = ParamSet::new();
        let mut out = Vec::with_capacity(layers.len());
        for (i, (w, b, conv, activation)) in layers.into_iter().enumerate() {
            let weight = params.push(Parameter::new(format!("conv{i}.weight"), w, trainable));
            let bias = params.push(Parameter::new(format!("conv{i}.bias"), b, trainable));
            out.push(ConvLayer { weight, bias, conv, activation });
        }
        ConvStack { layers: out, params }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn in_channels(&self) -> usize {
        self.layers.first().map_or(0, |l| self.params.get(l.weight).value.shape().c)
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| self.params.get(l.weight).value.shape().n)
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var, CoreError> {
        for layer in &self.layers {
            let w = tape.param(&self.params, layer.weight);
            let b = tape.param(&self.params, layer.bias);
            x = tape.conv2d(x, w, b, layer.conv)?;
            if let Some(slope) = layer.activation {
                x = tape.leaky_relu(x, slope)?;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SrConfig {
    pub depth: usize,
    pub width: usize,
    pub channels: usize,
    pub kernel: usize,
}

impl SrConfig {
    pub fn new(depth: usize, width: usize, channels: usize) -> Self {
        SrConfig { depth, width, channels, kernel: 3 }
    }

    fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::with_capacity(self.depth);
        for i in 0..self.depth {
            let first = i == 0;
            let last = i + 1 == self.depth;
            specs.push(LayerSpec {
                in_channels: if first { self.channels } else { self.width },
                out_channels: if last { self.channels } else { self.width },
                kernel: self.kernel,
                stride: 1,
                activation: (!last).then_some(LEAKY_SLOPE),
                init: if last { Init::Zeros } else { Init::Kaiming { gain: 1.0 } },
            });
        }
        specs
    }

    /// Closed-form parameter count: `sum over layers of (out * k^2 * in + out)`.
    pub fn parameter_count(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        let first = self.width * k2 * self.channels + self.width;
        let hidden = (self.depth - 2) * (self.width * k2 * self.width + self.width);
        let last = self.channels * k2 * self.width + self.channels;
        first + hidden + last
    }
}

/// Residual SR refiner; input and output have the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SrModel {
    config: SrConfig,
    stack: ConvStack,
}

pub fn build_sr_net(config: SrConfig, seed: u64) -> Result<SrModel, CoreError> {
    if config.depth < 2 {
        return Err(CoreError::InvalidArgument("SR network depth must be at least 2"));
    }
    if config.width == 0 || config.channels == 0 {
        return Err(CoreError::InvalidArgument("SR network width and channels must be positive"));
    }
    if config.kernel % 2 == 0 {
        return Err(CoreError::InvalidArgument("SR network kernel must be odd"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stack = ConvStack::build(&config.layer_specs(), true, &mut rng);
    Ok(SrModel { config, stack })
}

impl SrModel {
    pub fn config(&self) -> SrConfig {
        self.config
    }

    pub fn params(&self) -> &ParamSet {
        self.stack.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.stack.params_mut()
    }

    /// Records `x + stack(x)` on the tape.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, CoreError> {
        let c = tape.value(x).shape().c;
        if c != self.config.channels {
            return Err(CoreError::DimMismatch { op: "forward_sr", dim: "input channels", expected: self.config.channels, actual: c });
        }
        let residual = self.stack.forward(tape, x)?;
        tape.add(x, residual)
    }

    /// Inference without gradient bookkeeping.
    pub fn infer(&self, upsampled_lr: &Tensor) -> Result<Tensor, CoreError> {
        let mut tape = Tape::new();
        tape.freeze(self.params());
        let x = tape.constant(upsampled_lr.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

/// Patch discriminator emitting one logit per image.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    stack: ConvStack,
}

pub fn build_discriminator(channels: usize, width: usize, seed: u64) -> Discriminator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lrelu = Some(LEAKY_SLOPE);
    let k = Init::Kaiming { gain: 1.0 };
    let specs = [
        LayerSpec { in_channels: channels, out_channels: width, kernel: 3, stride: 1, activation: lrelu, init: k },
        LayerSpec { in_channels: width, out_channels: 2 * width, kernel: 3, stride: 2, activation: lrelu, init: k },
        LayerSpec { in_channels: 2 * width, out_channels: 2 * width, kernel: 3, stride: 2, activation: lrelu, init: k },
        LayerSpec { in_channels: 2 * width, out_channels: 1, kernel: 3, stride: 1, activation: None, init: Init::Kaiming { gain: 0.1 } },
    ];
    Discriminator { stack: ConvStack::build(&specs, true, &mut rng) }
}

impl Discriminator {
    pub fn params(&self) -> &ParamSet {
        self.stack.params()
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        self.stack.params_mut()
    }

    /// Logits of shape `(n, 1, 1, 1)`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, CoreError> {
        let map = self.stack.forward(tape, x)?;
        Ok(tape.spatial_mean(map))
    }
}

/// Frozen feature network; its parameters are never trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    stack: ConvStack,
}

pub fn build_feature_extractor(channels: usize, seed: u64) -> FeatureExtractor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = Init::Kaiming { gain: 1.0 };
    let specs = [
        LayerSpec { in_channels: channels, out_channels: 8, kernel: 3, stride: 1, activation: Some(LEAKY_SLOPE), init: k },
        LayerSpec { in_channels: 8, out_channels: 8, kernel: 3, stride: 1, activation: Some(LEAKY_SLOPE), init: k },
        LayerSpec { in_channels: 8, out_channels: 8, kernel: 3, stride: 1, activation: None, init: k },
    ];
    FeatureExtractor { stack: ConvStack::build(&specs, false, &mut rng) }
}

impl FeatureExtractor {
    /// Wraps an explicit stack, forcing every parameter to be non-trainable.
    pub fn from_stack(mut stack: ConvStack) -> Self {
        for p in stack.params_mut().iter_mut() {
            p.trainable = false;
        }
        FeatureExtractor { stack }
    }

    pub fn params(&self) -> &ParamSet {
        self.stack.params()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, CoreError> {
        self.stack.forward(tape, x)
    }

    pub fn features(&self, x: &Tensor) -> Result<Tensor, CoreError> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let f = self.forward(&mut tape, v)?;
        Ok(tape.value(f).clone())
    }
}
