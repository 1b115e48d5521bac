use candle_core::{Tensor, Var};
use candle_nn::{init, BatchNormConfig, VarBuilder};

use super::config::Upsample;
use super::ops::{self, ChannelStats};

/// Static description of one weight layer, for architecture introspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { kernel: usize, stride: usize, in_channels: usize, out_channels: usize },
    TransposedConv { kernel: usize, stride: usize },
    Linear { inputs: usize, outputs: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        match *self {
            Activation::LeakyRelu(slope) => ops::leaky_relu(x, slope),
            Activation::Identity => Ok(x.clone()),
        }
    }
}

pub const LEAKY: Activation = Activation::LeakyRelu(0.2);

#[derive(Clone, Debug)]
struct Conv {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let y = ops::conv2d(x, &self.weight, self.stride, self.padding)?;
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, (), 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Batch norm whose running statistics live in the var map, so they are
/// checkpointed with the weights.
#[derive(Clone, Debug)]
struct Norm {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl Norm {
    fn new(channels: usize, cfg: BatchNormConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let var = |name: &str, v: f64| -> candle_core::Result<Var> {
            Var::from_tensor(&vb.get_with_hints(channels, name, init::Init::Const(v))?)
        };
        Ok(Self {
            weight: vb.get_with_hints(channels, "weight", init::Init::Const(1.0))?,
            bias: vb.get_with_hints(channels, "bias", init::Init::Const(0.0))?,
            running_mean: var("running_mean", 0.0)?,
            running_var: var("running_var", 1.0)?,
            momentum: cfg.momentum,
            eps: cfg.eps,
        })
    }

    fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        if !train {
            let fixed = ChannelStats {
                mean: self.running_mean.as_tensor().to_vec1()?,
                var: self.running_var.as_tensor().to_vec1()?,
                count: 0,
            };
            return Ok(ops::batch_norm(x, &self.weight, &self.bias, self.eps, Some(fixed))?.0);
        }
        let (y, st) = ops::batch_norm(x, &self.weight, &self.bias, self.eps, None)?;
        let m = self.momentum as f32;
        let unbias = if st.count > 1 { st.count as f32 / (st.count - 1) as f32 } else { 1.0 };
        let blend = |old: &Var, new: Vec<f32>| -> candle_core::Result<()> {
            let merged: Vec<f32> = old
                .as_tensor()
                .to_vec1::<f32>()?
                .iter()
                .zip(new)
                .map(|(o, n)| o * (1.0 - m) + n * m)
                .collect();
            old.set(&Tensor::from_vec(merged, old.shape(), old.device())?)
        };
        blend(&self.running_mean, st.mean)?;
        blend(&self.running_var, st.var.iter().map(|v| v * unbias).collect())?;
        Ok(y)
    }
}

/// Convolution, optional batch normalisation, activation.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv: Conv,
    bn: Option<Norm>,
    act: Activation,
    kind: LayerKind,
}

pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub batch_norm: bool,
    pub act: Activation,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding: kernel / 2,
            batch_norm: true,
            act: LEAKY,
        }
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn plain(mut self, act: Activation) -> Self {
        self.batch_norm = false;
        self.act = act;
        self
    }
}

impl ConvBlock {
    pub fn new(spec: ConvSpec, bn: BatchNormConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let cv = vb.pp("conv");
        let k = spec.kernel;
        let bound = 1.0 / ((spec.in_channels * k * k) as f64).sqrt();
        let weight = cv.get_with_hints(
            (spec.out_channels, spec.in_channels, k, k),
            "weight",
            init::Init::Uniform { lo: -bound, up: bound },
        )?;
        let (bias, bn) = if spec.batch_norm {
            (None, Some(Norm::new(spec.out_channels, bn, vb.pp("bn"))?))
        } else {
            (Some(cv.get_with_hints(spec.out_channels, "bias", init::Init::Const(0.0))?), None)
        };
        let conv = Conv {
            weight,
            bias,
            stride: spec.stride,
            padding: spec.padding,
        };
        Ok(Self {
            conv,
            bn,
            act: spec.act,
            kind: LayerKind::Conv {
                kernel: spec.kernel,
                stride: spec.stride,
                in_channels: spec.in_channels,
                out_channels: spec.out_channels,
            },
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let y = self.conv.forward(x)?;
        let y = match &self.bn {
            Some(bn) => bn.forward_t(&y, train)?,
            None => y,
        };
        self.act.apply(&y)
    }

    pub fn kind(&self) -> &LayerKind {
        &self.kind
    }
}

pub fn bn_config(momentum: f64, eps: f64) -> BatchNormConfig {
    BatchNormConfig {
        eps,
        remove_mean: true,
        affine: true,
        momentum,
    }
}

/// `0.75 * x[i] + 0.25 * x[i -/+ 1]` interleaved along `dim` (edge-clamped):
/// factor-2 bilinear resampling with half-pixel centres.
fn bilinear_double(x: &Tensor, dim: usize) -> candle_core::Result<Tensor> {
    let n = x.dim(dim)?;
    let padded = x.pad_with_same(dim, 1, 1)?;
    let prev = padded.narrow(dim, 0, n)?;
    let next = padded.narrow(dim, 2, n)?;
    let even = ((x * 0.75)? + (prev * 0.25)?)?;
    let odd = ((x * 0.75)? + (next * 0.25)?)?;
    let stacked = Tensor::stack(&[even, odd], dim + 1)?;
    let mut dims = x.dims().to_vec();
    dims[dim] *= 2;
    stacked.reshape(dims)
}

pub fn upsample2x(x: &Tensor, mode: Upsample) -> candle_core::Result<Tensor> {
    match mode {
        Upsample::Nearest => ops::upsample_nearest2x(x),
        Upsample::Bilinear => bilinear_double(&bilinear_double(x, 2)?, 3),
    }
}

/// Concatenate along channels.
pub fn cat_channels(a: &Tensor, b: &Tensor) -> candle_core::Result<Tensor> {
    Tensor::cat(&[a, b], 1)
}

/// Numerically stable sigmoid built from differentiable primitives.
pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::sigmoid(x)
}

/// Softmax over the flattened spatial grid of each channel of `(N, C, H, W)`.
pub fn spatial_softmax(x: &Tensor) -> candle_core::Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let flat = x.reshape((n, c, h * w))?;
    candle_nn::ops::softmax_last_dim(&flat.contiguous()?)?.reshape((n, c, h, w))
}
