//! PatchGAN discriminator: scores overlapping patches of an image as real
//! or generated and averages the grid.

use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relightnet::layers::{bn_config, sigmoid, Activation, ConvBlock, ConvSpec, LayerKind, LEAKY};
use crate::relightnet::params::{init_deterministic, parameter_count};

/// Scores are clamped to `[EPS, 1 - EPS]` inside the logarithms.
pub const ADVERSARIAL_EPS: f64 = 1e-7;

/// Variable-name prefix inside checkpoints.
pub const NAMESPACE: &str = "discriminator";

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorMode {
    /// Scores the image alone.
    Unconditional,
    /// Would also see the input and target images. Not implemented.
    Conditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub mode: DiscriminatorMode,
    pub base_width: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            mode: DiscriminatorMode::Unconditional,
            base_width: 64,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

/// Per-patch probabilities that an image is real.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchVerdict {
    pub width: usize,
    pub height: usize,
    /// Row-major scores in `[0, 1]`.
    pub scores: Vec<f64>,
    pub mean: f64,
}

impl PatchVerdict {
    pub fn from_scores(width: usize, height: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != width * height || scores.is_empty() {
            return Err(Error::Shape(format!("{} scores for a {width}x{height} grid", scores.len())));
        }
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        Ok(Self { width, height, scores, mean })
    }

    pub fn filled(width: usize, height: usize, score: f64) -> Self {
        Self {
            width,
            height,
            scores: vec![score; width * height],
            mean: score,
        }
    }

    /// One verdict per batch element of a `(N, 1, h, w)` score tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Vec<Self>> {
        let (n, _, h, w) = t.dims4()?;
        let rows = t.reshape((n, h * w))?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        rows.into_iter().map(|r| Self::from_scores(w, h, r)).collect()
    }
}

/// Four 4x4 stride-2 convolutions (widths w, 2w, 4w, 8w; batch norm on all
/// but the first) and a 3x3 one-channel scoring conv with a sigmoid. On a
/// 256x256 input the score grid is 16x16 and each score sees a 78x78 patch.
pub struct Discriminator {
    config: DiscriminatorConfig,
    layers: Vec<ConvBlock>,
    score: ConvBlock,
    varmap: VarMap,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, device: &Device, seed: u64) -> Result<Self> {
        let d = Self::uninitialised(config, device)?;
        let leaky = (2.0 / (1.0 + 0.04f64)).sqrt();
        // a small last layer keeps initial scores near 0.5
        init_deterministic(&d.varmap, seed, |name| if name.contains(".score.") { 0.1 } else { leaky })?;
        Ok(d)
    }

    pub fn uninitialised(config: DiscriminatorConfig, device: &Device) -> Result<Self> {
        if config.mode == DiscriminatorMode::Conditional {
            return Err(Error::Config(
                "conditional discriminator is not implemented; use mode \"unconditional\"".into(),
            ));
        }
        if config.base_width == 0 {
            return Err(Error::Config("discriminator base width must be positive".into()));
        }
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, device).pp(NAMESPACE);
        let bn = bn_config(config.bn_momentum, config.bn_eps);
        let w = config.base_width;
        let widths = [3, w, 2 * w, 4 * w, 8 * w];
        let mut layers = Vec::with_capacity(4);
        for i in 0..4 {
            let mut spec = ConvSpec::new(widths[i], widths[i + 1], 4, 2).padding(1);
            if i == 0 {
                spec = spec.plain(LEAKY);
            }
            layers.push(ConvBlock::new(spec, bn, vb.pp(format!("layer{}", i + 1)))?);
        }
        let score = ConvBlock::new(ConvSpec::new(8 * w, 1, 3, 1).plain(Activation::Identity), bn, vb.pp("score"))?;
        Ok(Self {
            config,
            layers,
            score,
            varmap,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.varmap)
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        self.layers
            .iter()
            .chain(std::iter::once(&self.score))
            .map(|l| l.kind().clone())
            .collect()
    }

    /// Receptive field of one score, in input pixels.
    pub fn receptive_field(&self) -> usize {
        self.layers().iter().rev().fold(1, |rf, k| match k {
            LayerKind::Conv { kernel, stride, .. } => (rf - 1) * stride + kernel,
            _ => rf,
        })
    }

    /// `(N, 3, H, W)` images -> `(N, 1, H/16, W/16)` scores in `[0, 1]`.
    pub fn forward_t(&self, images: &Tensor, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        if c != 3 || h % 16 != 0 || w % 16 != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "discriminator needs (N, 3, H, W) with H, W multiples of 16, got {:?}",
                images.dims()
            )));
        }
        let mut x = images.clone();
        for l in &self.layers {
            x = l.forward_t(&x, train)?;
        }
        Ok(sigmoid(&self.score.forward_t(&x, train)?)?)
    }

    /// Inference-mode verdicts.
    pub fn discriminate(&self, images: &Tensor) -> Result<Vec<PatchVerdict>> {
        PatchVerdict::from_tensor(&self.forward_t(images, false)?)
    }
}

fn clamp(p: f64) -> f64 {
    p.clamp(ADVERSARIAL_EPS, 1.0 - ADVERSARIAL_EPS)
}

fn mean_log(scores: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    scores.iter().map(|&p| f(clamp(p)).ln()).sum::<f64>() / scores.len().max(1) as f64
}

/// Binary cross-entropy GAN terms:
/// `d_loss = -mean log(real) - mean log(1 - fake)`, `g_loss = -mean log(fake)`.
pub fn adversarial_losses(real: &PatchVerdict, fake: &PatchVerdict) -> (f64, f64) {
    let d = -mean_log(&real.scores, |p| p) - mean_log(&fake.scores, |p| 1.0 - p);
    let g = -mean_log(&fake.scores, |p| p);
    (d, g)
}

fn clamp_t(t: &Tensor) -> Result<Tensor> {
    Ok(t.clamp(ADVERSARIAL_EPS, 1.0 - ADVERSARIAL_EPS)?)
}

/// Tensor form of the discriminator term.
pub fn discriminator_loss_t(real: &Tensor, fake: &Tensor) -> Result<Tensor> {
    let r = clamp_t(real)?.log()?.mean_all()?;
    let f = clamp_t(fake)?.affine(-1.0, 1.0)?.log()?.mean_all()?;
    Ok((r + f)?.neg()?)
}

/// Tensor form of the generator term.
pub fn generator_loss_t(fake: &Tensor) -> Result<Tensor> {
    Ok(clamp_t(fake)?.log()?.mean_all()?.neg()?)
}
