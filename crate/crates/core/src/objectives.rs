//! Training losses.
//!
//! Each loss exists twice: a scalar `f64` form with its analytic gradient
//! (used by metrics and for verification) and a batched tensor form used by
//! the trainer, which averages over the batch.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::envmap::{EnvironmentMapHsl, ENVMAP_PIXELS};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::relightnet::Variant;

/// Kelvin scale of the temperature loss.
pub const TEMPERATURE_NORM: f64 = 2000.0;

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("{what}: lengths differ ({a} vs {b})")));
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
pub fn l1_reconstruction(relit: &RgbImage, truth: &RgbImage) -> Result<f64> {
    if relit.shape() != truth.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", relit.shape(), truth.shape())));
    }
    let a = relit.as_slice();
    let b = truth.as_slice();
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum();
    Ok(sum / a.len().max(1) as f64)
}

/// `sum (ln(1 + estimate) - ln(1 + truth))^2`.
pub fn envmap_loss(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(estimate.len(), truth.len(), "envmap loss")?;
    if estimate.iter().chain(truth).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Value("envmap loss needs non-negative, finite values".into()));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e.ln_1p() - t.ln_1p()).powi(2))
        .sum())
}

/// Gradient of [`envmap_loss`] with respect to the estimate.
pub fn envmap_loss_grad(estimate: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_len(estimate.len(), truth.len(), "envmap loss")?;
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| 2.0 * (e.ln_1p() - t.ln_1p()) / (1.0 + e))
        .collect())
}

/// `1 - cos(pi (x - x_hat) / 180)` for angles in degrees. The difference is
/// reduced to `[0, 360)` first so whole turns cancel exactly.
pub fn cosine_loss(x: f64, x_hat: f64) -> f64 {
    1.0 - (PI * (x - x_hat).rem_euclid(360.0) / 180.0).cos()
}

/// d/dx_hat of [`cosine_loss`].
pub fn cosine_loss_grad(x: f64, x_hat: f64) -> f64 {
    -(PI * (x - x_hat) / 180.0).sin() * PI / 180.0
}

/// `(c - c_hat)^2 / 2000^2`.
pub fn temperature_loss(c: f64, c_hat: f64) -> f64 {
    ((c - c_hat) / TEMPERATURE_NORM).powi(2)
}

/// d/dc_hat of [`temperature_loss`].
pub fn temperature_loss_grad(c: f64, c_hat: f64) -> f64 {
    -2.0 * (c - c_hat) / TEMPERATURE_NORM.powi(2)
}

/// Compact-map loss on `[hue, saturation, brightness...]` vectors: hue on
/// the circle, squared saturation error, log-brightness loss.
pub fn hsl_envmap_loss(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    check_len(estimate.len(), truth.len(), "compact map")?;
    if estimate.len() < 2 {
        return Err(Error::Shape("compact map needs hue and saturation".into()));
    }
    Ok(cosine_loss(360.0 * truth[0], 360.0 * estimate[0])
        + (truth[1] - estimate[1]).powi(2)
        + envmap_loss(&estimate[2..], &truth[2..])?)
}

/// Gradient of [`hsl_envmap_loss`] with respect to the estimate.
pub fn hsl_envmap_loss_grad(estimate: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    check_len(estimate.len(), truth.len(), "compact map")?;
    let mut g = Vec::with_capacity(estimate.len());
    g.push(360.0 * cosine_loss_grad(360.0 * truth[0], 360.0 * estimate[0]));
    g.push(-2.0 * (truth[1] - estimate[1]));
    g.extend(envmap_loss_grad(&estimate[2..], &truth[2..])?);
    Ok(g)
}

pub fn hsl_envmap_loss_maps(estimate: &EnvironmentMapHsl, truth: &EnvironmentMapHsl) -> Result<f64> {
    let widen = |m: &EnvironmentMapHsl| m.to_vec().into_iter().map(f64::from).collect::<Vec<_>>();
    hsl_envmap_loss(&widen(estimate), &widen(truth))
}

/// Mean of the three pairwise Euclidean distances.
pub fn latent_triplet_distance(a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    Ok((l2_distance(a, b)? + l2_distance(a, c)? + l2_distance(c, b)?) / 3.0)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len(), "latent distance")?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Scene latent loss: codes of `I`, `G` and `Ĝ`.
pub fn latent_scene_loss(scene_i: &[f64], scene_g: &[f64], scene_relit: &[f64]) -> Result<f64> {
    latent_triplet_distance(scene_i, scene_g, scene_relit)
}

/// Light latent loss: codes of `T`, `G` and `Ĝ`.
pub fn latent_light_loss(light_t: &[f64], light_g: &[f64], light_relit: &[f64]) -> Result<f64> {
    latent_triplet_distance(light_t, light_g, light_relit)
}

/// Scene loss divided by `l2(scene_T, scene_G)`; `None` when that reference is zero.
pub fn latent_scene_loss_normalized(
    scene_i: &[f64],
    scene_t: &[f64],
    scene_g: &[f64],
    scene_relit: &[f64],
) -> Result<Option<f64>> {
    let reference = l2_distance(scene_t, scene_g)?;
    let loss = latent_scene_loss(scene_i, scene_g, scene_relit)?;
    Ok((reference > 0.0).then(|| loss / reference))
}

/// Light loss divided by `l2(light_I, light_G)`; `None` when that reference is zero.
pub fn latent_light_loss_normalized(
    light_i: &[f64],
    light_t: &[f64],
    light_g: &[f64],
    light_relit: &[f64],
) -> Result<Option<f64>> {
    let reference = l2_distance(light_i, light_g)?;
    let loss = latent_light_loss(light_t, light_g, light_relit)?;
    Ok((reference > 0.0).then(|| loss / reference))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerceptualBackend {
    /// Pretrained LPIPS supplied by the caller through [`PerceptualEvaluator`].
    LpipsExternal,
    /// Mean squared error averaged over a 3-level image pyramid. This is not LPIPS.
    BuiltinStandIn,
}

/// Hook for a pretrained perceptual-similarity network.
pub trait PerceptualEvaluator {
    /// Scalar distance between two `(N, 3, H, W)` batches.
    fn distance(&self, a: &Tensor, b: &Tensor) -> Result<Tensor>;
}

pub const PYRAMID_LEVELS: usize = 3;

fn mse_t(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

/// Pyramid MSE stand-in for LPIPS.
pub fn pyramid_mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (mut x, mut y) = (a.clone(), b.clone());
    let mut total = mse_t(&x, &y)?;
    for _ in 1..PYRAMID_LEVELS {
        x = x.avg_pool2d(2)?;
        y = y.avg_pool2d(2)?;
        total = (total + mse_t(&x, &y)?)?;
    }
    Ok((total / PYRAMID_LEVELS as f64)?)
}

pub fn perceptual_loss(
    relit: &Tensor,
    truth: &Tensor,
    backend: PerceptualBackend,
    external: Option<&dyn PerceptualEvaluator>,
) -> Result<Tensor> {
    match (backend, external) {
        (PerceptualBackend::BuiltinStandIn, _) => pyramid_mse(relit, truth),
        (PerceptualBackend::LpipsExternal, Some(e)) => e.distance(relit, truth),
        (PerceptualBackend::LpipsExternal, None) => Err(Error::Config(
            "LPIPS backend unavailable: no pretrained evaluator was supplied; \
             use perceptual backend \"builtin_stand_in\" or plug one in via PerceptualEvaluator"
                .into(),
        )),
    }
}

/// Batched L1: mean over every element.
pub fn l1_loss_t(relit: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if relit.dims() != truth.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", relit.dims(), truth.dims())));
    }
    Ok((relit - truth)?.abs()?.mean_all()?)
}

/// Batched envmap loss: per-sample sum over all map elements, batch mean.
pub fn envmap_loss_t(estimate: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if estimate.dims() != truth.dims() {
        return Err(Error::Shape(format!("{:?} vs {:?}", estimate.dims(), truth.dims())));
    }
    let n = estimate.dim(0)?;
    let d = ((estimate + 1.0)?.log()? - (truth + 1.0)?.log()?)?;
    Ok((d.sqr()?.sum_all()? / n as f64)?)
}

/// Batched cosine loss on degrees, batch mean.
pub fn cosine_loss_t(truth_deg: &Tensor, predicted_deg: &Tensor) -> Result<Tensor> {
    let d = ((truth_deg - predicted_deg)? * (PI / 180.0))?;
    Ok(d.cos()?.mean_all()?.affine(-1.0, 1.0)?)
}

/// Batched temperature loss on Kelvin, batch mean.
pub fn temperature_loss_t(truth_k: &Tensor, predicted_k: &Tensor) -> Result<Tensor> {
    Ok(((truth_k - predicted_k)? / TEMPERATURE_NORM)?.sqr()?.mean_all()?)
}

/// Batched compact-map loss on `(N, 514)` vectors, batch mean.
pub fn hsl_envmap_loss_t(estimate: &Tensor, truth: &Tensor) -> Result<Tensor> {
    if estimate.dims() != truth.dims() || estimate.dim(1)? != 2 + ENVMAP_PIXELS {
        return Err(Error::Shape(format!(
            "compact maps must both be (N, {}), got {:?} and {:?}",
            2 + ENVMAP_PIXELS,
            estimate.dims(),
            truth.dims()
        )));
    }
    let hue = cosine_loss_t(&(truth.narrow(1, 0, 1)? * 360.0)?, &(estimate.narrow(1, 0, 1)? * 360.0)?)?;
    let sat = (truth.narrow(1, 1, 1)? - estimate.narrow(1, 1, 1)?)?.sqr()?.mean_all()?;
    let bright = envmap_loss_t(&estimate.narrow(1, 2, ENVMAP_PIXELS)?, &truth.narrow(1, 2, ENVMAP_PIXELS)?)?;
    Ok(((hue + sat)? + bright)?)
}

/// Weight of each loss term. Latent losses are deliberately absent: used as
/// objectives they collapse the latent's variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// L1 reconstruction.
    pub reconstruction: f64,
    pub perceptual: f64,
    /// RGB environment-map loss on both I and T estimates.
    pub envmap: f64,
    /// Compact hue/saturation/brightness loss on both estimates.
    pub hsl: f64,
    pub direction: f64,
    pub temperature: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            reconstruction: 0.0,
            perceptual: 0.0,
            envmap: 0.0,
            hsl: 0.0,
            direction: 0.0,
            temperature: 0.0,
            adversarial: 0.0,
        }
    }
}

/// Default adversarial weight when the GAN flag is on.
pub const DEFAULT_ADVERSARIAL_WEIGHT: f64 = 0.01;

impl LossWeights {
    pub fn for_variant(variant: Variant) -> Self {
        let zero = Self::default();
        match variant {
            Variant::IllumPredicter => Self { reconstruction: 1.0, direction: 0.1, temperature: 0.1, ..zero },
            Variant::EnvmapOnly => Self { reconstruction: 1.0, envmap: 0.01, ..zero },
            Variant::EnvmapScene => Self { perceptual: 1.0, hsl: 0.01, ..zero },
        }
    }

    fn all(&self) -> [(&'static str, f64); 7] {
        [
            ("reconstruction", self.reconstruction),
            ("perceptual", self.perceptual),
            ("envmap", self.envmap),
            ("hsl", self.hsl),
            ("direction", self.direction),
            ("temperature", self.temperature),
            ("adversarial", self.adversarial),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in self.all() {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("loss weight {name} must be finite and non-negative, got {w}")));
            }
        }
        if self.all().iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::Config("at least one loss weight must be non-zero".into()));
        }
        Ok(())
    }
}
