//! Weighted pooling of the light latent into an environment-map estimate.
//!
//! Half of the light channels are per-pixel pooling weights, the other half
//! carry values. Every output element is `sum over the spatial grid of
//! weight * value` for its own (weight, value) channel pair, so each
//! latent-grid cell votes for every environment-map pixel.

use candle_core::Tensor;

use super::config::Variant;
use super::layers::{sigmoid, spatial_softmax};
use crate::envmap::{COMPACT_LEN, ENVMAP_HEIGHT, ENVMAP_PIXELS, ENVMAP_WIDTH};
use crate::error::{Error, Result};

fn pool_pairs(weights: &Tensor, values: &Tensor) -> Result<Tensor> {
    Ok((weights * values)?.sum((2, 3))?)
}

/// Raw weighted pooling of a `(N, C, h, w)` light tensor.
///
/// * envmap-only: `C = 2048` split as `[weights, R, G, B]` (512 each) ->
///   `(N, 3, 16, 32)` image.
/// * envmap+scene: `C = 1028` split as `[weights(514), values(514)]` ->
///   `(N, 514)` vector `[hue, saturation, brightness...]`.
pub fn weighted_pool(light: &Tensor, variant: Variant) -> Result<Tensor> {
    let (n, c, _, _) = light.dims4()?;
    match variant {
        Variant::EnvmapOnly => {
            if c != 4 * ENVMAP_PIXELS {
                return Err(Error::Shape(format!(
                    "envmap-only pooling needs {} channels, got {c}",
                    4 * ENVMAP_PIXELS
                )));
            }
            let weights = light.narrow(1, 0, ENVMAP_PIXELS)?;
            let channels = (1..4)
                .map(|k| pool_pairs(&weights, &light.narrow(1, k * ENVMAP_PIXELS, ENVMAP_PIXELS)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(Tensor::stack(&channels, 1)?.reshape((n, 3, ENVMAP_HEIGHT, ENVMAP_WIDTH))?)
        }
        Variant::EnvmapScene => {
            if c != 2 * COMPACT_LEN {
                return Err(Error::Shape(format!(
                    "compact pooling needs {} channels, got {c}",
                    2 * COMPACT_LEN
                )));
            }
            pool_pairs(&light.narrow(1, 0, COMPACT_LEN)?, &light.narrow(1, COMPACT_LEN, COMPACT_LEN)?)
        }
        Variant::IllumPredicter => Err(Error::Config(
            "the illumination-predicter variant has no environment-map head".into(),
        )),
    }
}

/// Environment-map estimate used in training: weights pass through a
/// softmax over the spatial grid (each output is a convex combination of
/// votes) and values through a sigmoid, so estimates live in `[0, 1]`.
pub fn envmap_estimate(light: &Tensor, variant: Variant) -> Result<Tensor> {
    let c = light.dim(1)?;
    let half = match variant {
        Variant::EnvmapOnly => ENVMAP_PIXELS,
        Variant::EnvmapScene => c / 2,
        Variant::IllumPredicter => return weighted_pool(light, variant),
    };
    if c < half {
        return weighted_pool(light, variant);
    }
    let weights = spatial_softmax(&light.narrow(1, 0, half)?)?;
    let values = sigmoid(&light.narrow(1, half, c - half)?)?;
    weighted_pool(&Tensor::cat(&[&weights, &values], 1)?, variant)
}
