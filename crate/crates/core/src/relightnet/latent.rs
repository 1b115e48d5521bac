use candle_core::Tensor;

use super::config::{Variant, VariantConfig};
use crate::error::{Error, Result};

/// Encoder output split into scene and light parts, plus the skip features.
/// All tensors carry a leading batch dimension.
#[derive(Clone, Debug)]
pub struct LatentCode {
    pub variant: Variant,
    /// `(N, scene_channels, h, w)`; `None` for the envmap-only variant.
    pub scene: Option<Tensor>,
    /// `(N, light_channels, h, w)`
    pub light: Tensor,
    pub skips: Vec<Tensor>,
}

impl LatentCode {
    pub(crate) fn split(config: &VariantConfig, latent: Tensor, skips: Vec<Tensor>) -> Result<Self> {
        let channels = latent.dim(1)?;
        if channels != config.latent_channels {
            return Err(Error::Shape(format!(
                "latent has {channels} channels, config expects {}",
                config.latent_channels
            )));
        }
        let scene = if config.scene_channels > 0 {
            Some(latent.narrow(1, 0, config.scene_channels)?)
        } else {
            None
        };
        let light = latent.narrow(1, config.scene_channels, config.light_channels)?;
        Ok(Self {
            variant: config.variant,
            scene,
            light,
            skips,
        })
    }

    /// `[scene | light]` along channels.
    pub fn combined(&self) -> Result<Tensor> {
        Ok(match &self.scene {
            Some(s) => Tensor::cat(&[s, &self.light], 1)?,
            None => self.light.clone(),
        })
    }

    pub fn batch_size(&self) -> Result<usize> {
        Ok(self.light.dim(0)?)
    }

    /// Batch slice `[start, start + len)`.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            variant: self.variant,
            scene: self.scene.as_ref().map(|s| s.narrow(0, start, len)).transpose()?,
            light: self.light.narrow(0, start, len)?,
            skips: self
                .skips
                .iter()
                .map(|s| s.narrow(0, start, len))
                .collect::<candle_core::Result<_>>()?,
        })
    }
}

/// Code handed to the decoder: the input's scene part and skips with the
/// target's light part.
pub fn swap_latent(code_input: &LatentCode, code_target: &LatentCode) -> Result<LatentCode> {
    if code_input.variant != code_target.variant {
        return Err(Error::Config(format!(
            "cannot swap codes of different variants ({:?} vs {:?})",
            code_input.variant, code_target.variant
        )));
    }
    if code_input.light.dims() != code_target.light.dims() {
        return Err(Error::Shape(format!(
            "light parts differ in shape: {:?} vs {:?}",
            code_input.light.dims(),
            code_target.light.dims()
        )));
    }
    Ok(LatentCode {
        variant: code_input.variant,
        scene: code_input.scene.clone(),
        light: code_target.light.clone(),
        skips: code_input.skips.clone(),
    })
}
