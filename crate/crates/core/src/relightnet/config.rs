use serde::{Deserialize, Serialize};

use crate::envmap::{COMPACT_LEN, ENVMAP_PIXELS};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Scene/light split; a small MLP reads direction and temperature off the light part.
    IllumPredicter,
    /// Whole latent is light: weighted pooling into a 16x32 RGB environment map.
    EnvmapOnly,
    /// Scene/light split; the light part pools into the compact hue/saturation/brightness map.
    EnvmapScene,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsample {
    Nearest,
    Bilinear,
}

/// Architecture hyper-parameters of one model variant.
///
/// The latent is laid out channel-wise as `[scene | light]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub variant: Variant,
    pub latent_channels: usize,
    pub scene_channels: usize,
    pub light_channels: usize,
    pub image_size: usize,
    /// Channel count of the first encoder stage; later stages use 2x, 4x, 8x, 8x.
    pub base_width: usize,
    pub upsample: Upsample,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

/// Pooling weights + R, G, B values, one channel per environment-map pixel each.
pub const ENVMAP_ONLY_LATENT: usize = 4 * ENVMAP_PIXELS;
/// Pooling weights + hue, saturation and brightness values.
pub const ENVMAP_SCENE_LIGHT: usize = 2 * COMPACT_LEN;
pub const ENVMAP_SCENE_SCENE: usize = 1024;
pub const ILLUM_PREDICTER_SCENE: usize = 512;
pub const ILLUM_PREDICTER_LIGHT: usize = 8;

impl VariantConfig {
    fn with_split(variant: Variant, scene: usize, light: usize) -> Self {
        Self {
            variant,
            latent_channels: scene + light,
            scene_channels: scene,
            light_channels: light,
            image_size: 256,
            base_width: 64,
            upsample: Upsample::Nearest,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn illum_predicter() -> Self {
        Self::with_split(Variant::IllumPredicter, ILLUM_PREDICTER_SCENE, ILLUM_PREDICTER_LIGHT)
    }

    pub fn envmap_only() -> Self {
        Self::with_split(Variant::EnvmapOnly, 0, ENVMAP_ONLY_LATENT)
    }

    pub fn envmap_scene() -> Self {
        Self::with_split(Variant::EnvmapScene, ENVMAP_SCENE_SCENE, ENVMAP_SCENE_LIGHT)
    }

    pub fn preset(variant: Variant) -> Self {
        match variant {
            Variant::IllumPredicter => Self::illum_predicter(),
            Variant::EnvmapOnly => Self::envmap_only(),
            Variant::EnvmapScene => Self::envmap_scene(),
        }
    }

    pub fn with_image_size(mut self, size: usize) -> Self {
        self.image_size = size;
        self
    }

    pub fn with_base_width(mut self, width: usize) -> Self {
        self.base_width = width;
        self
    }

    /// Spatial side of the latent grid (four stride-2 stages).
    pub fn latent_size(&self) -> usize {
        self.image_size / 16
    }

    /// Channel count per resolution stage, full resolution first.
    pub fn stage_channels(&self) -> [usize; 5] {
        let w = self.base_width;
        [w, 2 * w, 4 * w, 8 * w, 8 * w]
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.scene_channels + self.light_channels != self.latent_channels {
            return fail(format!(
                "scene ({}) + light ({}) channels must equal latent channels ({})",
                self.scene_channels, self.light_channels, self.latent_channels
            ));
        }
        if self.image_size < 16 || !self.image_size.is_multiple_of(16) {
            return fail(format!("image size {} must be a positive multiple of 16", self.image_size));
        }
        if self.base_width == 0 {
            return fail("base width must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps < 0.0 {
            return fail("batch-norm momentum must lie in [0, 1] and eps be non-negative".into());
        }
        match self.variant {
            Variant::EnvmapOnly if self.scene_channels != 0 || self.light_channels != ENVMAP_ONLY_LATENT => fail(format!(
                "envmap_only needs 0 scene and {ENVMAP_ONLY_LATENT} light channels"
            )),
            Variant::EnvmapScene if self.light_channels != ENVMAP_SCENE_LIGHT => fail(format!(
                "envmap_scene needs {ENVMAP_SCENE_LIGHT} light channels"
            )),
            Variant::EnvmapScene if self.scene_channels == 0 => fail("envmap_scene needs a scene part".into()),
            Variant::IllumPredicter if self.light_channels == 0 => fail("illum_predicter needs at least one light channel".into()),
            _ => Ok(()),
        }
    }

    /// Input width of the illumination head: flattened light part.
    pub fn head_inputs(&self) -> usize {
        self.light_channels * self.latent_size() * self.latent_size()
    }
}
