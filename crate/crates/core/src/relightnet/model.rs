use candle_core::{DType, Device, Tensor};
use candle_nn::{VarBuilder, VarMap};

use super::config::{Variant, VariantConfig};
use super::decoder::Decoder;
use super::encoder::Encoder;
use super::head::{predictions_from_tensor, IlluminationHead, IlluminationPrediction};
use super::latent::{swap_latent, LatentCode};
use super::layers::LayerKind;
use super::params::{init_deterministic, parameter_count};
use super::pool::envmap_estimate;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// He gain for LeakyReLU(0.2).
fn leaky_gain() -> f64 {
    (2.0 / (1.0 + 0.2f64.powi(2))).sqrt()
}

/// Layers followed by no rectifier get unit gain.
fn init_gain(name: &str) -> f64 {
    let linear_out = ["encoder.latent.", "decoder.out.", "head.fc3."];
    if linear_out.iter().any(|p| name.starts_with(p)) {
        1.0
    } else {
        leaky_gain()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub encoder: Vec<LayerKind>,
    pub decoder: Vec<LayerKind>,
    pub head: Vec<LayerKind>,
}

impl Architecture {
    pub fn transposed_conv_count(&self) -> usize {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .filter(|k| matches!(k, LayerKind::TransposedConv { .. }))
            .count()
    }
}

/// Everything a relighting forward pass produces. Batched tensors: the
/// relit image is `(N, 3, S, S)`; envmap estimates are `(N, 3, 16, 32)` for
/// envmap-only or `(N, 514)` for envmap+scene; predictions are `(N, 2)`.
pub struct RelightOutput {
    pub relit: Tensor,
    pub code_input: LatentCode,
    pub code_target: LatentCode,
    pub envmap_input: Option<Tensor>,
    pub envmap_target: Option<Tensor>,
    pub prediction_input: Option<Tensor>,
    pub prediction_target: Option<Tensor>,
}

/// Siamese encoder, skip-connected decoder and the variant's light head.
pub struct RelightNet {
    config: VariantConfig,
    encoder: Encoder,
    decoder: Decoder,
    head: Option<IlluminationHead>,
    varmap: VarMap,
    device: Device,
}

impl RelightNet {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: VariantConfig, device: &Device, seed: u64) -> Result<Self> {
        let net = Self::uninitialised(config, device)?;
        init_deterministic(&net.varmap, seed, init_gain)?;
        Ok(net)
    }

    /// Model with candle's default initial values; used before loading a checkpoint.
    pub fn uninitialised(config: VariantConfig, device: &Device) -> Result<Self> {
        config.validate()?;
        let varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
        let encoder = Encoder::new(&config, vb.pp("encoder"))?;
        let decoder = Decoder::new(&config, vb.pp("decoder"))?;
        let head = match config.variant {
            Variant::IllumPredicter => Some(IlluminationHead::new(config.head_inputs(), vb.pp("head"))?),
            _ => None,
        };
        Ok(Self {
            config,
            encoder,
            decoder,
            head,
            varmap,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &VariantConfig {
        &self.config
    }

    pub fn varmap(&self) -> &VarMap {
        &self.varmap
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.varmap)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            encoder: self.encoder.layers(),
            decoder: self.decoder.layers(),
            head: self.head.as_ref().map(|h| h.layers()).unwrap_or_default(),
        }
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let s = self.config.image_size;
        match images.dims() {
            [_, 3, h, w] if *h == s && *w == s => Ok(()),
            dims => Err(Error::Shape(format!("expected (N, 3, {s}, {s}) images, got {dims:?}"))),
        }
    }

    /// `(N, 3, S, S)` images in `[0, 1]` -> latent code.
    pub fn encode(&self, images: &Tensor, train: bool) -> Result<LatentCode> {
        self.check_images(images)?;
        let out = self.encoder.forward_t(images, train)?;
        LatentCode::split(&self.config, out.latent, out.skips)
    }

    pub fn decode(&self, code: &LatentCode, train: bool) -> Result<Tensor> {
        if code.variant != self.config.variant {
            return Err(Error::Config(format!(
                "code from {:?} cannot be decoded by a {:?} model",
                code.variant, self.config.variant
            )));
        }
        if code.skips.len() != 3 {
            return Err(Error::Shape(format!("decoder needs 3 skip grids, got {}", code.skips.len())));
        }
        Ok(self.decoder.forward_t(&code.combined()?, &code.skips, train)?)
    }

    /// Environment-map estimate from a light part; `None` for the
    /// illumination-predicter variant.
    pub fn envmap_estimate(&self, light: &Tensor) -> Result<Option<Tensor>> {
        match self.config.variant {
            Variant::IllumPredicter => Ok(None),
            v => envmap_estimate(light, v).map(Some),
        }
    }

    /// `(N, 2)` `[degrees, kelvin]` from a light part.
    pub fn predict_illumination(&self, light: &Tensor) -> Result<Tensor> {
        match &self.head {
            Some(h) => Ok(h.forward(light)?),
            None => Err(Error::Config(format!(
                "{:?} models have no illumination head",
                self.config.variant
            ))),
        }
    }

    /// Inference-mode illumination estimate for one image; `None` when the
    /// variant has no head.
    pub fn illumination_of(&self, image: &RgbImage) -> Result<Option<IlluminationPrediction>> {
        if self.head.is_none() {
            return Ok(None);
        }
        let code = self.encode(&RgbImage::batch_to_tensor(&[image], &self.device)?, false)?;
        let p = predictions_from_tensor(&self.predict_illumination(&code.light)?)?;
        Ok(p.into_iter().next())
    }

    /// Relight each input under its target's illumination. Inputs and
    /// targets go through the encoder as one batch.
    pub fn relight(&self, input: &Tensor, target: &Tensor, train: bool) -> Result<RelightOutput> {
        self.check_images(input)?;
        self.check_images(target)?;
        let n = input.dim(0)?;
        if target.dim(0)? != n {
            return Err(Error::Shape(format!("{n} inputs but {} targets", target.dim(0)?)));
        }
        let both = self.encode(&Tensor::cat(&[input, target], 0)?, train)?;
        let code_input = both.narrow_batch(0, n)?;
        let code_target = both.narrow_batch(n, n)?;
        let relit = self.decode(&swap_latent(&code_input, &code_target)?, train)?;

        let (mut envmap_input, mut envmap_target) = (None, None);
        if let Some(e) = self.envmap_estimate(&both.light)? {
            envmap_input = Some(e.narrow(0, 0, n)?);
            envmap_target = Some(e.narrow(0, n, n)?);
        }
        let (mut prediction_input, mut prediction_target) = (None, None);
        if self.head.is_some() {
            let p = self.predict_illumination(&both.light)?;
            prediction_input = Some(p.narrow(0, 0, n)?);
            prediction_target = Some(p.narrow(0, n, n)?);
        }
        Ok(RelightOutput {
            relit,
            code_input,
            code_target,
            envmap_input,
            envmap_target,
            prediction_input,
            prediction_target,
        })
    }
}
