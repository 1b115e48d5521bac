use candle_core::Tensor;
use candle_nn::VarBuilder;

use super::config::VariantConfig;
use super::layers::{bn_config, Activation, ConvBlock, ConvSpec, LayerKind};

/// Eleven weight layers: a full-resolution stem, four downsampling stages
/// (stride-2 conv then stride-1 conv), and two 1x1 convs that widen the
/// 1/16-resolution features to the latent channel count. The last layer is
/// linear so the latent is unconstrained.
#[derive(Clone, Debug)]
pub struct Encoder {
    stem: ConvBlock,
    stages: Vec<(ConvBlock, ConvBlock)>,
    expand: ConvBlock,
    latent: ConvBlock,
}

pub struct EncoderOutput {
    pub latent: Tensor,
    /// Stage outputs at 1/2, 1/4 and 1/8 resolution.
    pub skips: Vec<Tensor>,
}

impl Encoder {
    pub fn new(config: &VariantConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let bn = bn_config(config.bn_momentum, config.bn_eps);
        let c = config.stage_channels();
        let stem = ConvBlock::new(ConvSpec::new(3, c[0], 3, 1), bn, vb.pp("stem"))?;
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let vb = vb.pp(format!("stage{}", s + 1));
            let down = ConvBlock::new(ConvSpec::new(c[s], c[s + 1], 3, 2), bn, vb.pp("down"))?;
            let conv = ConvBlock::new(ConvSpec::new(c[s + 1], c[s + 1], 3, 1), bn, vb.pp("conv"))?;
            stages.push((down, conv));
        }
        let expand = ConvBlock::new(ConvSpec::new(c[4], config.latent_channels, 1, 1), bn, vb.pp("expand"))?;
        let latent = ConvBlock::new(
            ConvSpec::new(config.latent_channels, config.latent_channels, 1, 1).plain(Activation::Identity),
            bn,
            vb.pp("latent"),
        )?;
        Ok(Self {
            stem,
            stages,
            expand,
            latent,
        })
    }

    pub fn forward_t(&self, x: &Tensor, train: bool) -> candle_core::Result<EncoderOutput> {
        let mut h = self.stem.forward_t(x, train)?;
        let mut skips = Vec::with_capacity(3);
        for (i, (down, conv)) in self.stages.iter().enumerate() {
            h = conv.forward_t(&down.forward_t(&h, train)?, train)?;
            if i < 3 {
                skips.push(h.clone());
            }
        }
        let latent = self.latent.forward_t(&self.expand.forward_t(&h, train)?, train)?;
        Ok(EncoderOutput { latent, skips })
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        let mut out = vec![self.stem.kind().clone()];
        for (a, b) in &self.stages {
            out.push(a.kind().clone());
            out.push(b.kind().clone());
        }
        out.push(self.expand.kind().clone());
        out.push(self.latent.kind().clone());
        out
    }
}
