use candle_core::Tensor;
use candle_nn::VarBuilder;

use super::config::{Upsample, VariantConfig};
use super::layers::{bn_config, cat_channels, sigmoid, upsample2x, Activation, ConvBlock, ConvSpec, LayerKind};

/// Mirror of the encoder. Every resolution increase is a fixed x2 upsample
/// followed by a 3x3 convolution (no transposed convolutions); the 1/8, 1/4
/// and 1/2 resolution stages concatenate the matching encoder skips. The
/// output passes through a sigmoid so pixels stay in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Decoder {
    reduce: ConvBlock,
    bottleneck: ConvBlock,
    /// `(conv after upsample, conv after skip concat)`; the last stage has no skip.
    stages: Vec<(ConvBlock, ConvBlock)>,
    out: ConvBlock,
    upsample: Upsample,
}

impl Decoder {
    pub fn new(config: &VariantConfig, vb: VarBuilder) -> candle_core::Result<Self> {
        let bn = bn_config(config.bn_momentum, config.bn_eps);
        let c = config.stage_channels();
        let reduce = ConvBlock::new(ConvSpec::new(config.latent_channels, c[4], 1, 1), bn, vb.pp("reduce"))?;
        let bottleneck = ConvBlock::new(ConvSpec::new(c[4], c[4], 3, 1), bn, vb.pp("bottleneck"))?;
        let mut stages = Vec::with_capacity(4);
        for (k, s) in (0..4).rev().enumerate() {
            let vb = vb.pp(format!("stage{}", k + 1));
            let up = ConvBlock::new(ConvSpec::new(c[s + 1], c[s], 3, 1), bn, vb.pp("up"))?;
            // the three inner stages fuse a skip of matching width
            let fuse_in = if s > 0 { 2 * c[s] } else { c[s] };
            let fuse = ConvBlock::new(ConvSpec::new(fuse_in, c[s], 3, 1), bn, vb.pp("fuse"))?;
            stages.push((up, fuse));
        }
        let out = ConvBlock::new(ConvSpec::new(c[0], 3, 3, 1).plain(Activation::Identity), bn, vb.pp("out"))?;
        Ok(Self {
            reduce,
            bottleneck,
            stages,
            out,
            upsample: config.upsample,
        })
    }

    /// `skips` ordered as produced by the encoder (1/2, 1/4, 1/8).
    pub fn forward_t(&self, latent: &Tensor, skips: &[Tensor], train: bool) -> candle_core::Result<Tensor> {
        if skips.len() != 3 {
            candle_core::bail!("decoder needs 3 skip tensors, got {}", skips.len());
        }
        let mut h = self.bottleneck.forward_t(&self.reduce.forward_t(latent, train)?, train)?;
        for (k, (up, fuse)) in self.stages.iter().enumerate() {
            h = up.forward_t(&upsample2x(&h, self.upsample)?, train)?;
            if k < 3 {
                h = cat_channels(&h, &skips[2 - k])?;
            }
            h = fuse.forward_t(&h, train)?;
        }
        sigmoid(&self.out.forward_t(&h, train)?)
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        let mut out = vec![self.reduce.kind().clone(), self.bottleneck.kind().clone()];
        for (a, b) in &self.stages {
            out.push(a.kind().clone());
            out.push(b.kind().clone());
        }
        out.push(self.out.kind().clone());
        out
    }
}
