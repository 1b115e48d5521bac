use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discriminator::{DiscriminatorConfig, DiscriminatorMode};
use crate::error::{Error, Result};
use crate::metrics::EvalLimits;
use crate::objectives::{LossWeights, PerceptualBackend};
use crate::relightnet::{Variant, VariantConfig};

/// Adam hyper-parameters (no weight decay).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub model: VariantConfig,
    /// Defaults to the variant's weights when absent.
    #[serde(default)]
    pub weights: Option<LossWeights>,
    /// Alternate discriminator and generator updates.
    #[serde(default)]
    pub adversarial: bool,
    #[serde(default)]
    pub discriminator: DiscriminatorConfig,
    #[serde(default = "default_perceptual")]
    pub perceptual: PerceptualBackend,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    pub steps: usize,
    /// Distinct training pairs drawn up front; defaults to `steps * batch_size`.
    #[serde(default)]
    pub pair_budget: Option<usize>,
    /// Scenes held out for evaluation (taken from the end of the scene list).
    #[serde(default)]
    pub eval_scenes: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Dataset manifest, resolved against the config file's directory.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    /// Write `step_<n>.png` every this many steps (0: never).
    #[serde(default)]
    pub image_every: usize,
    /// Intermediate checkpoints every this many steps (0: final only).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Evaluation reports every this many steps (0: never).
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default)]
    pub eval_limits: EvalLimits,
}

fn default_perceptual() -> PerceptualBackend {
    PerceptualBackend::BuiltinStandIn
}

fn default_batch() -> usize {
    8
}

impl TrainingConfig {
    pub fn new(model: VariantConfig, steps: usize, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            model,
            weights: None,
            adversarial: false,
            discriminator: DiscriminatorConfig::default(),
            perceptual: default_perceptual(),
            optimizer: OptimizerConfig::default(),
            batch_size: default_batch(),
            steps,
            pair_budget: None,
            eval_scenes: 0,
            seed: 0,
            output_dir: output_dir.into(),
            manifest: None,
            image_every: 0,
            checkpoint_every: 0,
            eval_every: 0,
            eval_limits: EvalLimits::default(),
        }
    }

    pub fn resolved_weights(&self) -> LossWeights {
        self.weights
            .clone()
            .unwrap_or_else(|| LossWeights::for_variant(self.model.variant))
    }

    /// Read a JSON config; relative paths inside it are taken relative to the file.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(m) = &cfg.manifest {
            if m.is_relative() {
                cfg.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let w = self.resolved_weights();
        w.validate()?;
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if !(self.optimizer.learning_rate.is_finite() && self.optimizer.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.steps == 0 {
            return fail("steps must be at least 1");
        }
        let v = self.model.variant;
        if w.envmap > 0.0 && v != Variant::EnvmapOnly {
            return fail("envmap weight needs the envmap_only variant");
        }
        if w.hsl > 0.0 && v != Variant::EnvmapScene {
            return fail("hsl weight needs the envmap_scene variant");
        }
        if (w.direction > 0.0 || w.temperature > 0.0) && v != Variant::IllumPredicter {
            return fail("direction/temperature weights need the illum_predicter variant");
        }
        if w.perceptual > 0.0 && self.perceptual == PerceptualBackend::LpipsExternal {
            return fail(
                "LPIPS backend unavailable in the trainer: no pretrained evaluator is bundled; \
                 set \"perceptual\": \"builtin_stand_in\"",
            );
        }
        if w.adversarial > 0.0 && !self.adversarial {
            return fail("adversarial weight set but the adversarial flag is off");
        }
        if self.adversarial && self.discriminator.mode == DiscriminatorMode::Conditional {
            return fail("conditional discriminator is not implemented");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let cfg = TrainingConfig::new(VariantConfig::illum_predicter(), 10, "runs/a");
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainingConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let minimal = r#"{"model": {"variant": "envmap_only", "latent_channels": 2048, "scene_channels": 0,
            "light_channels": 2048, "image_size": 128, "base_width": 8, "upsample": "nearest",
            "bn_momentum": 0.1, "bn_eps": 1e-5}, "steps": 3, "output_dir": "out"}"#;
        let m: TrainingConfig = serde_json::from_str(minimal).unwrap();
        assert_eq!(m.batch_size, 8);
        assert_eq!(m.optimizer.learning_rate, 1e-4);
        assert_eq!(m.resolved_weights(), LossWeights::for_variant(Variant::EnvmapOnly));
        m.validate().unwrap();
    }

    #[test]
    fn inconsistent_configs_rejected() {
        let mut cfg = TrainingConfig::new(VariantConfig::envmap_scene(), 10, "x");
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainingConfig::new(VariantConfig::envmap_scene(), 10, "x");
        cfg.weights = Some(LossWeights { envmap: 1.0, ..LossWeights::default() });
        assert!(cfg.validate().is_err());
        let mut cfg = TrainingConfig::new(VariantConfig::envmap_scene(), 10, "x");
        cfg.perceptual = PerceptualBackend::LpipsExternal;
        assert!(cfg.validate().is_err());
        assert!(serde_json::from_str::<TrainingConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
