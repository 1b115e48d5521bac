//! Training and evaluation loops, logging and checkpoints.

mod checkpoint;
mod config;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{enumerate_pairs, Illumination, PairKey, PairSet, RelightingTriple, SceneIndex, TripleLoader};
use crate::discriminator::{discriminator_loss_t, generator_loss_t, Discriminator};
use crate::envmap::{generate_envmap_hsl, generate_envmap_rgb, ENVMAP_HEIGHT, ENVMAP_WIDTH};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::metrics::{eval_subsets, evaluate, score_l2, EvalLimits, EvalSubset, MetricReport};
use crate::objectives::{
    cosine_loss, cosine_loss_t, envmap_loss_t, hsl_envmap_loss_t, l1_loss_t, perceptual_loss, temperature_loss,
    temperature_loss_t, LossWeights,
};
use crate::relightnet::params::trainable_vars;
use crate::relightnet::{predictions_from_tensor, RelightNet, VariantConfig};

pub use checkpoint::{load_checkpoint, save_checkpoint, save_identity_checkpoint, Checkpoint};
pub use config::{OptimizerConfig, TrainingConfig};

/// One line of the scalar log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Weighted sum minimised by the generator update.
    pub total: f64,
    /// Unweighted loss terms.
    pub losses: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_loss: Option<f64>,
    pub lr: f64,
    pub wall_time: f64,
}

/// Exponential moving average: `s[0] = v[0]`, `s[t] = f s[t-1] + (1 - f) v[t]`.
pub fn smooth(values: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut s = None;
    for &v in values {
        let next = match s {
            None => v,
            Some(prev) => factor * prev + (1.0 - factor) * v,
        };
        s = Some(next);
        out.push(next);
    }
    out
}

pub const SMOOTHING: f64 = 0.99;

/// Pairs drawn once (the budget) and visited in shuffled rounds; a pair
/// comes back only after every other pair of the budget has been used.
pub struct PairSchedule {
    budget: Vec<PairKey>,
    order: Vec<usize>,
    cursor: usize,
    round: u64,
    seed: u64,
}

impl PairSchedule {
    pub fn new(pairs: &PairSet, budget: usize, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Config("pair budget must be at least 1".into()));
        }
        let budget = pairs.sample(budget, seed)?;
        let mut s = Self {
            order: (0..budget.len()).collect(),
            budget,
            cursor: 0,
            round: 0,
            seed,
        };
        s.shuffle();
        Ok(s)
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (self.round + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        self.order.shuffle(&mut rng);
    }

    pub fn budget(&self) -> &[PairKey] {
        &self.budget
    }

    pub fn next_batch(&mut self, n: usize) -> Vec<PairKey> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.round += 1;
                self.cursor = 0;
                self.shuffle();
            }
            out.push(self.budget[self.order[self.cursor]]);
            self.cursor += 1;
        }
        out
    }
}

struct EnvmapTruth {
    rgb: Tensor,
    compact: Tensor,
}

/// Step-by-step training state.
pub struct Trainer {
    config: TrainingConfig,
    weights: LossWeights,
    net: RelightNet,
    discriminator: Option<Discriminator>,
    opt_g: AdamW,
    opt_d: Option<AdamW>,
    loader: TripleLoader,
    train_pairs: PairSet,
    eval_index: Option<Arc<SceneIndex>>,
    schedule: PairSchedule,
    envmaps: HashMap<Illumination, EnvmapTruth>,
    step: usize,
    started: Instant,
    last_batch: Option<(Vec<RelightingTriple>, Vec<RgbImage>)>,
    snapshot_dir: Option<PathBuf>,
    device: Device,
}

fn adam(vars: Vec<candle_core::Var>, o: &OptimizerConfig) -> Result<AdamW> {
    Ok(AdamW::new(
        vars,
        ParamsAdamW {
            lr: o.learning_rate,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: 0.0,
        },
    )?)
}

fn envmap_truths(device: &Device) -> Result<HashMap<Illumination, EnvmapTruth>> {
    Illumination::all()
        .map(|il| {
            let rgb = generate_envmap_rgb(&il).to_channel_major();
            let rgb = Tensor::from_vec(rgb, (3, ENVMAP_HEIGHT, ENVMAP_WIDTH), device)?;
            let compact = Tensor::new(generate_envmap_hsl(&il).to_vec().as_slice(), device)?;
            Ok((il, EnvmapTruth { rgb, compact }))
        })
        .collect()
}

/// Split off the last `eval_scenes` scenes for evaluation.
pub fn split_index(index: &SceneIndex, eval_scenes: usize) -> Result<(Arc<SceneIndex>, Option<Arc<SceneIndex>>)> {
    let scenes = index.scenes().to_vec();
    if eval_scenes == 0 {
        return Ok((Arc::new(index.select_scenes(&scenes, true)?), None));
    }
    if eval_scenes >= scenes.len() {
        return Err(Error::Config(format!(
            "cannot hold out {eval_scenes} of {} scenes for evaluation",
            scenes.len()
        )));
    }
    let held = scenes[scenes.len() - eval_scenes..].to_vec();
    Ok((
        Arc::new(index.select_scenes(&held, false)?),
        Some(Arc::new(index.select_scenes(&held, true)?)),
    ))
}

impl Trainer {
    pub fn new(config: TrainingConfig, index: &SceneIndex) -> Result<Self> {
        config.validate()?;
        let weights = config.resolved_weights();
        let device = Device::Cpu;
        let (train_index, eval_index) = split_index(index, config.eval_scenes)?;
        if train_index.scene_count() < 2 {
            return Err(Error::Config("restricted pairing needs ≥ 2 scenes".into()));
        }
        let train_pairs = enumerate_pairs(train_index.clone(), true);
        let budget = config
            .pair_budget
            .unwrap_or(config.steps.saturating_mul(config.batch_size))
            .min(train_pairs.len() as usize)
            .max(1);
        let schedule = PairSchedule::new(&train_pairs, budget, config.seed)?;
        let net = RelightNet::new(config.model.clone(), &device, config.seed)?;
        let opt_g = adam(trainable_vars(net.varmap()), &config.optimizer)?;
        let (discriminator, opt_d) = if config.adversarial {
            let d = Discriminator::new(config.discriminator.clone(), &device, config.seed.wrapping_add(1))?;
            let o = adam(trainable_vars(d.varmap()), &config.optimizer)?;
            (Some(d), Some(o))
        } else {
            (None, None)
        };
        Ok(Self {
            loader: TripleLoader::new(train_index, config.model.image_size),
            weights,
            net,
            discriminator,
            opt_g,
            opt_d,
            train_pairs,
            eval_index,
            schedule,
            envmaps: envmap_truths(&device)?,
            step: 0,
            started: Instant::now(),
            last_batch: None,
            snapshot_dir: None,
            config,
            device,
        })
    }

    pub fn net(&self) -> &RelightNet {
        &self.net
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_ref()
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn weights(&self) -> &LossWeights {
        &self.weights
    }

    pub fn budget(&self) -> &[PairKey] {
        self.schedule.budget()
    }

    pub fn train_pairs(&self) -> &PairSet {
        &self.train_pairs
    }

    pub fn eval_index(&self) -> Option<&Arc<SceneIndex>> {
        self.eval_index.as_ref()
    }

    /// Where a diagnostic snapshot goes if a loss turns non-finite.
    pub fn set_snapshot_dir(&mut self, dir: impl Into<PathBuf>) {
        self.snapshot_dir = Some(dir.into());
    }

    fn truth_stack(&self, illums: &[Illumination], compact: bool) -> Result<Tensor> {
        let ts: Vec<&Tensor> = illums
            .iter()
            .map(|il| {
                let e = &self.envmaps[il];
                if compact {
                    &e.compact
                } else {
                    &e.rgb
                }
            })
            .collect();
        Ok(Tensor::stack(&ts, 0)?)
    }

    fn labels(&self, illums: &[Illumination]) -> Result<(Tensor, Tensor)> {
        let deg: Vec<f32> = illums.iter().map(|i| i.direction_degrees() as f32).collect();
        let kel: Vec<f32> = illums.iter().map(|i| i.temperature.kelvin() as f32).collect();
        Ok((Tensor::new(deg.as_slice(), &self.device)?, Tensor::new(kel.as_slice(), &self.device)?))
    }

    /// One generator update (preceded by one discriminator update when
    /// adversarial training is on).
    pub fn step(&mut self) -> Result<StepRecord> {
        let keys = self.schedule.next_batch(self.config.batch_size);
        let triples = keys.iter().map(|k| self.loader.load(*k)).collect::<Result<Vec<_>>>()?;
        let refs = |f: fn(&RelightingTriple) -> &RgbImage| triples.iter().map(f).collect::<Vec<_>>();
        let input = RgbImage::batch_to_tensor(&refs(|t| &t.input), &self.device)?;
        let target = RgbImage::batch_to_tensor(&refs(|t| &t.target), &self.device)?;
        let truth = RgbImage::batch_to_tensor(&refs(|t| &t.ground_truth), &self.device)?;
        let illum_i: Vec<Illumination> = triples.iter().map(|t| t.illum_input).collect();
        let illum_t: Vec<Illumination> = triples.iter().map(|t| t.illum_target).collect();

        let out = self.net.relight(&input, &target, true)?;
        let w = self.weights.clone();
        let mut terms: Vec<(&'static str, f64, Tensor)> = Vec::new();
        if w.reconstruction > 0.0 {
            terms.push(("reconstruction", w.reconstruction, l1_loss_t(&out.relit, &truth)?));
        }
        if w.perceptual > 0.0 {
            terms.push(("perceptual", w.perceptual, perceptual_loss(&out.relit, &truth, self.config.perceptual, None)?));
        }
        if w.envmap > 0.0 || w.hsl > 0.0 {
            let compact = w.hsl > 0.0;
            let (ei, et) = match (&out.envmap_input, &out.envmap_target) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Config("environment-map loss needs an envmap variant".into())),
            };
            let (ti, tt) = (self.truth_stack(&illum_i, compact)?, self.truth_stack(&illum_t, compact)?);
            let loss = if compact {
                (hsl_envmap_loss_t(ei, &ti)? + hsl_envmap_loss_t(et, &tt)?)?
            } else {
                (envmap_loss_t(ei, &ti)? + envmap_loss_t(et, &tt)?)?
            };
            terms.push(if compact { ("hsl", w.hsl, loss) } else { ("envmap", w.envmap, loss) });
        }
        if w.direction > 0.0 || w.temperature > 0.0 {
            let (pi, pt) = match (&out.prediction_input, &out.prediction_target) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::Config("illumination losses need the illum_predicter variant".into())),
            };
            let (di, ki) = self.labels(&illum_i)?;
            let (dt, kt) = self.labels(&illum_t)?;
            let col = |p: &Tensor, c: usize| p.narrow(1, c, 1).and_then(|x| x.squeeze(1));
            if w.direction > 0.0 {
                let l = (cosine_loss_t(&di, &col(pi, 0)?)? + cosine_loss_t(&dt, &col(pt, 0)?)?)?;
                terms.push(("direction", w.direction, l));
            }
            if w.temperature > 0.0 {
                let l = (temperature_loss_t(&ki, &col(pi, 1)?)? + temperature_loss_t(&kt, &col(pt, 1)?)?)?;
                terms.push(("temperature", w.temperature, l));
            }
        }

        let mut d_loss_value = None;
        if let (Some(d), Some(opt_d)) = (&self.discriminator, &mut self.opt_d) {
            let real = d.forward_t(&truth, true)?;
            let fake = d.forward_t(&out.relit.detach(), true)?;
            let d_loss = discriminator_loss_t(&real, &fake)?;
            let v = d_loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
            if !v.is_finite() {
                let detail = format!("discriminator loss {v}");
                self.snapshot(&triples, &out.relit, &keys, &BTreeMap::new(), &detail)?;
                return Err(Error::NonFinite { step: self.step, detail });
            }
            opt_d.backward_step(&d_loss)?;
            d_loss_value = Some(v);
            let weight = if w.adversarial > 0.0 { w.adversarial } else { crate::objectives::DEFAULT_ADVERSARIAL_WEIGHT };
            terms.push(("adversarial", weight, generator_loss_t(&d.forward_t(&out.relit, true)?)?));
        }

        let mut losses = BTreeMap::new();
        let mut total: Option<Tensor> = None;
        for (name, weight, t) in &terms {
            losses.insert((*name).to_owned(), t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?);
            let scaled = (t * *weight)?;
            total = Some(match total {
                None => scaled,
                Some(acc) => (acc + scaled)?,
            });
        }
        let total = total.ok_or_else(|| Error::Config("no active loss term".into()))?;
        let total_value = total.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !total_value.is_finite() || losses.values().any(|v| !v.is_finite()) {
            let detail = format!("losses {losses:?}");
            self.snapshot(&triples, &out.relit, &keys, &losses, &detail)?;
            return Err(Error::NonFinite { step: self.step, detail });
        }
        self.opt_g.backward_step(&total)?;

        let record = StepRecord {
            step: self.step,
            total: total_value,
            losses,
            d_loss: d_loss_value,
            lr: self.config.optimizer.learning_rate,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.last_batch = Some((triples, RgbImage::batch_from_tensor(&out.relit.detach())?));
        self.step += 1;
        Ok(record)
    }

    fn snapshot(
        &self,
        triples: &[RelightingTriple],
        relit: &Tensor,
        keys: &[PairKey],
        losses: &BTreeMap<String, f64>,
        detail: &str,
    ) -> Result<()> {
        let Some(root) = &self.snapshot_dir else { return Ok(()) };
        let dir = root.join(format!("nonfinite_step_{}", self.step));
        std::fs::create_dir_all(&dir)?;
        let relit = RgbImage::batch_from_tensor(&relit.detach())?;
        batch_grid(triples, &relit, triples.len())?.save_png(&dir.join("batch.png"))?;
        let info = serde_json::json!({
            "step": self.step,
            "pairs": keys,
            "losses": losses.iter().map(|(k, v)| (k.clone(), v.to_string())).collect::<BTreeMap<_, _>>(),
            "detail": detail,
        });
        std::fs::write(dir.join("batch.json"), serde_json::to_string_pretty(&info)?)?;
        Ok(())
    }

    /// `I`, `T`, `G`, `Ĝ` rows of the last batch, at most `cols` columns.
    pub fn preview(&self, cols: usize) -> Result<Option<RgbImage>> {
        match &self.last_batch {
            Some((triples, relit)) => Ok(Some(batch_grid(triples, relit, cols)?)),
            None => Ok(None),
        }
    }

    /// Evaluation over the held-out scenes plus a sample of training pairs.
    pub fn evaluate(&self, limits: &EvalLimits) -> Result<MetricReport> {
        let mut subsets = match &self.eval_index {
            Some(e) => eval_subsets(e.clone(), None),
            None => Vec::new(),
        };
        subsets.push((EvalSubset::TrainSample, self.train_pairs.clone()));
        evaluate(&self.net, &subsets, limits, None)
    }
}

/// Four rows (input, target, ground truth, relit), one column per pair.
pub fn batch_grid(triples: &[RelightingTriple], relit: &[RgbImage], cols: usize) -> Result<RgbImage> {
    let n = cols.min(triples.len()).min(relit.len()).max(1);
    let mut tiles: Vec<&RgbImage> = Vec::with_capacity(4 * n);
    tiles.extend(triples.iter().take(n).map(|t| &t.input));
    tiles.extend(triples.iter().take(n).map(|t| &t.target));
    tiles.extend(triples.iter().take(n).map(|t| &t.ground_truth));
    tiles.extend(relit.iter().take(n));
    RgbImage::grid(&tiles, n, 2)
}

/// Inference-mode diagnostics over a fixed set of pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub pairs: usize,
    pub l1: f64,
    /// Mean score over pairs where it is defined.
    pub score_l2: Option<f64>,
    /// Mean cosine loss per prediction (inputs and targets).
    pub direction: Option<f64>,
    /// Mean temperature loss per prediction (inputs and targets).
    pub temperature: Option<f64>,
}

pub fn pair_diagnostics(net: &RelightNet, index: &Arc<SceneIndex>, keys: &[PairKey], batch_size: usize) -> Result<PairDiagnostics> {
    let mut loader = TripleLoader::new(index.clone(), net.config().image_size);
    let (mut l1, mut scores, mut dir, mut temp, mut preds) = (0.0, Vec::new(), 0.0, 0.0, 0usize);
    let dev = net.device().clone();
    for chunk in keys.chunks(batch_size.max(1)) {
        let triples = chunk.iter().map(|k| loader.load(*k)).collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&RgbImage> = triples.iter().map(|t| &t.input).collect();
        let targets: Vec<&RgbImage> = triples.iter().map(|t| &t.target).collect();
        let out = net.relight(
            &RgbImage::batch_to_tensor(&inputs, &dev)?,
            &RgbImage::batch_to_tensor(&targets, &dev)?,
            false,
        )?;
        let relit = RgbImage::batch_from_tensor(&out.relit)?;
        for (t, r) in triples.iter().zip(&relit) {
            l1 += crate::objectives::l1_reconstruction(r, &t.ground_truth)?;
            if let Some(s) = score_l2(&t.input, &t.ground_truth, r)? {
                scores.push(s);
            }
        }
        if let (Some(pi), Some(pt)) = (&out.prediction_input, &out.prediction_target) {
            let pi = predictions_from_tensor(pi)?;
            let pt = predictions_from_tensor(pt)?;
            for (t, (a, b)) in triples.iter().zip(pi.iter().zip(&pt)) {
                for (il, p) in [(t.illum_input, a), (t.illum_target, b)] {
                    dir += cosine_loss(il.direction_degrees(), p.direction_degrees);
                    temp += temperature_loss(il.temperature.kelvin(), p.temperature_kelvin);
                    preds += 1;
                }
            }
        }
    }
    let n = keys.len().max(1) as f64;
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(PairDiagnostics {
        pairs: keys.len(),
        l1: l1 / n,
        score_l2: mean(&scores),
        direction: (preds > 0).then(|| dir / preds as f64),
        temperature: (preds > 0).then(|| temp / preds as f64),
    })
}

/// Result of a full training run.
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub records: Vec<StepRecord>,
    pub trainer: Trainer,
}

impl TrainOutcome {
    /// Smoothed value of each loss term at the last step.
    pub fn smoothed_final(&self) -> BTreeMap<String, f64> {
        let mut names: Vec<String> = self.records.iter().flat_map(|r| r.losses.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
            .into_iter()
            .filter_map(|n| {
                let v: Vec<f64> = self.records.iter().filter_map(|r| r.losses.get(&n).copied()).collect();
                smooth(&v, SMOOTHING).last().map(|s| (n, *s))
            })
            .collect()
    }
}

pub fn checkpoint_path(run_dir: &Path, step: usize) -> PathBuf {
    run_dir.join(format!("ckpt_{step}.safetensors"))
}

/// Run the configured number of steps, writing `config.json`, the JSONL
/// scalar log, `step_<n>.png` grids, `eval_<n>.json` reports and
/// `ckpt_<n>.safetensors` checkpoints into the output directory.
pub fn train(config: TrainingConfig, index: &SceneIndex) -> Result<TrainOutcome> {
    let run_dir = config.output_dir.clone();
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join("config.json"), serde_json::to_string_pretty(&config)?)?;
    let log_path = run_dir.join("log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let mut trainer = Trainer::new(config.clone(), index)?;
    trainer.set_snapshot_dir(&run_dir);
    let mut records = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                log.flush()?;
                return Err(e);
            }
        };
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
        let s = record.step;
        let done = s + 1;
        log::info!("step {s}: total {:.5}", record.total);
        records.push(record);
        if config.image_every > 0 && s % config.image_every == 0 {
            if let Some(grid) = trainer.preview(4)? {
                grid.save_png(&run_dir.join(format!("step_{s}.png")))?;
            }
        }
        if config.eval_every > 0 && done % config.eval_every == 0 {
            let report = trainer.evaluate(&config.eval_limits)?;
            std::fs::write(run_dir.join(format!("eval_{done}.json")), report.to_json()?)?;
        }
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.steps {
            save_checkpoint(&checkpoint_path(&run_dir, done), &trainer.net, trainer.discriminator.as_ref(), done as u64)?;
        }
    }
    log.flush()?;
    let checkpoint = checkpoint_path(&run_dir, config.steps);
    save_checkpoint(&checkpoint, &trainer.net, trainer.discriminator.as_ref(), config.steps as u64)?;
    Ok(TrainOutcome {
        run_dir,
        checkpoint,
        log: log_path,
        records,
        trainer,
    })
}

/// Evaluate a checkpoint over `Eval` and its same-temperature and
/// same-direction restrictions on `index`.
pub fn evaluate_checkpoint(
    path: &Path,
    index: Arc<SceneIndex>,
    limits: &EvalLimits,
    expect: Option<&VariantConfig>,
) -> Result<MetricReport> {
    let ckpt = load_checkpoint(path, &Device::Cpu, expect)?;
    evaluate(ckpt.relighter(), &eval_subsets(index, None), limits, None)
}
