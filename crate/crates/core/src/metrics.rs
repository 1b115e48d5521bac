//! Image-quality metrics, the identity-relative score, and evaluation over
//! the evaluation subsets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::{enumerate_pairs, filter_subset, PairKey, PairSet, SceneIndex, SubsetPredicate, TripleLoader};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::objectives::{l2_distance, latent_light_loss, latent_scene_loss, PerceptualEvaluator};
use crate::relightnet::RelightNet;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shapes(a, b)?;
    let n = a.as_slice().len().max(1) as f64;
    Ok(sum_sq(a, b) / n)
}

fn sum_sq(a: &RgbImage, b: &RgbImage) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum()
}

/// Peak signal-to-noise ratio of images in `[0, 1]`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Infinite,
}

impl Psnr {
    pub fn from_mse(mse: f64) -> Self {
        if mse > 0.0 {
            Psnr::Db(10.0 * (1.0 / mse).log10())
        } else {
            Psnr::Infinite
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            Psnr::Db(v) => *v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Db(v) => write!(f, "{v:.2} dB"),
            Psnr::Infinite => write!(f, "inf"),
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Db(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value {t:?}"))),
        }
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<Psnr> {
    Ok(Psnr::from_mse(mse(a, b)?))
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter, valid region only.
fn filter_valid(plane: &[f64], width: usize, height: usize, win: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = win.len();
    let (ow, oh) = (width + 1 - k, height + 1 - k);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| win[i] * plane[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| win[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Structural similarity: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, data range 1, mean over the valid region, averaged over channels.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!("ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")));
    }
    let win = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..3 {
        let x: Vec<f64> = a.as_slice().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.as_slice().iter().skip(ch).step_by(3).map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &win);
        let (my, _, _) = filter_valid(&y, w, h, &win);
        let (sxx, _, _) = filter_valid(&xx, w, h, &win);
        let (syy, _, _) = filter_valid(&yy, w, h, &win);
        let (sxy, _, _) = filter_valid(&xy, w, h, &win);
        let n = mx.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// `l2(G, Ĝ) / l2(G, I)`; `None` when `I` already equals `G`.
pub fn score_l2(input: &RgbImage, truth: &RgbImage, relit: &RgbImage) -> Result<Option<f64>> {
    check_shapes(input, truth)?;
    check_shapes(relit, truth)?;
    let reference = sum_sq(truth, input).sqrt();
    if reference == 0.0 {
        return Ok(None);
    }
    Ok(Some(sum_sq(truth, relit).sqrt() / reference))
}

/// Flattened latent parts of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentParts {
    pub scene: Option<Vec<f64>>,
    pub light: Vec<f64>,
}

/// Anything that relights image pairs.
pub trait Relighter {
    fn name(&self) -> String;

    /// Required input side length, if fixed.
    fn image_size(&self) -> Option<usize> {
        None
    }

    fn relight_batch(&self, inputs: &[&RgbImage], targets: &[&RgbImage]) -> Result<Vec<RgbImage>>;

    /// Latent codes, for models that have them.
    fn encode_batch(&self, _images: &[&RgbImage]) -> Result<Option<Vec<LatentParts>>> {
        Ok(None)
    }
}

/// Returns the input unchanged.
pub struct IdentityBaseline;

impl Relighter for IdentityBaseline {
    fn name(&self) -> String {
        "identity".into()
    }

    fn relight_batch(&self, inputs: &[&RgbImage], _targets: &[&RgbImage]) -> Result<Vec<RgbImage>> {
        Ok(inputs.iter().map(|i| (*i).clone()).collect())
    }
}

fn flatten_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.flatten_from(1)?.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

impl Relighter for RelightNet {
    fn name(&self) -> String {
        serde_json::to_value(self.config().variant)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_else(|| "relightnet".into())
    }

    fn image_size(&self) -> Option<usize> {
        Some(self.config().image_size)
    }

    fn relight_batch(&self, inputs: &[&RgbImage], targets: &[&RgbImage]) -> Result<Vec<RgbImage>> {
        let dev = self.device();
        let i = RgbImage::batch_to_tensor(inputs, dev)?;
        let t = RgbImage::batch_to_tensor(targets, dev)?;
        RgbImage::batch_from_tensor(&self.relight(&i, &t, false)?.relit)
    }

    fn encode_batch(&self, images: &[&RgbImage]) -> Result<Option<Vec<LatentParts>>> {
        let code = self.encode(&RgbImage::batch_to_tensor(images, self.device())?, false)?;
        let light = flatten_rows(&code.light)?;
        let scene = match &code.scene {
            Some(s) => flatten_rows(s)?.into_iter().map(Some).collect(),
            None => vec![None; light.len()],
        };
        Ok(Some(
            scene
                .into_iter()
                .zip(light)
                .map(|(scene, light)| LatentParts { scene, light })
                .collect(),
        ))
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSubset {
    Eval,
    EvalSameTemperature,
    EvalSameDirection,
    TrainSample,
}

impl EvalSubset {
    pub fn label(&self) -> &'static str {
        match self {
            EvalSubset::Eval => "Eval",
            EvalSubset::EvalSameTemperature => "Eval_{c_I=c_T}",
            EvalSubset::EvalSameDirection => "Eval_{d_I=d_T}",
            EvalSubset::TrainSample => "Train-sample",
        }
    }
}

/// Pair subsets for evaluation: all ordered pairs of the evaluation index
/// and its same-temperature / same-direction restrictions, plus optionally
/// the training pair set.
pub fn eval_subsets(eval_index: Arc<SceneIndex>, train_pairs: Option<PairSet>) -> Vec<(EvalSubset, PairSet)> {
    let eval = enumerate_pairs(eval_index, false);
    let mut out = vec![
        (EvalSubset::EvalSameTemperature, filter_subset(&eval, SubsetPredicate::SameTemperature)),
        (EvalSubset::EvalSameDirection, filter_subset(&eval, SubsetPredicate::SameDirection)),
    ];
    out.insert(0, (EvalSubset::Eval, eval));
    if let Some(t) = train_pairs {
        out.push((EvalSubset::TrainSample, t));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLimits {
    /// Upper bound on pairs drawn per subset.
    pub max_pairs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Side length images are resampled to when the relighter does not fix one.
    pub image_size: usize,
}

impl Default for EvalLimits {
    fn default() -> Self {
        Self {
            max_pairs: 64,
            seed: 0,
            batch_size: 8,
            image_size: 256,
        }
    }
}

pub const LATENT_PAIRS: [&str; 6] = ["I-T", "I-G", "I-relit", "T-G", "T-relit", "G-relit"];

/// Mean latent distances over a subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentDiagnostics {
    /// Mean pairwise l2 between scene parts of I, T, G and Ĝ.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<BTreeMap<String, f64>>,
    pub light: BTreeMap<String, f64>,
    /// Mean scene latent loss over (I, G, Ĝ).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_loss: Option<f64>,
    /// Mean light latent loss over (T, G, Ĝ).
    pub light_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub subset: EvalSubset,
    pub pairs: usize,
    pub mse: f64,
    /// From the subset's mean MSE.
    pub psnr_db: Psnr,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    /// Mean over pairs where the score is defined.
    pub score_l2: Option<f64>,
    pub score_reciprocal: Option<f64>,
    /// Pairs with `I = G`, excluded from the score means.
    pub undefined_scores: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentDiagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub limits: EvalLimits,
    pub subsets: Vec<SubsetMetrics>,
    /// Subsets skipped because they had no pairs.
    pub omitted: Vec<EvalSubset>,
}

/// Reference numbers reported for full-dataset training; context only.
pub const PUBLISHED_RESULTS: [(&str, [&str; 3]); 4] = [
    ("MSE", ["0.0238", "0.0219", "0.0254"]),
    ("PSNR", ["18.11 dB", "18.66 dB", "18.10 dB"]),
    ("SSIM", ["0.3365", "0.1832", "0.2988"]),
    ("LPIPS", ["0.3268", "0.2738", "0.2564"]),
];

pub fn reference_footer() -> String {
    let mut s = String::from("Published results (full VIDIT training, not a test target)\n");
    let _ = writeln!(s, "{:<8}{:>24}{:>12}{:>18}", "Metric", "IlluminationPredicter", "Envmap", "Envmap + scene");
    for (name, vals) in PUBLISHED_RESULTS {
        let _ = writeln!(s, "{:<8}{:>24}{:>12}{:>18}", name, vals[0], vals[1], vals[2]);
    }
    s
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "n/a".into())
}

impl MetricReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn subset(&self, which: EvalSubset) -> Option<&SubsetMetrics> {
        self.subsets.iter().find(|s| s.subset == which)
    }

    /// Human-readable table with the reference footer.
    pub fn to_table(&self) -> String {
        let has_lpips = self.subsets.iter().any(|s| s.lpips.is_some());
        let mut s = format!("model: {}  (max {} pairs per subset, seed {})\n", self.model, self.limits.max_pairs, self.limits.seed);
        let _ = write!(s, "{:<16}{:>7}{:>10}{:>11}{:>8}", "subset", "pairs", "MSE", "PSNR", "SSIM");
        if has_lpips {
            let _ = write!(s, "{:>8}", "LPIPS");
        }
        let _ = writeln!(s, "{:>10}{:>10}", "score_l2", "1/score");
        for m in &self.subsets {
            let _ = write!(
                s,
                "{:<16}{:>7}{:>10.4}{:>11}{:>8.4}",
                m.subset.label(),
                m.pairs,
                m.mse,
                m.psnr_db.to_string(),
                m.ssim
            );
            if has_lpips {
                let _ = write!(s, "{:>8}", fmt_opt(m.lpips, 4));
            }
            let _ = writeln!(s, "{:>10}{:>10}", fmt_opt(m.score_l2, 3), fmt_opt(m.score_reciprocal, 3));
        }
        for o in &self.omitted {
            let _ = writeln!(s, "{:<16} (empty, omitted)", o.label());
        }
        s.push('\n');
        s.push_str(&reference_footer());
        s
    }
}

#[derive(Default)]
struct Accumulator {
    pairs: usize,
    mse: f64,
    ssim: f64,
    lpips: Option<f64>,
    scores: Vec<f64>,
    undefined: usize,
    scene: Option<BTreeMap<String, f64>>,
    light: BTreeMap<String, f64>,
    scene_loss: Option<f64>,
    light_loss: f64,
    has_latents: bool,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn six_distances(parts: [&[f64]; 4]) -> Result<[f64; 6]> {
    let [i, t, g, r] = parts;
    Ok([
        l2_distance(i, t)?,
        l2_distance(i, g)?,
        l2_distance(i, r)?,
        l2_distance(t, g)?,
        l2_distance(t, r)?,
        l2_distance(g, r)?,
    ])
}

fn add_into(map: &mut BTreeMap<String, f64>, d: [f64; 6]) {
    for (k, v) in LATENT_PAIRS.iter().zip(d) {
        *map.entry((*k).to_owned()).or_insert(0.0) += v;
    }
}

fn evaluate_pairs(
    relighter: &dyn Relighter,
    loader: &mut TripleLoader,
    keys: &[PairKey],
    batch_size: usize,
    lpips: Option<&dyn PerceptualEvaluator>,
) -> Result<Accumulator> {
    let mut acc = Accumulator::default();
    for chunk in keys.chunks(batch_size.max(1)) {
        let triples = chunk.iter().map(|k| loader.load(*k)).collect::<Result<Vec<_>>>()?;
        let inputs: Vec<&RgbImage> = triples.iter().map(|t| &t.input).collect();
        let targets: Vec<&RgbImage> = triples.iter().map(|t| &t.target).collect();
        let truths: Vec<&RgbImage> = triples.iter().map(|t| &t.ground_truth).collect();
        let relit = relighter.relight_batch(&inputs, &targets)?;
        if relit.len() != triples.len() {
            return Err(Error::Shape(format!("{} pairs relit into {} images", triples.len(), relit.len())));
        }
        for ((inp, gt), out) in inputs.iter().zip(&truths).zip(&relit) {
            acc.pairs += 1;
            acc.mse += mse(out, gt)?;
            acc.ssim += ssim(out, gt)?;
            match score_l2(inp, gt, out)? {
                Some(s) => acc.scores.push(s),
                None => acc.undefined += 1,
            }
        }
        if let Some(e) = lpips {
            let dev = Device::Cpu;
            let relit_refs: Vec<&RgbImage> = relit.iter().collect();
            let d = e.distance(&RgbImage::batch_to_tensor(&relit_refs, &dev)?, &RgbImage::batch_to_tensor(&truths, &dev)?)?;
            let v = d.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            *acc.lpips.get_or_insert(0.0) += v * chunk.len() as f64;
        }
        let relit_refs: Vec<&RgbImage> = relit.iter().collect();
        let n = chunk.len();
        let all: Vec<&RgbImage> = inputs.iter().chain(&targets).chain(&truths).chain(&relit_refs).copied().collect();
        if let Some(codes) = relighter.encode_batch(&all)? {
            acc.has_latents = true;
            for p in 0..n {
                let c = [&codes[p], &codes[n + p], &codes[2 * n + p], &codes[3 * n + p]];
                add_into(&mut acc.light, six_distances(c.map(|x| x.light.as_slice()))?);
                acc.light_loss += latent_light_loss(&c[1].light, &c[2].light, &c[3].light)?;
                if let [Some(i), Some(t), Some(g), Some(r)] = c.map(|x| x.scene.as_deref()) {
                    add_into(acc.scene.get_or_insert_with(BTreeMap::new), six_distances([i, t, g, r])?);
                    *acc.scene_loss.get_or_insert(0.0) += latent_scene_loss(i, g, r)?;
                }
            }
        }
    }
    Ok(acc)
}

fn finish(subset: EvalSubset, acc: Accumulator) -> SubsetMetrics {
    let n = acc.pairs.max(1) as f64;
    let mse = acc.mse / n;
    let reciprocals: Vec<f64> = acc.scores.iter().filter(|s| **s > 0.0).map(|s| 1.0 / s).collect();
    let scale = |m: BTreeMap<String, f64>| m.into_iter().map(|(k, v)| (k, v / n)).collect();
    let latent = acc.has_latents.then(|| LatentDiagnostics {
        scene: acc.scene.map(scale),
        light: scale(acc.light),
        scene_loss: acc.scene_loss.map(|v| v / n),
        light_loss: acc.light_loss / n,
    });
    SubsetMetrics {
        subset,
        pairs: acc.pairs,
        mse,
        psnr_db: Psnr::from_mse(mse),
        ssim: acc.ssim / n,
        lpips: acc.lpips.map(|v| v / n),
        score_l2: mean(&acc.scores),
        score_reciprocal: mean(&reciprocals),
        undefined_scores: acc.undefined,
        latent,
    }
}

/// Metrics averaged over at most `limits.max_pairs` pairs of each subset,
/// drawn with `limits.seed` and processed in pair-key order.
pub fn evaluate(
    relighter: &dyn Relighter,
    subsets: &[(EvalSubset, PairSet)],
    limits: &EvalLimits,
    lpips: Option<&dyn PerceptualEvaluator>,
) -> Result<MetricReport> {
    if limits.max_pairs == 0 {
        return Err(Error::Config("max_pairs must be at least 1".into()));
    }
    let size = relighter.image_size().unwrap_or(limits.image_size);
    let mut loaders: Vec<TripleLoader> = Vec::new();
    let mut report = MetricReport {
        model: relighter.name(),
        limits: limits.clone(),
        subsets: Vec::new(),
        omitted: Vec::new(),
    };
    for (which, pairs) in subsets {
        if pairs.is_empty() {
            log::warn!("subset {} has no pairs; omitted", which.label());
            report.omitted.push(*which);
            continue;
        }
        let n = (limits.max_pairs as u64).min(pairs.len()) as usize;
        let mut keys = pairs.sample(n, limits.seed)?;
        keys.sort();
        let slot = match loaders.iter().position(|l| Arc::ptr_eq(l.index(), pairs.index())) {
            Some(p) => p,
            None => {
                loaders.push(TripleLoader::new(pairs.index().clone(), size));
                loaders.len() - 1
            }
        };
        let acc = evaluate_pairs(relighter, &mut loaders[slot], &keys, limits.batch_size, lpips)?;
        report.subsets.push(finish(*which, acc));
    }
    Ok(report)
}
