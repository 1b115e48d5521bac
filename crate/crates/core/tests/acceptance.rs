//! Acceptance suite: one line per criterion.
//!
//! Run with `cargo test --test acceptance`; pass criterion numbers after
//! `--` to run a subset. Criteria listed in `KNOWN_FAILURES` are reported
//! as FAIL but do not fail the process; any other failure (or a known
//! failure that starts passing) does.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relight_core::data::{enumerate_pairs, unrestricted_pair_count, PairKey, SceneIndex, Temperature};
use relight_core::data::Illumination;
use relight_core::discriminator::DiscriminatorConfig;
use relight_core::envmap::{direction_profile, generate_envmap_hsl, generate_envmap_rgb, kelvin_to_rgb, ENVMAP_HEIGHT, ENVMAP_WIDTH};
use relight_core::metrics::{eval_subsets, evaluate, EvalLimits, IdentityBaseline};
use relight_core::objectives::{
    cosine_loss, cosine_loss_grad, envmap_loss, envmap_loss_grad, hsl_envmap_loss, hsl_envmap_loss_grad,
    temperature_loss, temperature_loss_grad,
};
use relight_core::relightnet::{swap_latent, weighted_pool, RelightNet, Variant, VariantConfig};
use relight_core::trainer::{evaluate_checkpoint, pair_diagnostics, save_checkpoint, Trainer, TrainingConfig};

/// Criterion 4 asserts a 2028-channel envmap-only latent; its own layout
/// (512 pooling weights + 3 x 512 RGB values) needs 2048, which is what is built.
const KNOWN_FAILURES: &[u32] = &[4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn criterion_1() -> Outcome {
    let mut mismatches = 0;
    let mut checked = 0;
    for scenes in 2..=5 {
        let index = Arc::new(SceneIndex::synthetic(scenes));
        for restricted in [false, true] {
            let pairs = enumerate_pairs(index.clone(), restricted);
            let mut brute = Vec::new();
            for i in 0..index.len() {
                for j in 0..index.len() {
                    let (a, b) = (index.record(i), index.record(j));
                    let keep = !restricted
                        || (a.scene_id != b.scene_id && a.illumination.direction != b.illumination.direction);
                    if keep {
                        brute.push(PairKey::new(i, j));
                    }
                }
            }
            let mut got: Vec<PairKey> = pairs.iter().collect();
            got.sort();
            checked += 1;
            if got != brute || pairs.len() != brute.len() as u64 {
                mismatches += 1;
            }
        }
    }
    let train = unrestricted_pair_count(12120);
    let val = unrestricted_pair_count(1880);
    let pass = mismatches == 0 && train == 146_894_400 && val == 3_534_400;
    outcome(pass, format!("{checked} enumerations, {mismatches} mismatches; N=12120 -> {train}, N=1880 -> {val}"))
}

fn criterion_2() -> Outcome {
    let same = cosine_loss(123.0, 123.0);
    let antipodal = cosine_loss(10.0, 190.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rng.random_range(0.0..360.0);
    let n = 100_000;
    let mc = (0..n).map(|_| cosine_loss(x, rng.random_range(0.0..360.0))).sum::<f64>() / n as f64;
    let temp = temperature_loss(2500.0, 4500.0);
    let env = envmap_loss(&[0.0; 512], &[1.0; 512]).unwrap();
    let closed = 512.0 * 2f64.ln().powi(2);
    let pass = same.abs() < 1e-12
        && (antipodal - 2.0).abs() < 1e-12
        && (mc - 1.0).abs() <= 0.02
        && (temp - 1.0).abs() < 1e-12
        && rel_err(env, closed, 0.0) < 1e-6;
    outcome(
        pass,
        format!("cos(x,x)={same:.1e} antipodal={antipodal} E[cos]={mc:.4} temp={temp} envmap={env:.6} (512 ln^2 2 = {closed:.6})"),
    )
}

fn criterion_3() -> Outcome {
    const H: f64 = 1e-4;
    const FLOOR: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = [0f64; 4];
    for _ in 0..100 {
        let n = 16;
        let est: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let g = envmap_loss_grad(&est, &truth).unwrap();
        for k in 0..n {
            let (mut p, mut m) = (est.clone(), est.clone());
            p[k] += H;
            m[k] -= H;
            let num = (envmap_loss(&p, &truth).unwrap() - envmap_loss(&m, &truth).unwrap()) / (2.0 * H);
            worst[0] = worst[0].max(rel_err(g[k], num, FLOOR));
        }

        let (x, xh) = (rng.random_range(-360.0..360.0), rng.random_range(-360.0..360.0));
        let num = (cosine_loss(x, xh + H) - cosine_loss(x, xh - H)) / (2.0 * H);
        worst[1] = worst[1].max(rel_err(cosine_loss_grad(x, xh), num, FLOOR));

        let (c, ch) = (rng.random_range(1000.0..12000.0), rng.random_range(1000.0..12000.0));
        let num = (temperature_loss(c, ch + H) - temperature_loss(c, ch - H)) / (2.0 * H);
        worst[2] = worst[2].max(rel_err(temperature_loss_grad(c, ch), num, FLOOR));

        let len = 2 + 32;
        let est: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
        let truth: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = hsl_envmap_loss_grad(&est, &truth).unwrap();
        for k in 0..len {
            let (mut p, mut m) = (est.clone(), est.clone());
            p[k] += H;
            m[k] -= H;
            let num = (hsl_envmap_loss(&p, &truth).unwrap() - hsl_envmap_loss(&m, &truth).unwrap()) / (2.0 * H);
            worst[3] = worst[3].max(rel_err(g[k], num, FLOOR));
        }
    }
    let pass = worst.iter().all(|&w| w < 1e-3);
    outcome(
        pass,
        format!(
            "worst relative error: envmap {:.1e}, cosine {:.1e}, temperature {:.1e}, hsl {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn criterion_4() -> Outcome {
    let dev = Device::Cpu;
    let mut notes = Vec::new();
    let mut pass = true;
    let input = Tensor::rand(0f32, 1.0, (1, 3, 256, 256), &dev).unwrap();
    let target = Tensor::rand(0f32, 1.0, (1, 3, 256, 256), &dev).unwrap();
    for (variant, expected) in [(Variant::EnvmapOnly, 2028), (Variant::EnvmapScene, 2052), (Variant::IllumPredicter, 520)] {
        let net = RelightNet::new(VariantConfig::preset(variant), &dev, 4).unwrap();
        let code = net.encode(&input, false).unwrap();
        let latent = code.combined().unwrap();
        let dims = latent.dims().to_vec();
        let ok = dims == [1, expected, 16, 16] && code.skips.len() == 3;
        pass &= ok;
        notes.push(format!("{variant:?} latent {}x{}x{} (want {expected})", dims[1], dims[2], dims[3]));

        let arch = net.architecture();
        pass &= arch.transposed_conv_count() == 0;
        let out = net.relight(&input, &target, false).unwrap().relit;
        let (lo, hi) = (
            out.min_all().unwrap().to_scalar::<f32>().unwrap(),
            out.max_all().unwrap().to_scalar::<f32>().unwrap(),
        );
        pass &= (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && out.dims() == [1, 3, 256, 256];
    }
    let pool = |c: usize, v: Variant| {
        let light = Tensor::rand(0f32, 1.0, (1, c, 16, 16), &dev).unwrap();
        weighted_pool(&light, v).map(|t| t.dims().to_vec())
    };
    match pool(2028, Variant::EnvmapOnly) {
        Ok(d) if d == [1, 3, 16, 32] => notes.push("pool 2028 -> 16x32x3".into()),
        other => {
            pass = false;
            notes.push(format!("pool 2028 -> {other:?}"));
        }
    }
    match pool(1028, Variant::EnvmapScene) {
        Ok(d) if d == [1, 514] => notes.push("pool 1028 -> 514".into()),
        other => {
            pass = false;
            notes.push(format!("pool 1028 -> {other:?}"));
        }
    }
    notes.push("no transposed convs; outputs in [0,1]".into());
    outcome(pass, notes.join("; "))
}

fn criterion_5() -> Outcome {
    let dev = Device::Cpu;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0f64;
    for trial in 0..100 {
        let (variant, c) = if trial % 2 == 0 { (Variant::EnvmapOnly, 2048) } else { (Variant::EnvmapScene, 1028) };
        let (h, w) = (4, 4);
        let data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        let light = Tensor::from_vec(data.clone(), (1, c, h, w), &dev).unwrap();
        let got: Vec<f64> = weighted_pool(&light, variant).unwrap().flatten_all().unwrap().to_dtype(DType::F64).unwrap().to_vec1().unwrap();
        let at = |ch: usize, y: usize, x: usize| data[(ch * h + y) * w + x];
        let half = match variant {
            Variant::EnvmapOnly => 512,
            _ => c / 2,
        };
        let groups = (c - half) / half;
        let mut want = Vec::with_capacity(got.len());
        for g in 0..groups {
            for k in 0..half {
                let mut acc = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        acc += at(k, y, x) * at(half + g * half + k, y, x);
                    }
                }
                want.push(acc);
            }
        }
        if want.len() != got.len() {
            return outcome(false, format!("length {} vs brute force {}", got.len(), want.len()));
        }
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max(rel_err(*a, *b, 1e-300));
        }
    }
    outcome(worst < 1e-6, format!("100 trials, worst relative error {worst:.1e}"))
}

fn values(t: &Tensor) -> Vec<f32> {
    t.flatten_all().unwrap().to_vec1().unwrap()
}

fn criterion_6() -> Outcome {
    let dev = Device::Cpu;
    let mut notes = Vec::new();
    let mut pass = true;
    for variant in [Variant::IllumPredicter, Variant::EnvmapScene] {
        let net = RelightNet::new(common::tiny(variant, 64, 4), &dev, 6).unwrap();
        let i = Tensor::rand(0f32, 1.0, (1, 3, 64, 64), &dev).unwrap();
        let t = Tensor::rand(0f32, 1.0, (1, 3, 64, 64), &dev).unwrap();
        let ci = net.encode(&i, false).unwrap();
        let ct = net.encode(&t, false).unwrap();
        let decode = |code_t: &relight_core::relightnet::LatentCode| {
            values(&net.decode(&swap_latent(&ci, code_t).unwrap(), false).unwrap())
        };
        let base = decode(&ct);
        let noise = |x: &Tensor| (x + Tensor::randn(0f32, 1.0, x.shape(), &dev).unwrap()).unwrap();

        let mut scene_perturbed = ct.clone();
        scene_perturbed.scene = ct.scene.as_ref().map(noise);
        let mut skips_perturbed = ct.clone();
        skips_perturbed.skips = ct.skips.iter().map(noise).collect();
        let mut light_perturbed = ct.clone();
        light_perturbed.light = noise(&ct.light);

        let scene_same = decode(&scene_perturbed) == base;
        let skips_same = decode(&skips_perturbed) == base;
        let light_moves = decode(&light_perturbed) != base;
        pass &= scene_same && skips_same && light_moves;
        notes.push(format!(
            "{variant:?}: scene-invariant {scene_same}, skip-invariant {skips_same}, light-sensitive {light_moves}"
        ));
    }
    outcome(pass, notes.join("; "))
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut det = true;
    let mut consistency = 0f64;
    for illum in Illumination::all() {
        det &= generate_envmap_rgb(&illum) == generate_envmap_rgb(&illum);
        det &= generate_envmap_hsl(&illum) == generate_envmap_hsl(&illum);
        let a = generate_envmap_hsl(&illum).to_rgb();
        let b = generate_envmap_rgb(&illum);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            consistency = consistency.max((x - y).abs() as f64);
        }
    }
    pass &= det && consistency <= 1e-6;

    let mut shift = 0f64;
    for k in 0..ENVMAP_WIDTH {
        let mu = k as f64 * 360.0 / ENVMAP_WIDTH as f64;
        let p = direction_profile(mu, ENVMAP_WIDTH, ENVMAP_HEIGHT);
        let q = direction_profile(mu + 45.0, ENVMAP_WIDTH, ENVMAP_HEIGHT);
        for c in 0..ENVMAP_WIDTH {
            shift = shift.max((q[c] - p[(c + ENVMAP_WIDTH - 4) % ENVMAP_WIDTH]).abs());
        }
    }
    pass &= shift < 1e-9;

    let ratios: Vec<f64> = Temperature::ALL
        .iter()
        .map(|t| {
            let [r, _, b] = kelvin_to_rgb(t.kelvin()).unwrap();
            b / r
        })
        .collect();
    let monotone = ratios.windows(2).all(|w| w[1] > w[0]);
    pass &= monotone;
    outcome(
        pass,
        format!(
            "deterministic {det}; 45deg shift max dev {shift:.1e}; hsl<->rgb L_inf {consistency:.1e}; B/R {:?} monotone {monotone}",
            ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_8() -> Outcome {
    let (_dir, index) = common::toy(3, 64, 8);
    let limits = EvalLimits { max_pairs: 32, seed: 8, batch_size: 8, image_size: 64 };
    let report = evaluate(&IdentityBaseline, &eval_subsets(Arc::new(index), None), &limits, None).unwrap();
    let mut pass = !report.subsets.is_empty();
    let mut notes = Vec::new();
    for s in &report.subsets {
        let ok = s.score_l2.is_some_and(|v| (v - 1.0).abs() <= 1e-9);
        pass &= ok;
        notes.push(format!("{} {:?}", s.subset.label(), s.score_l2));
    }
    outcome(pass, notes.join(", "))
}

/// Pinned by the pilot run recorded in the README.
const OVERFIT_STEPS: usize = 400;
const OVERFIT_LR: f64 = 1e-3;

fn criterion_9() -> Outcome {
    let (_dir, index) = common::toy(3, 128, 7);
    let mut cfg = TrainingConfig::new(common::tiny(Variant::IllumPredicter, 128, 8), OVERFIT_STEPS, _dir.path().join("run"));
    cfg.pair_budget = Some(8);
    cfg.batch_size = 8;
    cfg.optimizer.learning_rate = OVERFIT_LR;
    cfg.seed = 1;
    let mut trainer = Trainer::new(cfg, &index).unwrap();
    let started = Instant::now();
    for _ in 0..OVERFIT_STEPS {
        let r = trainer.step().unwrap();
        assert!(r.total.is_finite());
    }
    let idx = trainer.train_pairs().index().clone();
    let d = pair_diagnostics(trainer.net(), &idx, trainer.budget(), 8).unwrap();
    let l_c = d.temperature.unwrap_or(f64::NAN);
    let l_d = d.direction.unwrap_or(f64::NAN);
    let score = d.score_l2.unwrap_or(f64::NAN);
    let pass = d.pairs == 8 && l_c < 0.05 && l_d < 0.2 && score < 1.0;
    outcome(
        pass,
        format!(
            "{} pairs, {OVERFIT_STEPS} steps in {:.0}s: L_c {l_c:.5} (<0.05), L_d {l_d:.5} (<0.2), score_l2 {score:.4} (<1)",
            d.pairs,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10() -> Outcome {
    let (dir, index) = common::toy(2, 64, 10);
    let model = common::tiny(Variant::IllumPredicter, 64, 4);
    let mut cfg = TrainingConfig::new(model.clone(), 3, dir.path().join("run"));
    cfg.batch_size = 2;
    cfg.seed = 10;
    let mut trainer = Trainer::new(cfg, &index).unwrap();
    for _ in 0..3 {
        trainer.step().unwrap();
    }
    let index = Arc::new(index);
    let limits = EvalLimits { max_pairs: 8, seed: 3, batch_size: 4, image_size: 64 };
    let before = evaluate(trainer.net(), &eval_subsets(index.clone(), None), &limits, None).unwrap().to_json().unwrap();
    let path = dir.path().join("ckpt.safetensors");
    save_checkpoint(&path, trainer.net(), None, 3).unwrap();
    let after = evaluate_checkpoint(&path, index, &limits, Some(&model)).unwrap().to_json().unwrap();
    outcome(before == after, format!("report {} bytes, identical after reload: {}", before.len(), before == after))
}

fn criterion_11() -> Outcome {
    let (dir, index) = common::toy(2, 64, 11);
    let mut cfg = TrainingConfig::new(common::tiny(Variant::IllumPredicter, 64, 4), 10, dir.path().join("run"));
    cfg.batch_size = 2;
    cfg.adversarial = true;
    cfg.discriminator = DiscriminatorConfig { base_width: 8, ..Default::default() };
    cfg.seed = 11;
    let mut trainer = Trainer::new(cfg, &index).unwrap();
    let mut first = None;
    let mut finite = true;
    for _ in 0..10 {
        let r = trainer.step().unwrap();
        let d = r.d_loss.unwrap_or(f64::NAN);
        let g = r.losses.get("adversarial").copied().unwrap_or(f64::NAN);
        finite &= d.is_finite() && g.is_finite();
        first.get_or_insert(d);
    }
    let first = first.unwrap_or(f64::NAN);
    let pass = finite && (1.0..=1.8).contains(&first);
    outcome(pass, format!("10 steps finite: {finite}; first d_loss {first:.4} (2 ln 2 = {:.4})", 2.0 * 2f64.ln()))
}

fn main() -> ExitCode {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        (1, "pairing oracle", criterion_1),
        (2, "loss closed forms", criterion_2),
        (3, "gradient checks", criterion_3),
        (4, "shape/architecture contracts", criterion_4),
        (5, "weighted-pool oracle", criterion_5),
        (6, "swap semantics", criterion_6),
        (7, "envmap generator", criterion_7),
        (8, "identity baseline", criterion_8),
        (9, "desk-scale overfit", criterion_9),
        (10, "checkpoint round-trip", criterion_10),
        (11, "GAN plumbing", criterion_11),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let known = KNOWN_FAILURES.contains(&n);
        let verdict = match (result.pass, known) {
            (true, false) => "PASS",
            (true, true) => {
                unexpected += 1;
                "PASS (unexpected: listed as a known failure)"
            }
            (false, true) => "FAIL (known, see notes)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!(
            "criterion {n:>2} {verdict}: {name}: {} [{:.1}s]",
            result.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
