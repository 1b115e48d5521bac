//! Overfit an illum_predicter model on eight fixed toy pairs and print the
//! inference-mode losses every 100 steps.
//!
//! `cargo run --release --example overfit -- [steps] [learning_rate]`

use std::time::Instant;

use relight_core::data::{generate_toy_dataset, parse_manifest};
use relight_core::relightnet::{Variant, VariantConfig};
use relight_core::trainer::{pair_diagnostics, Trainer, TrainingConfig};

fn main() -> relight_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(400);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let dir = tempfile::tempdir()?;
    let index = parse_manifest(&generate_toy_dataset(dir.path(), 3, 128, 7)?)?;
    let model = VariantConfig::preset(Variant::IllumPredicter).with_image_size(128).with_base_width(8);
    let mut cfg = TrainingConfig::new(model, steps, dir.path().join("run"));
    cfg.pair_budget = Some(8);
    cfg.optimizer.learning_rate = lr;
    cfg.seed = 1;
    let mut trainer = Trainer::new(cfg, &index)?;

    let started = Instant::now();
    println!("step  direction  temperature  score_l2  elapsed");
    for s in 1..=steps {
        trainer.step()?;
        if s % 100 == 0 || s == steps {
            let index = trainer.train_pairs().index().clone();
            let d = pair_diagnostics(trainer.net(), &index, trainer.budget(), 8)?;
            println!(
                "{s:>4}  {:>9.5}  {:>11.6}  {:>8.4}  {:>6.0}s",
                d.direction.unwrap_or(f64::NAN),
                d.temperature.unwrap_or(f64::NAN),
                d.score_l2.unwrap_or(f64::NAN),
                started.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
