mod strip;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use relight_core::data::{generate_toy_dataset, load_image, parse_manifest, Direction, Illumination, SceneIndex, Temperature};
use relight_core::envmap::generate_envmap_rgb;
use relight_core::image::RgbImage;
use relight_core::metrics::{eval_subsets, evaluate, EvalLimits, IdentityBaseline, Relighter};
use relight_core::trainer::{load_checkpoint, train, Checkpoint, TrainingConfig};
use relight_core::{Device, Error, ErrorClass, Result};

use strip::{comparison_strip, Panel};

#[derive(Parser, Debug)]
#[command(name = "relight", version, about = "Image relighting: toy data, training, evaluation and previews")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Seed {
    /// Seed for every random choice the command makes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the procedural toy dataset (40 images per scene) and its manifest.
    GenToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[command(flatten)]
        seed: Seed,
    },
    /// Train from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Manifest (or directory containing manifest.csv); overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the config's seed when given.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint (or the identity baseline) on the eval subsets.
    Eval {
        #[arg(long, required_unless_present = "baseline")]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Maximum pairs per subset.
        #[arg(long, default_value_t = 64)]
        limit: usize,
        #[arg(long, value_parser = ["identity"], conflicts_with = "ckpt")]
        baseline: Option<String>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[command(flatten)]
        seed: Seed,
    },
    /// Relight one image under another's illumination.
    Relight {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground truth; adds a four-panel comparison strip next to `--out`.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Light direction of the input, for the strip's glyph.
        #[arg(long)]
        input_direction: Option<Direction>,
        /// Light direction of the target; predicted by the model when omitted and possible.
        #[arg(long)]
        target_direction: Option<Direction>,
        #[command(flatten)]
        seed: Seed,
    },
    /// Write the environment map of an illumination, scaled x8.
    EnvmapPreview {
        #[arg(long, value_parser = parse_kelvin)]
        kelvin: Temperature,
        #[arg(long)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        seed: Seed,
    },
}

fn parse_kelvin(s: &str) -> std::result::Result<Temperature, String> {
    let k: u32 = s.trim().trim_end_matches(['K', 'k']).parse().map_err(|e| format!("{e}"))?;
    Temperature::from_kelvin(k).map_err(|e| e.to_string())
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.csv")
    } else {
        data.to_path_buf()
    }
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{} does not exist", p.display())))
    }
}

fn load_index(data: &Path) -> Result<SceneIndex> {
    let m = manifest_path(data);
    require_file(&m)?;
    parse_manifest(&m)
}

fn gen_toy(out: &Path, scenes: usize, size: usize, seed: u64) -> Result<()> {
    let manifest = generate_toy_dataset(out, scenes, size, seed)?;
    println!("{}", manifest.display());
    Ok(())
}

fn run_train(config: &Path, data: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    require_file(config)?;
    let mut cfg = TrainingConfig::from_json_file(config)?;
    if let Some(d) = data {
        cfg.manifest = Some(manifest_path(&d));
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let manifest = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("no dataset: set \"manifest\" in the config or pass --data".into()))?;
    let index = load_index(&manifest)?;
    let outcome = train(cfg, &index)?;
    for (name, v) in outcome.smoothed_final() {
        println!("{name:<16}{v:.5}");
    }
    println!("checkpoint: {}", outcome.checkpoint.display());
    Ok(())
}

fn run_eval(
    ckpt: Option<&Path>,
    data: &Path,
    limits: EvalLimits,
    json: Option<&Path>,
) -> Result<()> {
    let index = Arc::new(load_index(data)?);
    let mut limits = limits;
    if let Some(first) = index.records().first() {
        limits.image_size = RgbImage::load_png(&first.path)?.width();
    }
    let loaded;
    let relighter: &dyn Relighter = match ckpt {
        Some(p) => {
            require_file(p)?;
            loaded = load_checkpoint(p, &Device::Cpu, None)?;
            loaded.relighter()
        }
        None => &IdentityBaseline,
    };
    let report = evaluate(relighter, &eval_subsets(index, None), &limits, None)?;
    print!("{}", report.to_table());
    if let Some(j) = json {
        std::fs::write(j, report.to_json()?)?;
    }
    Ok(())
}

fn strip_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("relit");
    out.with_file_name(format!("{stem}_strip.png"))
}

struct RelightArgs<'a> {
    ckpt: &'a Path,
    input: &'a Path,
    target: &'a Path,
    out: &'a Path,
    ground_truth: Option<&'a Path>,
    input_direction: Option<Direction>,
    target_direction: Option<Direction>,
}

fn run_relight(a: RelightArgs) -> Result<()> {
    for p in [a.ckpt, a.input, a.target].into_iter().chain(a.ground_truth) {
        require_file(p)?;
    }
    let ckpt = load_checkpoint(a.ckpt, &Device::Cpu, None)?;
    let relighter = ckpt.relighter();
    let size = match relighter.image_size() {
        Some(s) => s,
        None => RgbImage::load_png(a.input)?.width(),
    };
    let input = load_image(a.input, size)?;
    let target = load_image(a.target, size)?;
    let relit = relighter
        .relight_batch(&[&input], &[&target])?
        .pop()
        .ok_or_else(|| Error::Shape("relighter returned no image".into()))?;
    relit.save_png(a.out)?;
    println!("{}", a.out.display());

    let Some(gt_path) = a.ground_truth else { return Ok(()) };
    let truth = load_image(gt_path, size)?;
    let l1 = relight_core::objectives::l1_reconstruction(&relit, &truth)?;
    println!("L1 vs ground truth: {l1:.5}");
    let predicted = match &ckpt {
        Checkpoint::Model { net, .. } => net.illumination_of(&target)?.map(|p| p.direction_degrees),
        Checkpoint::Identity => None,
    };
    let target_deg = a.target_direction.map(Direction::degrees).or(predicted);
    let panels = [
        Panel { image: &input, direction: a.input_direction.map(Direction::degrees) },
        Panel { image: &target, direction: target_deg },
        Panel { image: &truth, direction: target_deg },
        Panel { image: &relit, direction: target_deg },
    ];
    let path = strip_path(a.out);
    comparison_strip(&panels)?.save_png(&path)?;
    println!("{}", path.display());
    Ok(())
}

fn envmap_preview(kelvin: Temperature, direction: Direction, out: &Path) -> Result<()> {
    generate_envmap_rgb(&Illumination::new(kelvin, direction))
        .to_image()
        .upscale_nearest(8)
        .save_png(out)?;
    println!("{}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenToy { out, scenes, size, seed } => gen_toy(&out, scenes, size, seed.seed),
        Command::Train { config, data, out, seed } => run_train(&config, data, out, seed),
        Command::Eval { ckpt, data, limit, baseline: _, json, batch_size, seed } => {
            let limits = EvalLimits {
                max_pairs: limit,
                seed: seed.seed,
                batch_size,
                ..Default::default()
            };
            run_eval(ckpt.as_deref(), &data, limits, json.as_deref())
        }
        Command::Relight { ckpt, input, target, out, ground_truth, input_direction, target_direction, seed: _ } => {
            run_relight(RelightArgs {
                ckpt: &ckpt,
                input: &input,
                target: &target,
                out: &out,
                ground_truth: ground_truth.as_deref(),
                input_direction,
                target_direction,
            })
        }
        Command::EnvmapPreview { kelvin, direction, out, seed: _ } => envmap_preview(kelvin, direction, &out),
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Runtime => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
