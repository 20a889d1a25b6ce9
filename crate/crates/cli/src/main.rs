use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use semtrans::geometry::project_cloud;
use semtrans::labels::{colorize, SegmentMap};
use semtrans::pipeline::imageio::{range_to_gray, write_gray_png, write_id_map, write_png};
use semtrans::pipeline::kitti::read_labelled_scan;
use semtrans::pipeline::sample::lidar_segment_map;
use semtrans::pipeline::{
    evaluate, generate_split, read_kitti_scan, read_scene_config, read_split, render_panorama, train, translate, validate, EvalOptions,
    GeneratorTranslator, PairedSample, RunConfig, Split, SyntheticSceneConfig, ViewGeometry, LOG_HEADER,
};
use semtrans::rng::seed_from_env;
use semtrans::titan::load_generator;
use semtrans::Exec;

/// Translate LiDAR scans into camera-view semantic segment maps.
///
/// Seeds given as options or in config files are overridden by SEMTRANS_SEED.
#[derive(Parser)]
#[command(name = "semtrans", version)]
struct Cli {
    /// Run data-parallel sections on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spherically project a scan. Writes the range channel as greyscale, or
    /// the label map when labels are given.
    Project {
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Scene description holding the LiDAR model (default HDL-64 style, 2048 azimuths).
        #[arg(long)]
        scene: Option<PathBuf>,
        /// PNG, or PGM for a raw id map.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate one split of a synthetic paired dataset.
    SynthData {
        /// Scene description; defaults to the small desk scene.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on the train split of a dataset directory.
    Train {
        /// Run configuration; defaults to the desk run.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Loss log as CSV.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Translate the camera-facing crop of a labelled scan.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        /// Defaults to the scan path with a `.label` extension.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Defaults to the scene file saved next to the checkpoint.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the generator over the full 360° range view.
    Panorama {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split of a dataset directory.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// IoU only.
        #[arg(long)]
        no_appearance: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match cli.command {
        Command::Project { scan, labels, scene, out } => project(&scan, labels.as_deref(), scene.as_deref(), &out),
        Command::SynthData { config, count, out, split, seed } => synth_data(config.as_deref(), count, &out, split, seed, exec),
        Command::Train { config, data, out, log, steps } => run_training(config.as_deref(), &data, &out, log.as_deref(), steps, exec),
        Command::Translate { ckpt, scan, labels, scene, out } => infer(&ckpt, &scan, labels, scene, &out, false),
        Command::Panorama { ckpt, scan, labels, scene, out } => infer(&ckpt, &scan, labels, scene, &out, true),
        Command::Evaluate { ckpt, data, report, split, no_appearance } => run_evaluation(&ckpt, &data, &report, split, !no_appearance, exec),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn scene_config(path: Option<&Path>, base: SyntheticSceneConfig) -> Result<SyntheticSceneConfig> {
    match path {
        None => Ok(base),
        Some(p) => Ok(SyntheticSceneConfig::from_kv(&read_text(p)?, &p.display().to_string(), &base)?),
    }
}

fn write_map(path: &Path, map: &SegmentMap) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        write_id_map(path, map)?;
    } else {
        write_png(path, &colorize(map))?;
    }
    Ok(())
}

fn project(scan: &Path, labels: Option<&Path>, scene: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = scene_config(scene, SyntheticSceneConfig::default())?;
    match labels {
        Some(l) => {
            let cloud = read_labelled_scan(scan, l)?;
            let img = project_cloud(&cloud, &cfg.lidar)?;
            write_map(out, &lidar_segment_map(&img)?)?;
        }
        None => {
            let cloud = read_kitti_scan(scan)?;
            let img = project_cloud(&cloud, &cfg.lidar)?;
            write_gray_png(out, &range_to_gray(&img, cfg.max_range as f32))?;
        }
    }
    Ok(())
}

fn synth_data(config: Option<&Path>, count: usize, out: &Path, split: Split, seed: u64, exec: Exec) -> Result<()> {
    let cfg = scene_config(config, SyntheticSceneConfig::desk())?;
    let seed = seed_from_env(seed)?;
    let samples = generate_split(&cfg, seed, split, count, exec)?;
    semtrans::pipeline::write_split(out, &cfg.to_kv(), split, &samples)?;
    eprintln!("wrote {count} {split} samples to {}", out.display());
    Ok(())
}

fn sidecar(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".scene.cfg");
    PathBuf::from(s)
}

fn run_training(config: Option<&Path>, data: &Path, out: &Path, log: Option<&Path>, steps: Option<u64>, exec: Exec) -> Result<()> {
    let base = RunConfig::desk();
    let mut run = match config {
        None => base,
        Some(p) => RunConfig::from_kv(&read_text(p)?, &p.display().to_string(), &base)?,
    };
    run.train.seed = seed_from_env(run.train.seed)?;
    if let Some(n) = steps {
        run.train.max_steps = n;
    }
    let scene = read_scene_config(data)?;
    let geometry = ViewGeometry::of_scene(&scene);
    let samples = read_split(data, Split::Train, &geometry, exec)?;
    let mut lines = vec![LOG_HEADER.to_string()];
    let (trainer, _) = train(&run, &samples, &geometry, |_, row| {
        lines.push(row.csv());
        if row.step % 100 == 0 {
            eprintln!("step {} lovasz {:.4} d_loss {:.4}", row.step, row.lovasz, row.d_loss);
        }
        Ok(())
    })?;
    trainer.save(out)?;
    fs::write(sidecar(out), scene.to_kv()).context("writing the scene file")?;
    if let Some(p) = log {
        fs::write(p, lines.join("\n") + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    if data.join(Split::Val.to_string()).is_dir() {
        let val = read_split(data, Split::Val, &geometry, exec)?;
        eprintln!("validation mIoU {:.4}", validate(&trainer, &val, exec)?);
    }
    Ok(())
}

fn infer(ckpt: &Path, scan: &Path, labels: Option<PathBuf>, scene: Option<PathBuf>, out: &Path, panorama: bool) -> Result<()> {
    let (generator, classes) = load_generator(ckpt)?;
    let scene_path = scene.unwrap_or_else(|| sidecar(ckpt));
    if !scene_path.exists() {
        bail!("no scene file at {}; pass --scene", scene_path.display());
    }
    let cfg = scene_config(Some(&scene_path), SyntheticSceneConfig::desk())?;
    let labels = labels.unwrap_or_else(|| scan.with_extension("label"));
    let cloud = read_labelled_scan(scan, &labels)?;
    // camera maps are not needed for inference
    let sample = PairedSample::new(cloud, SegmentMap::filled(1, 1, 0)?, &ViewGeometry::of_scene(&cfg))?;
    let map = if panorama {
        render_panorama(&generator, &classes, &sample.full, &sample.full_map()?)?
    } else {
        translate(&generator, &classes, &sample.range, &sample.lidar_map)?
    };
    write_map(out, &map)
}

fn run_evaluation(ckpt: &Path, data: &Path, report: &Path, split: Split, appearance: bool, exec: Exec) -> Result<()> {
    let (generator, classes) = load_generator(ckpt)?;
    let geometry = ViewGeometry::of_scene(&read_scene_config(data)?);
    let samples = read_split(data, split, &geometry, exec)?;
    let opts = EvalOptions {
        appearance,
        seed: seed_from_env(0)?,
        ..EvalOptions::default()
    };
    let model = GeneratorTranslator {
        generator: &generator,
        classes: &classes,
    };
    let r = evaluate(&samples, &model, &opts, exec)?;
    fs::write(report, r.to_csv()).with_context(|| format!("writing {}", report.display()))?;
    println!("{r}");
    Ok(())
}
