//! Command argument definitions and subcommand implementations.
//!
//! Every subcommand prints one JSON value on standard output. Failures are
//! reported the same way, as `{"error": "..."}` with a nonzero exit code,
//! so callers can always parse stdout.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use softwarp::io;
use softwarp::losses::{adversarial_loss, pixel_loss, pyramid_loss, AdversarialSide};
use softwarp::losses::{perceptual_loss, total_loss, PyramidExtractor};
use softwarp::metrics::{mean_iou, ssim, SsimConfig};
use softwarp::pipeline::{
    make_fixture, rasterize_parsing_with_report, realize_backward_grid, render, squash_score,
    PipelineConfig, RenderTarget, SynthFixture, TransformSet,
};
use softwarp::tensor::PoseKeypoints;
use softwarp::warp::bilinear_sample;
use softwarp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "softwarp",
    version,
    about = "Part-segmentation transform estimation, soft-gated warping and pose-transfer rendering on synthetic fixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pose-transfer fixture directory from a seed.
    Fixture {
        /// RNG seed; the fixture is a pure function of seed and config.
        #[arg(long)]
        seed: u64,
        /// Directory to write the fixture files into.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Rasterize a part parsing from a pose.
    Parse {
        /// Pose keypoints JSON.
        #[arg(long)]
        pose: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output segmentation PNG (pixel value = part label).
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate per-part transforms between two part parsings.
    Estimate {
        /// Condition parsing PNG.
        #[arg(long = "cond-seg")]
        cond_seg: PathBuf,
        /// Target parsing PNG.
        #[arg(long = "target-seg")]
        target_seg: PathBuf,
        /// Output transform-set JSON.
        #[arg(long)]
        out: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Warp a whole image through one part's stored backward transform.
    Warp {
        /// Input image PNG.
        #[arg(long)]
        image: PathBuf,
        /// Transform-set JSON produced by `estimate`.
        #[arg(long)]
        transforms: PathBuf,
        /// Output image PNG.
        #[arg(long)]
        out: PathBuf,
        /// Part label to apply; may be omitted when the set has one part.
        #[arg(long)]
        label: Option<u8>,
    },
    /// Render a fixture's condition image into its target pose.
    Render {
        /// Fixture directory written by `fixture`.
        #[arg(long)]
        fixture: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory for output.png, parsing.png and diagnostics.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// SSIM (and mean IoU when both files are label maps) of two PNGs.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Loss terms and their weighted total between two images.
    Losses {
        /// Generated image PNG.
        #[arg(long)]
        generated: PathBuf,
        /// Target image PNG.
        #[arg(long)]
        target: PathBuf,
        /// Pipeline config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    let cfg = match path {
        Some(p) => io::read_json::<PipelineConfig>(p)?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_fixture(seed: u64, out: &Path, config: &Option<PathBuf>) -> Result<Value> {
    let cfg = load_config(config)?;
    let fixture = make_fixture(seed, &cfg)?;
    fixture.save(out)?;
    Ok(json!({
        "seed": seed,
        "out": out,
        "height": cfg.height,
        "width": cfg.width,
        "parts": cfg.parts.iter().map(|p| p.label).collect::<Vec<_>>(),
    }))
}

fn run_parse(pose: &Path, config: &Option<PathBuf>, out: &Path) -> Result<Value> {
    let cfg = load_config(config)?;
    let pose: PoseKeypoints = io::read_json(pose)?;
    let report = rasterize_parsing_with_report(&pose, &cfg, cfg.height, cfg.width)?;
    io::write_segmentation_png(out, &report.map)?;
    Ok(json!({
        "out": out,
        "labels": report.map.present_labels(),
        "skipped": report.skipped,
    }))
}

fn run_estimate(
    cond_seg: &Path,
    target_seg: &Path,
    out: &Path,
    config: &Option<PathBuf>,
) -> Result<Value> {
    let cfg = load_config(config)?;
    let condition = io::read_segmentation_png(cond_seg)?;
    let target = io::read_segmentation_png(target_seg)?;
    let set = softwarp::pipeline::estimate_transform_set(&condition, &target, cfg.tps_grid)?;
    io::write_json(out, &set)?;
    Ok(json!({
        "out": out,
        "parts": set.parts.iter().map(|p| p.label).collect::<Vec<_>>(),
        "omitted": set.omitted,
    }))
}

fn run_warp(image: &Path, transforms: &Path, out: &Path, label: Option<u8>) -> Result<Value> {
    let image_tensor = io::read_image_png(image)?;
    let set: TransformSet = io::read_json(transforms)?;
    let entry = match label {
        Some(l) => set.parts.iter().find(|p| p.label == l).ok_or_else(|| {
            Error::InvalidArgument(format!("transform set has no part labeled {l}"))
        })?,
        None if set.parts.len() == 1 => &set.parts[0],
        None => {
            let labels: Vec<u8> = set.parts.iter().map(|p| p.label).collect();
            return Err(Error::InvalidArgument(format!(
                "transform set has parts {labels:?}; pick one with --label"
            )));
        }
    };
    if (set.height, set.width) != (image_tensor.height(), image_tensor.width()) {
        return Err(Error::InvalidArgument(format!(
            "transforms were estimated on a {}x{} frame but the image is {}x{}",
            set.height,
            set.width,
            image_tensor.height(),
            image_tensor.width()
        )));
    }
    let grid = realize_backward_grid(&entry.backward, set.height, set.width)?;
    let warped = bilinear_sample(&image_tensor, &grid, softwarp::warp::BorderRule::Zeros);
    io::write_image_png(out, &warped)?;
    Ok(json!({
        "out": out,
        "label": entry.label,
        "degenerate": entry.degenerate,
    }))
}

fn run_render(fixture: &Path, config: &Option<PathBuf>, out: &Path) -> Result<Value> {
    let cfg = load_config(config)?;
    let f = SynthFixture::load(fixture)?;
    let rendered = render(
        &f.condition_image,
        &f.condition_parsing,
        RenderTarget::Parsing(&f.target_parsing),
        &cfg,
    )?;
    std::fs::create_dir_all(out).map_err(Error::from)?;
    io::write_image_png(&out.join("output.png"), &rendered.image)?;
    io::write_segmentation_png(&out.join("parsing.png"), &rendered.parsing)?;
    io::write_json(&out.join("diagnostics.json"), &rendered.diagnostics)?;
    let score = ssim(&rendered.image, &f.target_image, &SsimConfig::default())?;
    Ok(json!({
        "out": out,
        "parts": rendered.diagnostics.parts.len(),
        "mean_filled": rendered.diagnostics.mean_filled,
        "ssim_vs_target": score,
    }))
}

fn run_metrics(a: &Path, b: &Path) -> Result<Value> {
    let image_a = io::read_image_png(a)?;
    let image_b = io::read_image_png(b)?;
    let ssim_value = ssim(&image_a, &image_b, &SsimConfig::default())?;
    // Mean IoU only makes sense when both files decode as label maps; it
    // averages over the labels present in either, mirroring the renderer's
    // parsing score.
    let iou = match (io::read_segmentation_png(a), io::read_segmentation_png(b)) {
        (Ok(seg_a), Ok(seg_b)) => {
            let mut labels = seg_a.present_labels();
            labels.extend(seg_b.present_labels());
            labels.sort_unstable();
            labels.dedup();
            Some(mean_iou(&seg_a, &seg_b, &labels)?)
        }
        _ => None,
    };
    Ok(json!({ "ssim": ssim_value, "mean_iou": iou }))
}

fn run_losses(generated: &Path, target: &Path, config: &Option<PathBuf>) -> Result<Value> {
    let cfg = load_config(config)?;
    let gen = io::read_image_png(generated)?;
    let tgt = io::read_image_png(target)?;
    let pixel = pixel_loss(&gen, &tgt)?;
    let perceptual = perceptual_loss(&gen, &tgt, &PyramidExtractor::default())?;
    let pyramid = pyramid_loss(&gen, &tgt, &cfg.loss.extractor()?)?;
    let score = squash_score(ssim(&gen, &tgt, &SsimConfig::default())?);
    let adversarial = adversarial_loss(&[], &[score], AdversarialSide::Generator)?;
    let total = total_loss(adversarial, pixel, perceptual, pyramid, &cfg.loss.lambda)?;
    Ok(json!({
        "adversarial": adversarial,
        "pixel": pixel,
        "perceptual": perceptual,
        "pyramid": pyramid,
        "total": total,
    }))
}

fn dispatch(command: &Command) -> Result<Value> {
    match command {
        Command::Fixture { seed, out, config } => run_fixture(*seed, out, config),
        Command::Parse { pose, config, out } => run_parse(pose, config, out),
        Command::Estimate {
            cond_seg,
            target_seg,
            out,
            config,
        } => run_estimate(cond_seg, target_seg, out, config),
        Command::Warp {
            image,
            transforms,
            out,
            label,
        } => run_warp(image, transforms, out, *label),
        Command::Render {
            fixture,
            config,
            out,
        } => run_render(fixture, config, out),
        Command::Metrics { a, b } => run_metrics(a, b),
        Command::Losses {
            generated,
            target,
            config,
        } => run_losses(generated, target, config),
    }
}

/// Parses the process arguments, runs the chosen subcommand and returns
/// the process exit code, printing the JSON result or error object.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            println!("{}", json!({ "error": e.to_string() }));
            return 2;
        }
    };
    match dispatch(&cli.command) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("JSON output"));
            0
        }
        Err(e) => {
            println!("{}", json!({ "error": e.to_string() }));
            1
        }
    }
}
