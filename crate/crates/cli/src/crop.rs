use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use image::{Rgb, RgbImage};
use serde::Serialize;

use semcrop::evaluation::load_aesthetic_evidence;
use semcrop::{crop_image, CropOutcome, CropRequest, DetectionSet, Rect};

use crate::{ensure_file, EngineArgs};

#[derive(Debug, Clone, Args)]
pub struct CropArgs {
    /// Input image (PNG or PPM).
    #[arg(long)]
    pub image: PathBuf,
    /// Precomputed aesthetic map (MAP1).
    #[arg(long, required_unless_present = "features", conflicts_with = "features")]
    pub amap: Option<PathBuf>,
    /// Feature stack (FST1); needs --head.
    #[arg(long, requires = "head")]
    pub features: Option<PathBuf>,
    /// Classifier head (HEAD1).
    #[arg(long, requires = "features")]
    pub head: Option<PathBuf>,
    /// Detections document for the image.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Entity the crop should contain.
    #[arg(long)]
    pub entity: Option<String>,
    /// Write crops.json, the cropped images and an overlay here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct CropReport {
    pub image: PathBuf,
    pub width: u32,
    pub height: u32,
    pub entity: Option<String>,
    #[serde(flatten)]
    pub outcome: CropOutcome,
}

const TOP_COLOUR: Rgb<u8> = Rgb([230, 30, 30]);
const OTHER_COLOUR: Rgb<u8> = Rgb([250, 210, 40]);

fn draw_outline(img: &mut RgbImage, r: &Rect, colour: Rgb<u8>) {
    let thickness = 2.min(r.w).min(r.h);
    for y in r.y..r.y + r.h {
        for x in r.x..r.x + r.w {
            let edge = x < r.x + thickness || x >= r.x + r.w - thickness || y < r.y + thickness || y >= r.y + r.h - thickness;
            if edge {
                img.put_pixel(x, y, colour);
            }
        }
    }
}

pub fn run(args: &CropArgs) -> Result<CropReport> {
    let cfg = args.engine.engine_config()?;
    ensure_file(&args.image, "image")?;
    let (width, height) =
        image::image_dimensions(&args.image).with_context(|| format!("reading image {}", args.image.display()))?;
    let aesthetic = load_aesthetic_evidence(
        args.amap.as_deref(),
        args.features.as_deref().zip(args.head.as_deref()),
        width,
        height,
    )
    .context("loading aesthetic evidence")?;
    let detections = args
        .detections
        .as_ref()
        .map(|p| DetectionSet::load(p).with_context(|| format!("loading detections {}", p.display())))
        .transpose()?;
    let taxonomy = args.engine.load_taxonomy()?;
    let outcome = crop_image(
        Some(&taxonomy),
        CropRequest {
            aesthetic: &aesthetic,
            detections: detections.as_ref(),
            entity: args.entity.as_deref(),
        },
        &cfg,
    )?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}; using aesthetic-only cropping");
    }
    if let Some(reason) = &outcome.ranking.reason {
        eprintln!("warning: {reason}");
    }
    for (i, c) in outcome.ranking.crops.iter().enumerate() {
        println!("{}\t{}\t{:.6}", i + 1, c.rect, c.score);
    }
    let report = CropReport {
        image: args.image.clone(),
        width,
        height,
        entity: args.entity.clone(),
        outcome,
    };
    if let Some(dir) = &args.out_dir {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

fn write_outputs(report: &CropReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = serde_json::to_string_pretty(report)? + "\n";
    std::fs::write(dir.join("crops.json"), json)?;
    let img = image::open(&report.image)
        .with_context(|| format!("decoding {}", report.image.display()))?
        .to_rgb8();
    let mut overlay = img.clone();
    for (i, c) in report.outcome.ranking.crops.iter().enumerate().rev() {
        let r = c.rect;
        image::imageops::crop_imm(&img, r.x, r.y, r.w, r.h)
            .to_image()
            .save(dir.join(format!("crop-{}.png", i + 1)))?;
        draw_outline(&mut overlay, &r, if i == 0 { TOP_COLOUR } else { OTHER_COLOUR });
    }
    overlay.save(dir.join("overlay.png"))?;
    Ok(())
}
