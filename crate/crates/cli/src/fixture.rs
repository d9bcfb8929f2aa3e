use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use image::RgbImage;

use semcrop::synthetic::{reference_shape_manifest, render_rgb, semantic10, write_dataset};

#[derive(Debug, Clone, Args)]
pub struct GenFixtureArgs {
    /// Directory for the ten-image semantic set.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the reference-shaped manifest to this file.
    #[arg(long)]
    pub reference_shape: Option<PathBuf>,
}

pub fn run(args: &GenFixtureArgs) -> Result<()> {
    let ds = semantic10();
    write_dataset(&ds, &args.out)?;
    let images = args.out.join("images");
    std::fs::create_dir_all(&images).with_context(|| format!("creating {}", images.display()))?;
    for img in &ds.images {
        let buf = RgbImage::from_raw(img.width, img.height, render_rgb(img)).context("image buffer size")?;
        buf.save(images.join(format!("{}.png", img.id)))?;
    }
    if let Some(p) = &args.reference_shape {
        std::fs::write(p, reference_shape_manifest().to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}
