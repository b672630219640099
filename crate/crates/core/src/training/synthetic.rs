//! Synthetic scenes: piecewise-smooth images whose regions follow a random
//! label map, so the segmentation carries real information about the image.

use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::DatasetItem;
use crate::error::{Error, Result};
use crate::image::{ImagePlane, SegmentationMap};

/// Deterministic per-label base color.
fn palette(label: u32, num_labels: usize) -> [f32; 3] {
    let t = (label as f32 + 0.5) / num_labels as f32;
    [
        40.0 + 180.0 * t,
        40.0 + 180.0 * ((t * 2.7).fract()),
        40.0 + 180.0 * ((t * 5.3 + 0.35).fract()),
    ]
}

/// One scene: Voronoi regions labelled at random, each filled with its
/// label color plus a smooth per-region gradient.
pub fn synthetic_scene(
    rng: &mut impl Rng,
    height: usize,
    width: usize,
    num_labels: usize,
) -> Result<(RgbImage, SegmentationMap)> {
    if num_labels == 0 || height == 0 || width == 0 {
        return Err(Error::dim("synthetic scene needs labels and a non-empty size"));
    }
    let regions = 3 + rng.random_range(0..4usize);
    let sites: Vec<(f32, f32, u32, [f32; 2])> = (0..regions)
        .map(|_| {
            (
                rng.random_range(0.0..height as f32),
                rng.random_range(0.0..width as f32),
                rng.random_range(0..num_labels as u32),
                [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
            )
        })
        .collect();
    let mut labels = Vec::with_capacity(height * width);
    let mut img = RgbImage::new(width as u32, height as u32);
    for r in 0..height {
        for c in 0..width {
            let (y, x) = (r as f32, c as f32);
            let site = sites
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - y).powi(2) + (a.1 - x).powi(2);
                    let db = (b.0 - y).powi(2) + (b.1 - x).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one site");
            labels.push(site.2);
            let base = palette(site.2, num_labels);
            let shade = site.3[0] * (y - site.0) + site.3[1] * (x - site.1);
            let px = base.map(|b| (b + shade).clamp(0.0, 255.0).round() as u8);
            img.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    Ok((img, SegmentationMap::new(height, width, num_labels, labels)?))
}

/// `n` scenes from a seeded generator.
pub fn synthetic_dataset(
    n: usize,
    height: usize,
    width: usize,
    num_labels: usize,
    seed: u64,
) -> Result<Vec<DatasetItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (img, seg) = synthetic_scene(&mut rng, height, width, num_labels)?;
            DatasetItem::new(format!("scene{i:03}"), ImagePlane::from_rgb8(&img), seg)
        })
        .collect()
}

/// Writes scenes in the on-disk dataset layout (`images/`, `labels/`).
pub fn write_synthetic_dataset(
    root: &Path,
    n: usize,
    height: usize,
    width: usize,
    num_labels: usize,
    seed: u64,
) -> Result<()> {
    let (images, labels) = (root.join("images"), root.join("labels"));
    for d in [&images, &labels] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    for item in synthetic_dataset(n, height, width, num_labels, seed)? {
        item.image
            .to_rgb8()?
            .save(images.join(format!("{}.png", item.id)))?;
        item.segmentation.save(&labels.join(format!("{}.png", item.id)))?;
    }
    Ok(())
}
