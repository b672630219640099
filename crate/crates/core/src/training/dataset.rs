//! Dataset ingestion.
//!
//! Layout: `root/images/<stem>.{png,jpg,jpeg}` paired with
//! `root/labels/<stem>.png` (8- or 16-bit single-channel label ids).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, SegmentationMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizeRule {
    /// Everything rescaled to 512×1024.
    Cityscapes,
    /// Only images with a side of at least 512 pixels, rescaled to 256×256.
    Ade20k,
    Custom { height: usize, width: usize },
    /// Keep native size.
    None,
}

impl ResizeRule {
    /// Whether an image of this size is used at all.
    pub fn accepts(self, height: usize, width: usize) -> bool {
        match self {
            ResizeRule::Ade20k => height >= 512 || width >= 512,
            _ => true,
        }
    }

    pub fn target(self, height: usize, width: usize) -> (usize, usize) {
        match self {
            ResizeRule::Cityscapes => (512, 1024),
            ResizeRule::Ade20k => (256, 256),
            ResizeRule::Custom { height, width } => (height, width),
            ResizeRule::None => (height, width),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub id: String,
    pub image: ImagePlane,
    pub segmentation: SegmentationMap,
}

impl DatasetItem {
    pub fn new(id: impl Into<String>, image: ImagePlane, segmentation: SegmentationMap) -> Result<Self> {
        let id = id.into();
        if (image.height(), image.width()) != (segmentation.height(), segmentation.width()) {
            return Err(Error::Dataset(format!(
                "{id}: image {}×{} vs segmentation {}×{}",
                image.height(),
                image.width(),
                segmentation.height(),
                segmentation.width()
            )));
        }
        if image.channels() != 3 {
            return Err(Error::Dataset(format!("{id}: expected an RGB image")));
        }
        Ok(Self {
            id,
            image,
            segmentation,
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    /// sorted by id
    pub items: Vec<DatasetItem>,
    /// images without a label file
    pub unpaired: usize,
    /// pairs dropped by the size filter
    pub filtered: usize,
    /// pairs whose image and label sizes disagree
    pub mismatched: usize,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn stems(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if !ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.entry(stem.to_string()).or_insert(path);
        }
    }
    Ok(out)
}

/// Loads every paired image under `root`, applying `rule`. Unpaired images,
/// filtered images and size mismatches are counted and skipped.
pub fn ingest_dataset(root: &Path, rule: ResizeRule, num_labels: usize) -> Result<Dataset> {
    let images = stems(&root.join("images"), &IMAGE_EXTENSIONS)?;
    let labels = stems(&root.join("labels"), &["png"])?;
    let mut ds = Dataset::default();
    for (stem, image_path) in &images {
        let Some(label_path) = labels.get(stem) else {
            ds.unpaired += 1;
            continue;
        };
        let rgb = image::open(image_path)?.into_rgb8();
        let seg = SegmentationMap::load(label_path, num_labels)?;
        let (h, w) = (rgb.height() as usize, rgb.width() as usize);
        if (h, w) != (seg.height(), seg.width()) {
            ds.mismatched += 1;
            continue;
        }
        if !rule.accepts(h, w) {
            ds.filtered += 1;
            continue;
        }
        let (th, tw) = rule.target(h, w);
        let rgb = if (th, tw) == (h, w) {
            rgb
        } else {
            imageops::resize(&rgb, tw as u32, th as u32, FilterType::Triangle)
        };
        let seg = if (th, tw) == (h, w) {
            seg
        } else {
            seg.resize_nearest(th, tw)?
        };
        ds.items.push(DatasetItem::new(stem.clone(), ImagePlane::from_rgb8(&rgb), seg)?);
    }
    if ds.unpaired > 0 {
        log::warn!("{}: {} images without labels skipped", root.display(), ds.unpaired);
    }
    if ds.items.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no usable image/label pairs ({} unpaired, {} filtered, {} mismatched)",
            root.display(),
            ds.unpaired,
            ds.filtered,
            ds.mismatched
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, RgbImage};

    fn write_pair(root: &Path, stem: &str, h: u32, w: u32, label_dims: Option<(u32, u32)>) {
        std::fs::create_dir_all(root.join("images")).unwrap();
        std::fs::create_dir_all(root.join("labels")).unwrap();
        RgbImage::from_pixel(w, h, image::Rgb([10, 20, 30]))
            .save(root.join("images").join(format!("{stem}.png")))
            .unwrap();
        if let Some((lh, lw)) = label_dims {
            GrayImage::from_fn(lw, lh, |x, _| image::Luma([(x % 3) as u8]))
                .save(root.join("labels").join(format!("{stem}.png")))
                .unwrap();
        }
    }

    #[test]
    fn ade20k_filter_keeps_large_images() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10 {
            let (h, w) = if i < 3 { (300, 400) } else { (512, 300 + i) };
            write_pair(dir.path(), &format!("im{i:02}"), h, w, Some((h, w)));
        }
        let ds = ingest_dataset(dir.path(), ResizeRule::Ade20k, 3).unwrap();
        assert_eq!(ds.items.len(), 7);
        assert_eq!(ds.filtered, 3);
        assert!(ds
            .items
            .iter()
            .all(|it| (it.image.height(), it.image.width(), it.segmentation.width()) == (256, 256, 256)));
    }

    #[test]
    fn cityscapes_rule_fixes_dims_and_order_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "b", 64, 100, Some((64, 100)));
        write_pair(dir.path(), "a", 30, 50, Some((30, 50)));
        write_pair(dir.path(), "c", 30, 50, None);
        write_pair(dir.path(), "d", 30, 50, Some((31, 50)));
        let ds = ingest_dataset(dir.path(), ResizeRule::Cityscapes, 3).unwrap();
        let ids: Vec<&str> = ds.items.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        assert_eq!((ds.unpaired, ds.mismatched), (1, 1));
        for it in &ds.items {
            assert_eq!((it.image.height(), it.image.width()), (512, 1024));
            assert_eq!((it.segmentation.height(), it.segmentation.width()), (512, 1024));
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", 8, 8, None);
        assert!(matches!(
            ingest_dataset(dir.path(), ResizeRule::None, 3),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn mismatched_item_rejected() {
        let img = ImagePlane::zeros(4, 4, 3).unwrap();
        let seg = SegmentationMap::uniform(4, 5, 2, 0).unwrap();
        assert!(DatasetItem::new("x", img, seg).is_err());
    }
}
