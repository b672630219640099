//! Segmentation conditioning: one-hot encoding of label fields and the
//! pluggable source of segmentation maps.
//!
//! Segmentation models are not part of this crate. Maps either come
//! precomputed from disk or from an external program.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, SegmentationMap};

/// One-hot encoding as an `h × w × num_labels` array (channel-interleaved).
pub fn encode_segmentation_input(s: &SegmentationMap) -> Vec<f32> {
    let l = s.num_labels();
    let mut out = vec![0.0f32; s.labels().len() * l];
    for (i, &label) in s.labels().iter().enumerate() {
        out[i * l + label as usize] = 1.0;
    }
    out
}

/// One-hot encoding as a `1 × num_labels × h × w` tensor.
pub fn one_hot_tensor(s: &SegmentationMap, dtype: DType, device: &Device) -> Result<Tensor> {
    let (h, w, l) = (s.height(), s.width(), s.num_labels());
    let mut out = vec![0.0f32; l * h * w];
    for (i, &label) in s.labels().iter().enumerate() {
        out[label as usize * h * w + i] = 1.0;
    }
    Ok(Tensor::from_vec(out, (1, l, h, w), device)?.to_dtype(dtype)?)
}

/// Stacks per-image one-hot maps into a batch.
pub fn one_hot_batch(maps: &[&SegmentationMap], dtype: DType, device: &Device) -> Result<Tensor> {
    let parts = maps
        .iter()
        .map(|s| one_hot_tensor(s, dtype, device))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&parts, 0)?)
}

/// Inverse of the one-hot encoding (first maximal channel wins).
pub fn argmax_labels(one_hot: &[f32], num_labels: usize) -> Vec<u32> {
    one_hot
        .chunks(num_labels)
        .map(|px| {
            px.iter()
                .enumerate()
                .fold((0usize, f32::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0 as u32
        })
        .collect()
}

/// Source of segmentation maps for images entering the encoder.
///
/// Any label value below `num_labels` is legal, including a catch-all
/// "unlabeled" class; downstream stages never assume full coverage.
pub trait Segmenter: Send + Sync {
    fn num_labels(&self) -> usize;

    fn segment(&self, id: &str, image: &ImagePlane) -> Result<SegmentationMap>;
}

/// Looks maps up in a directory of 8/16-bit label images named after the
/// source image stem, optionally falling back to another segmenter.
pub struct PrecomputedMaps {
    dir: PathBuf,
    num_labels: usize,
    fallback: Option<Box<dyn Segmenter>>,
}

impl PrecomputedMaps {
    pub fn new(dir: impl Into<PathBuf>, num_labels: usize) -> Self {
        Self {
            dir: dir.into(),
            num_labels,
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, fallback: Box<dyn Segmenter>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    fn path_for(&self, id: &str) -> Option<PathBuf> {
        let stem = Path::new(id)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| id.to_string());
        ["png", "pgm", "tif", "tiff"]
            .iter()
            .map(|ext| self.dir.join(format!("{stem}.{ext}")))
            .find(|p| p.is_file())
    }
}

impl Segmenter for PrecomputedMaps {
    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn segment(&self, id: &str, image: &ImagePlane) -> Result<SegmentationMap> {
        match (self.path_for(id), &self.fallback) {
            (Some(path), _) => SegmentationMap::load(&path, self.num_labels),
            (None, Some(fallback)) => fallback.segment(id, image),
            (None, None) => Err(Error::SegmentationLookup(id.to_string())),
        }
    }
}

/// In-memory map table, mostly useful for tests and synthetic data.
#[derive(Debug, Default, Clone)]
pub struct MapTable {
    num_labels: usize,
    maps: BTreeMap<String, SegmentationMap>,
}

impl MapTable {
    pub fn new(num_labels: usize) -> Self {
        Self {
            num_labels,
            maps: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, map: SegmentationMap) {
        self.maps.insert(id.into(), map);
    }
}

impl Segmenter for MapTable {
    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn segment(&self, id: &str, _image: &ImagePlane) -> Result<SegmentationMap> {
        self.maps
            .get(id)
            .cloned()
            .ok_or_else(|| Error::SegmentationLookup(id.to_string()))
    }
}

/// Runs an external segmentation program.
///
/// The argument template may contain `{input}` (an RGB PNG written by us)
/// and `{output}` (where the program must write a single-channel label PNG).
#[derive(Debug, Clone)]
pub struct CommandSegmenter {
    program: PathBuf,
    args: Vec<String>,
    num_labels: usize,
}

impl CommandSegmenter {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, num_labels: usize) -> Self {
        Self {
            program: program.into(),
            args,
            num_labels,
        }
    }
}

impl Segmenter for CommandSegmenter {
    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn segment(&self, _id: &str, image: &ImagePlane) -> Result<SegmentationMap> {
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = work.path().join("input.png");
        let output = work.path().join("labels.png");
        image.to_rgb8()?.save(&input)?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
            })
            .collect();
        let name = self.program.display().to_string();
        let out = Command::new(&self.program)
            .args(&args)
            .output()
            .map_err(|e| Error::backend(&name, e.to_string()))?;
        if !out.status.success() {
            return Err(Error::backend(
                &name,
                format!(
                    "exit status {}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ),
            ));
        }
        let map = SegmentationMap::load(&output, self.num_labels)?;
        if (map.height(), map.width()) != (image.height(), image.width()) {
            return Err(Error::backend(
                &name,
                format!(
                    "label map is {}×{}, image is {}×{}",
                    map.height(),
                    map.width(),
                    image.height(),
                    image.width()
                ),
            ));
        }
        Ok(map)
    }
}
