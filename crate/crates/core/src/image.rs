//! Image and label-field containers shared by every stage of the codec.
//!
//! Pixel data is stored row-major, channel-interleaved (`h × w × k`). The
//! networks consume `1 × k × h × w` tensors; the conversions live here so the
//! layout is decided in exactly one place.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};

/// Canonical value range of network-facing planes.
pub const UNIT_RANGE: (f32, f32) = (-1.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorSpace {
    #[default]
    Rgb,
    Gray,
}

/// A real-valued `h × w × k` image with a declared value range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    range: (f32, f32),
    colorspace: ColorSpace,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        range: (f32, f32),
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("empty plane {height}×{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::dim(format!("channel count {channels} not in {{1, 3}}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::dim(format!(
                "buffer of {} values does not hold {height}×{width}×{channels}",
                data.len()
            )));
        }
        if !(range.0 < range.1) {
            return Err(Error::dim(format!("invalid value range {range:?}")));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !(**v >= range.0 && **v <= range.1))
        {
            return Err(Error::dim(format!("value {v} outside range {range:?}")));
        }
        let colorspace = if channels == 3 {
            ColorSpace::Rgb
        } else {
            ColorSpace::Gray
        };
        Ok(Self {
            height,
            width,
            channels,
            range,
            colorspace,
            data,
        })
    }

    /// Builds a plane in the canonical range, clamping values into it.
    pub fn from_unit_clamped(
        height: usize,
        width: usize,
        channels: usize,
        mut data: Vec<f32>,
    ) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        }
        Self::new(height, width, channels, UNIT_RANGE, data)
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            UNIT_RANGE,
            vec![0.0; height * width * channels],
        )
    }

    /// Maps 8-bit RGB samples into `[-1, 1]`.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| u8_to_unit(v)).collect();
        Self {
            height: h as usize,
            width: w as usize,
            channels: 3,
            range: UNIT_RANGE,
            colorspace: ColorSpace::Rgb,
            data,
        }
    }

    /// Quantizes a canonical-range RGB plane back to 8 bits.
    pub fn to_rgb8(&self) -> Result<RgbImage> {
        if self.channels != 3 || self.range != UNIT_RANGE {
            return Err(Error::dim("to_rgb8 needs a 3-channel plane in [-1, 1]"));
        }
        let raw = self.data.iter().map(|&v| unit_to_u8(v)).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::dim("rgb buffer size"))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn range(&self) -> (f32, f32) {
        self.range
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    /// `1 × k × h × w` tensor.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.data,
            (1, self.height, self.width, self.channels),
            device,
        )?
        .permute((0, 3, 1, 2))?
        .contiguous()?
        .to_dtype(dtype)?;
        Ok(t)
    }

    /// Reads one element of a `N × k × h × w` tensor batch back into a plane,
    /// clamping into the canonical range.
    pub fn from_tensor(t: &Tensor, index: usize) -> Result<Self> {
        let (_, k, h, w) = t.dims4()?;
        let data: Vec<f32> = t
            .get(index)?
            .permute((1, 2, 0))?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1()?;
        Self::from_unit_clamped(h, w, k, data)
    }

    /// Edge-replicates the plane so both spatial dims are multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Self {
        let (ph, pw) = (round_up(self.height, m), round_up(self.width, m));
        if (ph, pw) == (self.height, self.width) {
            return self.clone();
        }
        let k = self.channels;
        let mut data = Vec::with_capacity(ph * pw * k);
        for r in 0..ph {
            let sr = r.min(self.height - 1);
            for c in 0..pw {
                let sc = c.min(self.width - 1);
                let at = (sr * self.width + sc) * k;
                data.extend_from_slice(&self.data[at..at + k]);
            }
        }
        Self {
            height: ph,
            width: pw,
            data,
            ..self.clone()
        }
    }

    /// Top-left `height × width` crop.
    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "cannot crop {}×{} to {height}×{width}",
                self.height, self.width
            )));
        }
        let k = self.channels;
        let mut data = Vec::with_capacity(height * width * k);
        for r in 0..height {
            let at = r * self.width * k;
            data.extend_from_slice(&self.data[at..at + width * k]);
        }
        Ok(Self {
            height,
            width,
            data,
            ..self.clone()
        })
    }
}

/// `h × w` integer label field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    num_labels: usize,
    labels: Vec<u32>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, num_labels: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("empty label map {height}×{width}")));
        }
        if num_labels == 0 {
            return Err(Error::Config("num_labels must be positive".into()));
        }
        if labels.len() != height * width {
            return Err(Error::dim(format!(
                "{} labels do not fill {height}×{width}",
                labels.len()
            )));
        }
        if let Some((i, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_labels)
        {
            return Err(Error::Label {
                label,
                row: i / width,
                col: i % width,
                num_labels,
            });
        }
        Ok(Self {
            height,
            width,
            num_labels,
            labels,
        })
    }

    pub fn uniform(height: usize, width: usize, num_labels: usize, label: u32) -> Result<Self> {
        Self::new(height, width, num_labels, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn pad_to_multiple(&self, m: usize) -> Self {
        let (ph, pw) = (round_up(self.height, m), round_up(self.width, m));
        if (ph, pw) == (self.height, self.width) {
            return self.clone();
        }
        let mut labels = Vec::with_capacity(ph * pw);
        for r in 0..ph {
            let sr = r.min(self.height - 1);
            for c in 0..pw {
                labels.push(self.labels[sr * self.width + c.min(self.width - 1)]);
            }
        }
        Self {
            height: ph,
            width: pw,
            num_labels: self.num_labels,
            labels,
        }
    }

    pub fn crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "cannot crop {}×{} labels to {height}×{width}",
                self.height, self.width
            )));
        }
        let labels = (0..height)
            .flat_map(|r| {
                let at = r * self.width;
                self.labels[at..at + width].iter().copied()
            })
            .collect();
        Ok(Self {
            height,
            width,
            num_labels: self.num_labels,
            labels,
        })
    }

    /// Nearest-neighbour resampling; labels are never interpolated.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim("resize to empty label map"));
        }
        let mut labels = Vec::with_capacity(height * width);
        for r in 0..height {
            let sr = ((r as f64 + 0.5) * self.height as f64 / height as f64) as usize;
            let sr = sr.min(self.height - 1);
            for c in 0..width {
                let sc = ((c as f64 + 0.5) * self.width as f64 / width as f64) as usize;
                labels.push(self.labels[sr * self.width + sc.min(self.width - 1)]);
            }
        }
        Ok(Self {
            height,
            width,
            num_labels: self.num_labels,
            labels,
        })
    }

    /// Reads an 8- or 16-bit single-channel label image.
    pub fn load(path: &Path, num_labels: usize) -> Result<Self> {
        let img = image::open(path)?;
        let (labels, w, h) = match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                (g.into_raw().into_iter().map(u32::from).collect(), w, h)
            }
            image::DynamicImage::ImageLuma16(g) => {
                let (w, h) = g.dimensions();
                (g.into_raw().into_iter().map(u32::from).collect(), w, h)
            }
            other => {
                return Err(Error::Dataset(format!(
                    "{}: label image must be single-channel, got {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        Self::new(h as usize, w as usize, num_labels, labels)
    }

    /// Writes the map as an 8-bit image when every label fits, 16-bit otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.num_labels <= 256 {
            self.to_gray8()?.save(path)?;
        } else {
            self.to_gray16()?.save(path)?;
        }
        Ok(())
    }

    pub fn to_gray8(&self) -> Result<GrayImage> {
        if self.num_labels > 256 {
            return Err(Error::dim("more than 256 labels do not fit 8 bits"));
        }
        let raw = self.labels.iter().map(|&l| l as u8).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::dim("label buffer size"))
    }

    pub fn to_gray16(&self) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
        let raw = self.labels.iter().map(|&l| l as u16).collect();
        ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
            .ok_or_else(|| Error::dim("label buffer size"))
    }
}

pub fn u8_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub(crate) fn round_up(v: usize, m: usize) -> usize {
    v.div_ceil(m) * m
}
