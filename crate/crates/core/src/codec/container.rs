//! The layered bitstream container.
//!
//! ```text
//! offset size  field
//!      0    4  magic "DSSL"
//!      4    1  version (1)
//!      5    2  height
//!      7    2  width
//!      9    1  channels (1 or 3)
//!     10    1  label count of the segmentation layer
//!     11    1  alpha (power of two)
//!     12    4  residual min (f32)
//!     16    4  residual max (f32)
//!     20    1  lossless backend id
//!     21    1  lossy backend id
//!     22    1  residual quality
//!     23       3 × { u32 length, payload } in order segmentation, compact, residual
//! ```
//!
//! Little-endian throughout. A zero length marks an absent layer. Nothing may
//! follow the residual payload.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSSL";
pub const VERSION: u8 = 1;
/// Fixed header fields before the first length prefix.
pub const FIXED_HEADER_BYTES: usize = 23;
/// Fixed header plus the three length prefixes.
pub const HEADER_BYTES: usize = FIXED_HEADER_BYTES + 3 * 4;
pub const MAX_QUALITY: u8 = 51;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LosslessBackendId {
    Png = 1,
    Flif = 2,
}

impl LosslessBackendId {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Png),
            2 => Some(Self::Flif),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Flif => "flif",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossyBackendId {
    /// no residual layer
    None = 0,
    /// built-in uniform quantizer followed by PNG
    Quantizer = 1,
    Bpg = 2,
}

impl LossyBackendId {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Self::None),
            1 => Some(Self::Quantizer),
            2 => Some(Self::Bpg),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Quantizer => "quantizer",
            Self::Bpg => "bpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayeredBitstream {
    pub height: u16,
    pub width: u16,
    pub channels: u8,
    pub num_labels: u8,
    pub alpha: u8,
    pub residual_min: f32,
    pub residual_max: f32,
    pub lossless_backend: LosslessBackendId,
    pub lossy_backend: LossyBackendId,
    pub quality: u8,
    pub segmentation: Vec<u8>,
    pub compact: Vec<u8>,
    pub residual: Vec<u8>,
}

/// How to treat a payload section that ends early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Any truncation is an error.
    #[default]
    Strict,
    /// Layers cut short are dropped; the complete prefix is kept.
    Resilient,
}

/// Result of a resilient parse.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub bitstream: LayeredBitstream,
    /// Names of layers that were declared but cut short.
    pub dropped_layers: Vec<&'static str>,
}

/// Byte accounting of a serialized container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSizes {
    pub header: usize,
    pub segmentation: usize,
    pub compact: usize,
    pub residual: usize,
}

impl LayerSizes {
    pub fn total(&self) -> usize {
        self.header + self.segmentation + self.compact + self.residual
    }
}

pub const LAYER_NAMES: [&str; 3] = ["segmentation", "compact", "residual"];

impl LayeredBitstream {
    pub fn layer_sizes(&self) -> LayerSizes {
        LayerSizes {
            header: HEADER_BYTES,
            segmentation: self.segmentation.len(),
            compact: self.compact.len(),
            residual: self.residual.len(),
        }
    }

    pub fn total_bytes(&self) -> usize {
        self.layer_sizes().total()
    }

    /// Checks every header invariant that [`parse`](Self::parse) enforces.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Container(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("empty image {}×{}", self.height, self.width));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("channel count {}", self.channels));
        }
        if self.alpha == 0 || !self.alpha.is_power_of_two() {
            return bad(format!("alpha {} is not a power of two", self.alpha));
        }
        if !self.residual_min.is_finite() || !self.residual_max.is_finite() {
            return bad("non-finite residual range".into());
        }
        if self.residual_min > self.residual_max {
            return bad(format!(
                "residual min {} exceeds max {}",
                self.residual_min, self.residual_max
            ));
        }
        if self.quality > MAX_QUALITY {
            return bad(format!("quality {} exceeds {MAX_QUALITY}", self.quality));
        }
        if !self.segmentation.is_empty() && self.num_labels == 0 {
            return bad("segmentation layer present with zero labels".into());
        }
        if self.lossy_backend == LossyBackendId::None && !self.residual.is_empty() {
            return bad("residual payload without a lossy backend".into());
        }
        for (name, len) in LAYER_NAMES
            .iter()
            .zip([self.segmentation.len(), self.compact.len(), self.residual.len()])
        {
            if u32::try_from(len).is_err() {
                return bad(format!("{name} layer too large"));
            }
        }
        Ok(())
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.total_bytes());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.push(self.channels);
        out.push(self.num_labels);
        out.push(self.alpha);
        out.extend_from_slice(&self.residual_min.to_le_bytes());
        out.extend_from_slice(&self.residual_max.to_le_bytes());
        out.push(self.lossless_backend as u8);
        out.push(self.lossy_backend as u8);
        out.push(self.quality);
        for layer in [&self.segmentation, &self.compact, &self.residual] {
            out.extend_from_slice(&(layer.len() as u32).to_le_bytes());
            out.extend_from_slice(layer);
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        Ok(Self::parse_with(bytes, ParseMode::Strict)?.bitstream)
    }

    pub fn parse_with(bytes: &[u8], mode: ParseMode) -> Result<Parsed> {
        if bytes.len() < FIXED_HEADER_BYTES {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(Error::Container("bad magic".into()));
            }
            return Err(Error::Truncated(format!(
                "{} bytes is shorter than the {FIXED_HEADER_BYTES}-byte header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Version {
                found: bytes[4],
                expected: VERSION,
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let f32_at = |i: usize| f32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
        let lossless_backend = LosslessBackendId::from_u8(bytes[20])
            .ok_or_else(|| Error::Container(format!("unknown lossless backend {}", bytes[20])))?;
        let lossy_backend = LossyBackendId::from_u8(bytes[21])
            .ok_or_else(|| Error::Container(format!("unknown lossy backend {}", bytes[21])))?;
        let mut b = LayeredBitstream {
            height: u16_at(5),
            width: u16_at(7),
            channels: bytes[9],
            num_labels: bytes[10],
            alpha: bytes[11],
            residual_min: f32_at(12),
            residual_max: f32_at(16),
            lossless_backend,
            lossy_backend,
            quality: bytes[22],
            segmentation: Vec::new(),
            compact: Vec::new(),
            residual: Vec::new(),
        };

        let mut pos = FIXED_HEADER_BYTES;
        let mut dropped = Vec::new();
        let mut layers: [Vec<u8>; 3] = Default::default();
        for (i, name) in LAYER_NAMES.iter().enumerate() {
            if pos + 4 > bytes.len() {
                match mode {
                    ParseMode::Strict => {
                        return Err(Error::Truncated(format!("{name} length prefix missing")))
                    }
                    ParseMode::Resilient => {
                        dropped.extend(&LAYER_NAMES[i..]);
                        break;
                    }
                }
            }
            let len = u32::from_le_bytes([bytes[pos], bytes[pos + 1], bytes[pos + 2], bytes[pos + 3]]) as usize;
            pos += 4;
            let available = bytes.len() - pos;
            if len > available {
                match mode {
                    ParseMode::Strict => {
                        return Err(Error::Truncated(format!(
                            "{name} layer declares {len} bytes, {available} remain"
                        )))
                    }
                    ParseMode::Resilient => {
                        dropped.extend(&LAYER_NAMES[i..]);
                        break;
                    }
                }
            }
            layers[i] = bytes[pos..pos + len].to_vec();
            pos += len;
        }
        if dropped.is_empty() && pos != bytes.len() {
            return Err(Error::Container(format!(
                "{} unexpected trailing bytes",
                bytes.len() - pos
            )));
        }
        let [s, c, r] = layers;
        b.segmentation = s;
        b.compact = c;
        b.residual = r;
        if dropped.contains(&"residual") {
            b.lossy_backend = LossyBackendId::None;
            b.residual_min = 0.0;
            b.residual_max = 0.0;
        }
        b.validate()?;
        Ok(Parsed {
            bitstream: b,
            dropped_layers: dropped,
        })
    }
}
