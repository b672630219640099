//! Min-max mapping of the signed residual onto 8-bit samples.

use crate::error::{Error, Result};

/// A signed residual plane and its 8-bit rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPlane {
    pub data: Vec<f32>,
    pub scaled: Vec<u8>,
    pub min: f32,
    pub max: f32,
}

impl ResidualPlane {
    pub fn from_residual(data: Vec<f32>) -> Result<Self> {
        let (scaled, min, max) = minmax_normalize(&data)?;
        Ok(Self {
            data,
            scaled,
            min,
            max,
        })
    }
}

/// `round((r − min)/(max − min) · 255)` with global per-plane min/max.
///
/// A constant plane (`min == max`) maps to all zeros.
pub fn minmax_normalize(r: &[f32]) -> Result<(Vec<u8>, f32, f32)> {
    if r.is_empty() {
        return Err(Error::dim("empty residual"));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::dim("residual contains non-finite values"));
    }
    let min = r.iter().copied().fold(f32::INFINITY, f32::min);
    let max = r.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if min == max {
        return Ok((vec![0; r.len()], min, max));
    }
    let span = max as f64 - min as f64;
    let scaled = r
        .iter()
        .map(|&v| (((v as f64 - min as f64) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((scaled, min, max))
}

/// `scaled · (max − min)/255 + min`, in f64 so the result stays within the
/// half-step bound (an f32 result can overshoot it by an ulp).
pub fn minmax_denormalize(scaled: &[u8], min: f32, max: f32) -> Result<Vec<f64>> {
    if !min.is_finite() || !max.is_finite() {
        return Err(Error::Container("non-finite residual range".into()));
    }
    if min > max {
        return Err(Error::Container(format!("residual min {min} exceeds max {max}")));
    }
    let span = max as f64 - min as f64;
    Ok(scaled
        .iter()
        .map(|&q| q as f64 * span / 255.0 + min as f64)
        .collect())
}
