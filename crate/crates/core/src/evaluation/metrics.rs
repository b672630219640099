//! Host-side f64 image quality metrics on 8-bit RGB.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::losses::{SSIM_SIGMA, SSIM_WINDOW};

/// Reported for identical images, where PSNR is unbounded.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Standard five-scale MS-SSIM exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

const K1: f64 = 0.01;
const K2: f64 = 0.03;
const PEAK: f64 = 255.0;

fn check_same(x: &RgbImage, y: &RgbImage) -> Result<()> {
    if x.dimensions() != y.dimensions() {
        return Err(Error::dim(format!(
            "images differ in size: {:?} vs {:?}",
            x.dimensions(),
            y.dimensions()
        )));
    }
    if x.width() == 0 || x.height() == 0 {
        return Err(Error::dim("empty image"));
    }
    Ok(())
}

pub fn mse(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_same(x, y)?;
    let sum: f64 = x
        .as_raw()
        .iter()
        .zip(y.as_raw())
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(sum / x.as_raw().len() as f64)
}

/// `10·log10(255²/MSE)` with the MSE taken over all channels jointly.
pub fn psnr(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (PEAK * PEAK / m).log10()).min(PSNR_CAP_DB))
}

/// Bits per pixel per channel.
pub fn bpp(bytes: usize, height: usize, width: usize, channels: usize) -> Result<f64> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::dim("bpp of an empty image"));
    }
    Ok(bytes as f64 * 8.0 / (height * width * channels) as f64)
}

/// One channel as a row-major f64 plane.
#[derive(Debug, Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &RgbImage, c: usize) -> Self {
        Self {
            h: img.height() as usize,
            w: img.width() as usize,
            v: img.as_raw().iter().skip(c).step_by(3).map(|&p| p as f64).collect(),
        }
    }

    /// 2×2 average pooling, odd trailing row/column dropped.
    fn downsample(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let a = |r: usize, c: usize| self.v[r * self.w + c];
                v.push(
                    (a(2 * i, 2 * j) + a(2 * i, 2 * j + 1) + a(2 * i + 1, 2 * j) + a(2 * i + 1, 2 * j + 1))
                        / 4.0,
                );
            }
        }
        Self { h, w, v }
    }
}

fn window_1d() -> Vec<f64> {
    let n = SSIM_WINDOW as i64;
    let c = (n - 1) as f64 / 2.0;
    let sigma = SSIM_SIGMA;
    let g: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable Gaussian filter.
fn filter(p: &Plane, g: &[f64]) -> Plane {
    let n = g.len();
    let (oh, ow) = (p.h - n + 1, p.w - n + 1);
    let mut tmp = vec![0.0; p.h * ow];
    for r in 0..p.h {
        for c in 0..ow {
            tmp[r * ow + c] = (0..n).map(|k| g[k] * p.v[r * p.w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| g[k] * tmp[(r + k) * ow + c]).sum();
        }
    }
    Plane { h: oh, w: ow, v: out }
}

/// Mean SSIM and mean contrast-structure term of one channel.
fn ssim_cs(x: &Plane, y: &Plane) -> (f64, f64) {
    let g = window_1d();
    let c1 = (K1 * PEAK).powi(2);
    let c2 = (K2 * PEAK).powi(2);
    let prod = |a: &Plane, b: &Plane| Plane {
        h: a.h,
        w: a.w,
        v: a.v.iter().zip(&b.v).map(|(p, q)| p * q).collect(),
    };
    let mx = filter(x, &g);
    let my = filter(y, &g);
    let sxx = filter(&prod(x, x), &g);
    let syy = filter(&prod(y, y), &g);
    let sxy = filter(&prod(x, y), &g);
    let n = mx.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - ux * ux;
        let vy = syy.v[i] - uy * uy;
        let cov = sxy.v[i] - ux * uy;
        let l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

/// Single-scale SSIM (11×11 Gaussian, σ = 1.5, valid windows), averaged
/// over RGB channels.
pub fn ssim(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_same(x, y)?;
    check_min_side(x, 1)?;
    Ok((0..3)
        .map(|c| ssim_cs(&Plane::channel(x, c), &Plane::channel(y, c)).0)
        .sum::<f64>()
        / 3.0)
}

/// Largest scale count (≤ 5) whose coarsest level still fits one window.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let side = height.min(width);
    (1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&n| (SSIM_WINDOW - 1) * (1 << (n - 1)) + 1 <= side)
        .unwrap_or(0)
}

fn check_min_side(x: &RgbImage, scales: usize) -> Result<()> {
    let need = (SSIM_WINDOW - 1) * (1 << (scales - 1)) + 1;
    let side = x.width().min(x.height()) as usize;
    if side < need {
        return Err(Error::dim(format!(
            "{scales}-scale SSIM needs a side of at least {need}, got {side}"
        )));
    }
    Ok(())
}

/// MS-SSIM with as many scales as the image allows, weights renormalized
/// when fewer than five fit.
pub fn ms_ssim(x: &RgbImage, y: &RgbImage) -> Result<f64> {
    check_same(x, y)?;
    let n = ms_ssim_scales(x.height() as usize, x.width() as usize);
    if n == 0 {
        return Err(Error::dim(format!(
            "image {}×{} is smaller than one {SSIM_WINDOW}×{SSIM_WINDOW} window",
            x.height(),
            x.width()
        )));
    }
    ms_ssim_with_scales(x, y, n)
}

/// `∏ cs_j^{w_j} · ssim_n^{w_n}` per channel, averaged over RGB.
pub fn ms_ssim_with_scales(x: &RgbImage, y: &RgbImage, scales: usize) -> Result<f64> {
    check_same(x, y)?;
    if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
        return Err(Error::dim(format!("scale count {scales} not in 1..=5")));
    }
    check_min_side(x, scales)?;
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / wsum).collect();
    let mut total = 0.0;
    for c in 0..3 {
        let (mut px, mut py) = (Plane::channel(x, c), Plane::channel(y, c));
        let mut value = 1.0;
        for (j, w) in weights.iter().enumerate() {
            let (s, cs) = ssim_cs(&px, &py);
            let term = if j + 1 == scales { s } else { cs };
            value *= term.max(0.0).powf(*w);
            if j + 1 < scales {
                px = px.downsample();
                py = py.downsample();
            }
        }
        total += value;
    }
    Ok((total / 3.0).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(h: u32, w: u32, seed: u32) -> RgbImage {
        let mut s = seed.wrapping_mul(2654435761).wrapping_add(1);
        RgbImage::from_fn(w, h, |_, _| {
            let mut px = [0u8; 3];
            for p in &mut px {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                *p = (s >> 24) as u8;
            }
            image::Rgb(px)
        })
    }

    #[test]
    fn psnr_cap_and_symmetry() {
        let a = noise(16, 16, 1);
        let b = noise(16, 16, 2);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn bpp_arithmetic() {
        assert_eq!(bpp(24576, 256, 256, 3).unwrap(), 1.0);
        assert!((bpp(9831, 512, 512, 3).unwrap() - 0.100006103515625).abs() < 1e-12);
        assert_eq!(bpp(0, 4, 4, 3).unwrap(), 0.0);
        assert!(bpp(1, 0, 4, 3).is_err());
    }

    #[test]
    fn scale_count_follows_size() {
        assert_eq!(ms_ssim_scales(161, 200), 5);
        assert_eq!(ms_ssim_scales(160, 200), 4);
        assert_eq!(ms_ssim_scales(32, 32), 2);
        assert_eq!(ms_ssim_scales(11, 11), 1);
        assert_eq!(ms_ssim_scales(10, 64), 0);
    }

    #[test]
    fn ms_ssim_luminance_penalty() {
        let a = RgbImage::from_pixel(64, 64, image::Rgb([40, 40, 40]));
        let b = RgbImage::from_pixel(64, 64, image::Rgb([220, 220, 220]));
        assert!(ms_ssim(&a, &b).unwrap() < 1.0);
        assert!(ms_ssim(&noise(8, 8, 0), &noise(8, 8, 0)).is_err());
    }

    #[test]
    fn ms_ssim_symmetric_and_bounded() {
        let a = noise(48, 40, 3);
        let b = noise(48, 40, 4);
        let ab = ms_ssim(&a, &b).unwrap();
        assert!((ab - ms_ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&ab));
    }
}
