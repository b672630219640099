//! Fixed (non-learned) resampling used between the compact and full-resolution
//! domains.
//!
//! Bilinear upsampling is expressed as `A_h · x · A_wᵀ` with constant
//! interpolation matrices so it stays differentiable and bit-identical between
//! the encoder and decoder.

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

/// `(n·factor) × n` half-pixel-centred bilinear interpolation matrix.
pub fn bilinear_matrix(n: usize, factor: usize) -> Vec<f64> {
    let out = n * factor;
    let mut m = vec![0.0; out * n];
    for i in 0..out {
        let src = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        let t = src - i0 as f64;
        m[i * n + i0] += 1.0 - t;
        m[i * n + i1] += t;
    }
    m
}

/// Bilinear upsampling of an `N × C × h × w` tensor by an integer factor.
pub fn upsample_bilinear(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::dim("upsampling factor must be positive"));
    }
    if factor == 1 {
        return Ok(x.clone());
    }
    let (n, c, h, w) = x.dims4()?;
    let dtype = x.dtype();
    let dev = x.device();
    let ah = matrix(&bilinear_matrix(h, factor), (h * factor, h), dev)?.to_dtype(dtype)?;
    let awt = matrix(&bilinear_matrix(w, factor), (w * factor, w), dev)?
        .t()?
        .contiguous()?
        .to_dtype(dtype)?;
    let flat = x.reshape((n * c, h, w))?;
    let rows = ah.broadcast_matmul(&flat)?;
    let out = rows.broadcast_matmul(&awt)?;
    Ok(out.reshape((n, c, h * factor, w * factor))?)
}

/// 2× average pooling; both spatial dims must be even.
pub fn downsample2(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("cannot halve {h}×{w}")));
    }
    Ok(x.avg_pool2d(2)?)
}

fn matrix(data: &[f64], shape: (usize, usize), dev: &Device) -> Result<Tensor> {
    Ok(Tensor::from_slice(data, shape, dev)?)
}
