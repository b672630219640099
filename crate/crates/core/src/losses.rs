//! Training objectives.
//!
//! Every loss is built from differentiable tensor ops and is dtype-agnostic:
//! networks train in f32 while gradient checks run the same code in f64.
//! All ‖·‖₁ terms are mean-normalized, so loss magnitudes do not depend on
//! the training resolution.

use std::fmt;

use candle_core::{Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::FeatureExtractor;
use crate::nn::sigmoid;

/// SSIM stabilizers for statistics computed on `[0, 1]` data (L = 1).
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_C3: f64 = SSIM_C2 / 2.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logarithms.
pub const LOG_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    /// Whether the discriminator feature-matching and VGG terms enter the
    /// generator objective.
    pub include_perceptual: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            include_perceptual: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Scalar loss values of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l1: f64,
    pub ssim: f64,
    pub dis: f64,
    pub vgg: f64,
    pub adv_g: f64,
    pub d_loss: f64,
    pub g_total: f64,
    pub hybrid: f64,
}

impl LossReport {
    /// Assembles a report; perceptual terms are recorded as 0 when excluded.
    pub fn compose(
        l1: f64,
        ssim: f64,
        dis: f64,
        vgg: f64,
        adv_g: f64,
        d_loss: f64,
        include_perceptual: bool,
    ) -> Self {
        let (dis, vgg) = if include_perceptual { (dis, vgg) } else { (0.0, 0.0) };
        let g_total = adv_g + l1 + ssim + dis + vgg;
        Self {
            l1,
            ssim,
            dis,
            vgg,
            adv_g,
            d_loss,
            g_total,
            hybrid: d_loss + g_total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l1,
            self.ssim,
            self.dis,
            self.vgg,
            self.adv_g,
            self.d_loss,
            self.g_total,
            self.hybrid,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "l1={:.5} ssim={:.5} dis={:.5} vgg={:.5} adv_g={:.5} d={:.5} g={:.5} total={:.5}",
            self.l1, self.ssim, self.dis, self.vgg, self.adv_g, self.d_loss, self.g_total, self.hybrid
        )
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean absolute difference as a scalar tensor.
fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.abs()?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// `2λ · mean|x − x̂|`.
pub fn l1_loss(x: &Tensor, x_hat: &Tensor, lambda: f64) -> Result<Tensor> {
    same_shape(x, x_hat, "l1_loss")?;
    Ok((mean_abs_diff(x, x_hat)? * (2.0 * lambda))?)
}

/// Normalized Gaussian weights of a `size × size` window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / sum).collect();
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// Window side used for an `h × w` image: 11, shrunk (to an odd size) for
/// images smaller than the window.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let s = SSIM_WINDOW.min(h).min(w);
    if s % 2 == 0 {
        s - 1
    } else {
        s
    }
}

/// Local Gaussian-weighted statistics of `[0, 1]`-mapped images: means,
/// variances and covariance, each `(N·k) × 1 × h' × w'` over valid windows.
struct SsimStats {
    mu_x: Tensor,
    mu_y: Tensor,
    var_x: Tensor,
    var_y: Tensor,
    cov: Tensor,
}

/// `n_out × n` matrix applying the 1-D Gaussian over valid windows.
fn valid_filter_matrix(n: usize, size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = g.iter().sum();
    let out = n - size + 1;
    let mut m = vec![0.0; out * n];
    for r in 0..out {
        for (t, v) in g.iter().enumerate() {
            m[r * n + r + t] = v / sum;
        }
    }
    m
}

fn ssim_stats(x: &Tensor, y: &Tensor) -> Result<SsimStats> {
    same_shape(x, y, "ssim")?;
    let (n, k, h, w) = x.dims4()?;
    let size = ssim_window_size(h, w);
    let (oh, ow) = (h - size + 1, w - size + 1);
    let matrix = |len: usize, out: usize| -> Result<Tensor> {
        Ok(Tensor::from_vec(valid_filter_matrix(len, size), (out, len), &Device::Cpu)?
            .to_device(x.device())?
            .to_dtype(x.dtype())?)
    };
    // the window is the outer product of two 1-D Gaussians, so filter rows
    // and columns with banded matrices
    let gh = matrix(h, oh)?;
    let gw = matrix(w, ow)?.t()?;
    let to_unit = |t: &Tensor| -> Result<Tensor> {
        Ok(((t + 1.0)? * 0.5)?.reshape((n * k, h, w))?)
    };
    let xu = to_unit(x)?;
    let yu = to_unit(y)?;
    let stacked = Tensor::cat(&[&xu, &yu, &xu.sqr()?, &yu.sqr()?, &(&xu * &yu)?], 0)?;
    let filtered = gh.broadcast_matmul(&stacked.broadcast_matmul(&gw)?)?;
    let b = n * k;
    let part = |i: usize| -> Result<Tensor> { Ok(filtered.narrow(0, i * b, b)?.reshape((b, 1, oh, ow))?) };
    let mu_x = part(0)?;
    let mu_y = part(1)?;
    let var_x = (part(2)? - mu_x.sqr()?)?;
    let var_y = (part(3)? - mu_y.sqr()?)?;
    let cov = (part(4)? - (&mu_x * &mu_y)?)?;
    Ok(SsimStats {
        mu_x,
        mu_y,
        var_x,
        var_y,
        cov,
    })
}

/// Per-window `I·C·S` map. With `C3 = C2/2` the contrast and structure
/// factors combine to `(2σxy + C2)/(σx² + σy² + C2)`, which avoids square
/// roots (and their infinite gradient at σ = 0).
pub fn ssim_map(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let s = ssim_stats(x, y)?;
    let lum_num = ((&s.mu_x * &s.mu_y)? * 2.0)? + SSIM_C1;
    let lum_den = (s.mu_x.sqr()? + s.mu_y.sqr()?)? + SSIM_C1;
    let cs_num = (s.cov * 2.0)? + SSIM_C2;
    let cs_den = ((s.var_x + s.var_y)? + SSIM_C2)?;
    Ok(((lum_num? * cs_num?)? / (lum_den? * cs_den)?)?)
}

/// `−mean_windows(I·C·S)`, in `[−1, 1]`.
pub fn ssim_loss(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    Ok(ssim_map(x, x_hat)?.mean_all()?.neg()?)
}

/// Window-averaged luminance, contrast and structure terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimComponents {
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
    /// mean over windows of the per-window product
    pub product: f64,
}

pub fn ssim_components(x: &Tensor, x_hat: &Tensor) -> Result<SsimComponents> {
    let s = ssim_stats(x, x_hat)?;
    let flat = |t: Tensor| -> Result<Vec<f64>> {
        Ok(t.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1()?)
    };
    let (mx, my, vx, vy, cov) = (
        flat(s.mu_x)?,
        flat(s.mu_y)?,
        flat(s.var_x)?,
        flat(s.var_y)?,
        flat(s.cov)?,
    );
    let n = mx.len() as f64;
    let mut acc = [0.0f64; 4];
    for i in 0..mx.len() {
        let sx = vx[i].max(0.0).sqrt();
        let sy = vy[i].max(0.0).sqrt();
        let l = (2.0 * mx[i] * my[i] + SSIM_C1) / (mx[i] * mx[i] + my[i] * my[i] + SSIM_C1);
        let c = (2.0 * sx * sy + SSIM_C2) / (vx[i].max(0.0) + vy[i].max(0.0) + SSIM_C2);
        let st = (cov[i] + SSIM_C3) / (sx * sy + SSIM_C3);
        acc[0] += l;
        acc[1] += c;
        acc[2] += st;
        acc[3] += l * c * st;
    }
    Ok(SsimComponents {
        luminance: acc[0] / n,
        contrast: acc[1] / n,
        structure: acc[2] / n,
        product: acc[3] / n,
    })
}

/// `λ Σ_d Σ_i mean|D_d⁽ⁱ⁾(real) − D_d⁽ⁱ⁾(fake)|`. Real features should be
/// detached by the caller.
pub fn feature_matching_loss(
    real: &[Vec<Tensor>],
    fake: &[Vec<Tensor>],
    lambda: f64,
) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::dim(format!(
            "feature sets for {} and {} discriminators",
            real.len(),
            fake.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (d, (r, f)) in real.iter().zip(fake).enumerate() {
        if r.len() != f.len() {
            return Err(Error::dim(format!(
                "discriminator {d}: {} vs {} feature layers",
                r.len(),
                f.len()
            )));
        }
        for (a, b) in r.iter().zip(f) {
            same_shape(a, b, "feature_matching_loss")?;
            let term = mean_abs_diff(a, b)?;
            total = Some(match total {
                None => term,
                Some(t) => (t + term)?,
            });
        }
    }
    let total = total.ok_or_else(|| Error::dim("no feature layers"))?;
    Ok((total * lambda)?)
}

/// `λ Σ_j mean|V⁽ʲ⁾(x) − V⁽ʲ⁾(x̂)|`; features of `x` are detached.
pub fn vgg_perceptual_loss(
    x: &Tensor,
    x_hat: &Tensor,
    extractor: &dyn FeatureExtractor,
    lambda: f64,
) -> Result<Tensor> {
    same_shape(x, x_hat, "vgg_perceptual_loss")?;
    let fx = extractor.extract(&x.detach())?;
    let fy = extractor.extract(x_hat)?;
    if fx.len() != fy.len() || fx.is_empty() {
        return Err(Error::backend("feature extractor", "inconsistent feature lists"));
    }
    let mut total = mean_abs_diff(&fx[0].detach(), &fy[0])?;
    for (a, b) in fx.iter().zip(&fy).skip(1) {
        total = (total + mean_abs_diff(&a.detach(), b)?)?;
    }
    Ok((total * lambda)?)
}

/// `mean log(clamp(σ(score)))` or `mean log(1 − clamp(σ(score)))`.
fn mean_log_prob(score: &Tensor, real: bool) -> Result<Tensor> {
    let p = sigmoid(score)?;
    let p = if real { p } else { p.affine(-1.0, 1.0)? };
    Ok(p.clamp(LOG_CLAMP, 1.0 - LOG_CLAMP)?.log()?.mean_all()?)
}

/// `−Σ_d (mean log D_d(real) + mean log(1 − D_d(fake)))` over logit maps.
pub fn discriminator_loss(real_scores: &[Tensor], fake_scores: &[Tensor]) -> Result<Tensor> {
    if real_scores.len() != fake_scores.len() || real_scores.is_empty() {
        return Err(Error::dim("score lists differ in length"));
    }
    let mut total: Option<Tensor> = None;
    for (r, f) in real_scores.iter().zip(fake_scores) {
        same_shape(r, f, "discriminator_loss")?;
        let term = (mean_log_prob(r, true)? + mean_log_prob(f, false)?)?;
        total = Some(match total {
            None => term,
            Some(t) => (t + term)?,
        });
    }
    Ok(total.expect("non-empty").neg()?)
}

/// Generator adversarial term `−Σ_d mean log D_d(fake)`.
pub fn adversarial_loss(fake_scores: &[Tensor]) -> Result<Tensor> {
    let mut iter = fake_scores.iter();
    let first = iter.next().ok_or_else(|| Error::dim("no score maps"))?;
    let mut total = mean_log_prob(first, true)?;
    for s in iter {
        total = (total + mean_log_prob(s, true)?)?;
    }
    Ok(total.neg()?)
}

/// Differentiable generator terms of one step.
#[derive(Debug, Clone)]
pub struct GeneratorTerms {
    pub adversarial: Tensor,
    pub l1: Tensor,
    pub ssim: Tensor,
    pub dis: Option<Tensor>,
    pub vgg: Option<Tensor>,
}

/// Adversarial + L1 + SSIM, plus the feature-matching and VGG terms when
/// `include_perceptual` is set.
pub fn generator_loss(terms: &GeneratorTerms, weights: &LossWeights) -> Result<Tensor> {
    let mut total = ((&terms.adversarial + &terms.l1)? + &terms.ssim)?;
    if weights.include_perceptual {
        if let Some(d) = &terms.dis {
            total = (total + d)?;
        }
        if let Some(v) = &terms.vgg {
            total = (total + v)?;
        }
    }
    Ok(total)
}

/// Mean of the last two dims, used by reports on score maps.
pub fn spatial_mean(t: &Tensor) -> Result<Tensor> {
    Ok(t.mean(D::Minus1)?.mean(D::Minus1)?)
}
