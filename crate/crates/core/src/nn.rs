//! Minimal layer toolkit on top of candle tensors: parameter storage with
//! seeded initialization, convolutions, instance normalization and
//! reflection padding.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

/// Named trainable tensors. Iteration order is the lexical order of names,
/// which keeps optimizer state and weight files stable across runs.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: Device::Cpu,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, data: Vec<f32>, shape: &[usize]) -> Result<Var> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let var = Var::from_tensor(&Tensor::from_vec(data, shape, &self.device)?)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    /// Zero-mean Gaussian initialization with σ = 0.02.
    pub fn gaussian(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Var> {
        let n = shape.iter().product();
        let normal = Normal::new(0.0f32, INIT_STD as f32).expect("valid std");
        let data = (0..n).map(|_| normal.sample(&mut self.rng)).collect();
        self.insert(name.into(), data, shape)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Var> {
        let n = shape.iter().product();
        self.insert(name.into(), vec![0.0; n], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Parameters whose name starts with one of `prefixes`.
    pub fn select(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Snapshot of every parameter as flat f32 data.
    pub fn export(&self) -> Result<Vec<NamedTensor>> {
        self.vars
            .iter()
            .map(|(name, var)| NamedTensor::from_tensor(name.clone(), var.as_tensor()))
            .collect()
    }

    /// Overwrites parameters in place. Every stored parameter must be present
    /// with an identical shape; extra entries in `tensors` are ignored.
    pub fn import(&self, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: BTreeMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for (name, var) in &self.vars {
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::WeightsMismatch(format!("missing parameter `{name}`")))?;
            if t.shape != var.dims() {
                return Err(Error::WeightsMismatch(format!(
                    "`{name}` has shape {:?}, expected {:?}",
                    t.shape,
                    var.dims()
                )));
            }
            var.set(&t.to_tensor(&self.device)?)?;
        }
        Ok(())
    }

    /// Sets every parameter matching `prefix` to zero.
    pub fn zero_prefix(&self, prefix: &str) -> Result<()> {
        for (name, var) in &self.vars {
            if name.starts_with(prefix) {
                var.set(&var.as_tensor().zeros_like()?)?;
            }
        }
        Ok(())
    }
}

/// Host-side copy of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_tensor(name: String, t: &Tensor) -> Result<Self> {
        Ok(Self {
            name,
            shape: t.dims().to_vec(),
            data: t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?,
        })
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(&self.data, self.shape.as_slice(), device)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero(usize),
    Reflect(usize),
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: Padding,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let weight = store.gaussian(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel])?;
        let bias = store.zeros(format!("{name}.bias"), &[out_ch])?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (x, pad) = match self.padding {
            Padding::Zero(p) => (x.clone(), p),
            Padding::Reflect(p) => (reflect_pad(x, p)?, 0),
        };
        let w = self.weight.as_tensor().to_dtype(x.dtype())?;
        let b = self.bias.as_tensor().to_dtype(x.dtype())?;
        let y = x.conv2d(&w, pad, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?)
    }
}

/// 3×3 stride-2 transposed convolution that exactly doubles spatial dims.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
}

impl ConvTranspose2d {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize) -> Result<Self> {
        let weight = store.gaussian(format!("{name}.weight"), &[in_ch, out_ch, 3, 3])?;
        let bias = store.zeros(format!("{name}.bias"), &[out_ch])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor().to_dtype(x.dtype())?;
        let b = self.bias.as_tensor().to_dtype(x.dtype())?;
        // (h - 1)·2 - 2·1 + 3 + 1 = 2h
        let y = x.conv_transpose2d(&w, 1, 1, 2, 1)?;
        Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?)
    }
}

/// Per-sample, per-channel normalization without affine parameters.
pub fn instance_norm(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?.mean_keepdim(D::Minus2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered
        .sqr()?
        .mean_keepdim(D::Minus1)?
        .mean_keepdim(D::Minus2)?;
    let denom = (var + INSTANCE_NORM_EPS)?.sqrt()?;
    Ok(centered.broadcast_div(&denom)?)
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * LEAKY_SLOPE)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Mirror padding without repeating the edge sample. Dimensions too small to
/// mirror fall back to edge replication.
pub fn reflect_pad(x: &Tensor, pad: usize) -> Result<Tensor> {
    if pad == 0 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let rows = Tensor::new(reflect_indices(h, pad).as_slice(), x.device())?;
    let cols = Tensor::new(reflect_indices(w, pad).as_slice(), x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

fn reflect_indices(n: usize, pad: usize) -> Vec<u32> {
    let last = n as i64 - 1;
    (-(pad as i64)..(n + pad) as i64)
        .map(|mut i| {
            if last == 0 {
                return 0;
            }
            // fold until inside [0, last]
            loop {
                if i < 0 {
                    i = -i;
                } else if i > last {
                    i = 2 * last - i;
                } else {
                    break i as u32;
                }
            }
        })
        .collect()
}
