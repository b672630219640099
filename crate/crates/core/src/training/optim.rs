//! Adam with exportable state.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::NamedTensor;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug)]
pub struct Adam {
    params: Vec<(String, Var)>,
    beta1: f64,
    beta2: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(params: Vec<(String, Var)>, beta1: f64, beta2: f64) -> Self {
        Self {
            params,
            beta1,
            beta2,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// left alone.
    pub fn step(&mut self, grads: &GradStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var) in &self.params {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients carry their op graph; keeping it would chain every step
            let g = &g.detach();
            let m = match self.m.get(name) {
                Some(m) => ((m * self.beta1)? + (g * (1.0 - self.beta1))?)?,
                None => (g * (1.0 - self.beta1))?,
            };
            let v = match self.v.get(name) {
                Some(v) => ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?,
                None => (g.sqr()? * (1.0 - self.beta2))?,
            };
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            // θ − (−0.0) would turn −0.0 into +0.0
            if lr != 0.0 {
                let update = ((m_hat / (v_hat.sqrt()? + ADAM_EPS)?)? * lr)?;
                var.set(&var.as_tensor().sub(&update)?)?;
            }
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(())
    }

    /// Moments as `{prefix}.m.{param}` / `{prefix}.v.{param}` tensors.
    pub fn export(&self, prefix: &str) -> Result<Vec<NamedTensor>> {
        let mut out = Vec::new();
        for (kind, map) in [("m", &self.m), ("v", &self.v)] {
            for (name, t) in map {
                out.push(NamedTensor::from_tensor(format!("{prefix}.{kind}.{name}"), t)?);
            }
        }
        Ok(out)
    }

    /// Restores state written by [`Adam::export`].
    pub fn import(&mut self, prefix: &str, step: u64, tensors: &[NamedTensor]) -> Result<()> {
        let shapes: BTreeMap<&str, Vec<usize>> = self
            .params
            .iter()
            .map(|(n, v)| (n.as_str(), v.as_tensor().dims().to_vec()))
            .collect();
        let device = self
            .params
            .first()
            .map(|(_, v)| v.as_tensor().device().clone())
            .unwrap_or(candle_core::Device::Cpu);
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for t in tensors {
            let Some(rest) = t.name.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) else {
                continue;
            };
            let (kind, name) = rest
                .split_once('.')
                .ok_or_else(|| Error::Weights(format!("malformed optimizer tensor {}", t.name)))?;
            let expected = shapes
                .get(name)
                .ok_or_else(|| Error::WeightsMismatch(format!("optimizer state for unknown parameter {name}")))?;
            if &t.shape != expected {
                return Err(Error::WeightsMismatch(format!(
                    "optimizer state {} has shape {:?}, parameter has {:?}",
                    t.name, t.shape, expected
                )));
            }
            let target = match kind {
                "m" => &mut m,
                "v" => &mut v,
                _ => return Err(Error::Weights(format!("malformed optimizer tensor {}", t.name))),
            };
            target.insert(name.to_string(), t.to_tensor(&device)?);
        }
        self.step = step;
        self.m = m;
        self.v = v;
        Ok(())
    }
}
