use candle_core::Tensor;

use super::spec::{Activation, LayerKind, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ConvTranspose2d, Padding, ParamStore};

#[derive(Debug, Clone)]
enum Block {
    Conv {
        conv: Conv2d,
        norm: bool,
        activation: Activation,
    },
    Up {
        conv: ConvTranspose2d,
        norm: bool,
        activation: Activation,
    },
    Residual {
        first: Conv2d,
        second: Conv2d,
    },
}

/// A feed-forward stack instantiated from a [`NetworkSpec`].
#[derive(Debug, Clone)]
pub struct ConvNet {
    spec: NetworkSpec,
    blocks: Vec<Block>,
}

impl ConvNet {
    pub fn build(store: &mut ParamStore, prefix: &str, spec: &NetworkSpec) -> Result<Self> {
        let mut blocks = Vec::with_capacity(spec.layers.len());
        let mut in_ch = spec.in_channels;
        for (i, layer) in spec.layers.iter().enumerate() {
            let name = format!("{prefix}.{i}");
            blocks.push(build_block(store, &name, in_ch, layer)?);
            in_ch = layer.filters;
        }
        if in_ch != spec.out_channels {
            return Err(Error::Config(format!(
                "{prefix}: last layer has {in_ch} filters, expected {}",
                spec.out_channels
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            blocks,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    /// Runs the stack and also returns the output of every normalized
    /// downsampling layer (`C_k` blocks), shallowest first.
    pub fn forward_with_features(&self, x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let mut h = x.clone();
        let mut features = Vec::new();
        for (block, layer) in self.blocks.iter().zip(&self.spec.layers) {
            h = block.forward(&h)?;
            if layer.kind == LayerKind::DiscConv {
                features.push(h.clone());
            }
        }
        Ok((h, features))
    }
}

fn build_block(
    store: &mut ParamStore,
    name: &str,
    in_ch: usize,
    layer: &LayerSpec,
) -> Result<Block> {
    let out = layer.filters;
    let block = match layer.kind {
        LayerKind::Conv7 => Block::Conv {
            conv: Conv2d::new(store, name, in_ch, out, 7, 1, Padding::Zero(3))?,
            norm: layer.norm,
            activation: layer.activation,
        },
        LayerKind::Down => Block::Conv {
            conv: Conv2d::new(store, name, in_ch, out, 3, 2, Padding::Zero(1))?,
            norm: layer.norm,
            activation: layer.activation,
        },
        LayerKind::DiscConv => Block::Conv {
            conv: Conv2d::new(store, name, in_ch, out, 4, 2, Padding::Zero(1))?,
            norm: layer.norm,
            activation: layer.activation,
        },
        LayerKind::Score => Block::Conv {
            conv: Conv2d::new(store, name, in_ch, out, 3, 1, Padding::Zero(1))?,
            norm: layer.norm,
            activation: layer.activation,
        },
        LayerKind::Up => Block::Up {
            conv: ConvTranspose2d::new(store, name, in_ch, out)?,
            norm: layer.norm,
            activation: layer.activation,
        },
        LayerKind::Residual => {
            if in_ch != out {
                return Err(Error::Config(format!(
                    "{name}: residual block needs matching channels ({in_ch} vs {out})"
                )));
            }
            Block::Residual {
                first: Conv2d::new(store, &format!("{name}.a"), out, out, 3, 1, Padding::Reflect(1))?,
                second: Conv2d::new(store, &format!("{name}.b"), out, out, 3, 1, Padding::Reflect(1))?,
            }
        }
    };
    Ok(block)
}

impl Block {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Conv {
                conv,
                norm,
                activation,
            } => finish(conv.forward(x)?, *norm, *activation),
            Block::Up {
                conv,
                norm,
                activation,
            } => finish(conv.forward(x)?, *norm, *activation),
            Block::Residual { first, second } => {
                let h = nn::instance_norm(&first.forward(x)?)?.relu()?;
                let h = nn::instance_norm(&second.forward(&h)?)?;
                Ok((x + h)?)
            }
        }
    }
}

fn finish(x: Tensor, norm: bool, activation: Activation) -> Result<Tensor> {
    let x = if norm { nn::instance_norm(&x)? } else { x };
    Ok(match activation {
        Activation::Relu => x.relu()?,
        Activation::LeakyRelu => nn::leaky_relu(&x)?,
        Activation::Tanh => x.tanh()?,
        Activation::Identity => x,
    })
}
