//! Declarative layer lists for the three architectures.
//!
//! Notation follows the usual image-to-image translation shorthand:
//! `c_k` 7×7 stride-1 conv, `d_k` 3×3 stride-2 conv, `r_k` residual block,
//! `u_k` 3×3 stride-½ (transposed) conv, `C_k` 4×4 stride-2 discriminator
//! conv. Filter counts scale with `base_filters` (64 in the reference
//! configuration).

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    /// `c_k`
    Conv7,
    /// `d_k`
    Down,
    /// `r_k`
    Residual,
    /// `u_k`
    Up,
    /// `C_k`
    DiscConv,
    /// trailing 1-filter discriminator layer
    Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stride {
    Full(usize),
    /// fractional stride ½
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub filters: usize,
    pub kernel: usize,
    pub stride: Stride,
    pub norm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    fn conv7(filters: usize) -> Self {
        Self {
            kind: LayerKind::Conv7,
            filters,
            kernel: 7,
            stride: Stride::Full(1),
            norm: true,
            activation: Activation::Relu,
        }
    }

    /// Output projection: `c_k` without normalization, followed by tanh.
    fn conv7_tanh(filters: usize) -> Self {
        Self {
            norm: false,
            activation: Activation::Tanh,
            ..Self::conv7(filters)
        }
    }

    fn down(filters: usize) -> Self {
        Self {
            kind: LayerKind::Down,
            filters,
            kernel: 3,
            stride: Stride::Full(2),
            norm: true,
            activation: Activation::Relu,
        }
    }

    fn residual(filters: usize) -> Self {
        Self {
            kind: LayerKind::Residual,
            filters,
            kernel: 3,
            stride: Stride::Full(1),
            norm: true,
            activation: Activation::Identity,
        }
    }

    fn up(filters: usize) -> Self {
        Self {
            kind: LayerKind::Up,
            filters,
            kernel: 3,
            stride: Stride::Half,
            norm: true,
            activation: Activation::Relu,
        }
    }

    fn disc(filters: usize) -> Self {
        Self {
            kind: LayerKind::DiscConv,
            filters,
            kernel: 4,
            stride: Stride::Full(2),
            norm: true,
            activation: Activation::LeakyRelu,
        }
    }

    fn score() -> Self {
        Self {
            kind: LayerKind::Score,
            filters: 1,
            kernel: 3,
            stride: Stride::Full(1),
            norm: false,
            activation: Activation::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// `c64, d128, d256, d512, c3, tanh` for α = 8. One `d` layer per factor
    /// of two in `alpha`.
    pub fn compnet(in_channels: usize, base_filters: usize, alpha: usize) -> Result<Self> {
        let downs = downsampling_layers(alpha)?;
        let mut layers = vec![LayerSpec::conv7(base_filters)];
        let mut filters = base_filters;
        for _ in 0..downs {
            filters = (filters * 2).min(base_filters * 8);
            layers.push(LayerSpec::down(filters));
        }
        layers.push(LayerSpec::conv7_tanh(3));
        Ok(Self {
            in_channels,
            out_channels: 3,
            layers,
        })
    }

    /// `c64, d128, d256, d512, 9×r512, u256, u128, u64, c3, tanh`.
    pub fn finenet(in_channels: usize, base_filters: usize, res_blocks: usize) -> Self {
        let b = base_filters;
        let mut layers = vec![
            LayerSpec::conv7(b),
            LayerSpec::down(2 * b),
            LayerSpec::down(4 * b),
            LayerSpec::down(8 * b),
        ];
        layers.extend(std::iter::repeat_n(LayerSpec::residual(8 * b), res_blocks));
        layers.extend([
            LayerSpec::up(4 * b),
            LayerSpec::up(2 * b),
            LayerSpec::up(b),
            LayerSpec::conv7_tanh(3),
        ]);
        Self {
            in_channels,
            out_channels: 3,
            layers,
        }
    }

    /// `C64, C128, C256, C512` plus the 1-filter score layer.
    pub fn discriminator(in_channels: usize, base_filters: usize) -> Self {
        let b = base_filters;
        Self {
            in_channels,
            out_channels: 1,
            layers: vec![
                LayerSpec::disc(b),
                LayerSpec::disc(2 * b),
                LayerSpec::disc(4 * b),
                LayerSpec::disc(8 * b),
                LayerSpec::score(),
            ],
        }
    }

    /// Total spatial reduction factor of the stack.
    pub fn downsampling(&self) -> usize {
        self.layers.iter().fold(1, |acc, l| match l.stride {
            Stride::Full(s) => acc * s,
            Stride::Half => acc / 2,
        })
    }
}

impl fmt::Display for NetworkSpec {
    /// Compact notation, e.g. `c64, d128, d256, d512, 9×r512, ..., c3, tanh`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts: Vec<String> = Vec::new();
        let mut i = 0;
        while i < self.layers.len() {
            let l = self.layers[i];
            let letter = match l.kind {
                LayerKind::Conv7 => "c",
                LayerKind::Down => "d",
                LayerKind::Residual => "r",
                LayerKind::Up => "u",
                LayerKind::DiscConv => "C",
                LayerKind::Score => "score",
            };
            if l.kind == LayerKind::Score {
                i += 1;
                continue;
            }
            let run = self.layers[i..].iter().take_while(|m| **m == l).count();
            if l.kind == LayerKind::Residual && run > 1 {
                parts.push(format!("{run}×{letter}{}", l.filters));
                i += run;
            } else {
                parts.push(format!("{letter}{}", l.filters));
                i += 1;
            }
            if l.activation == Activation::Tanh {
                parts.push("tanh".into());
            }
        }
        write!(f, "{}", parts.join(", "))
    }
}

/// Number of stride-2 layers needed for a power-of-two `alpha`.
pub fn downsampling_layers(alpha: usize) -> Result<u32> {
    if alpha == 0 || !alpha.is_power_of_two() {
        return Err(Error::Config(format!(
            "downsampling factor {alpha} is not a power of two"
        )));
    }
    Ok(alpha.trailing_zeros())
}
