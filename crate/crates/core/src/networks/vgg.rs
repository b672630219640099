//! Feature extractors for the perceptual loss.

use std::path::Path;

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Padding, ParamStore};
use crate::weights::WeightsFile;

/// Produces an ordered list of feature maps for an `N × 3 × h × w` batch in
/// `[-1, 1]`.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>>;
}

/// Returns its input as the single feature map.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityExtractor;

impl FeatureExtractor for IdentityExtractor {
    fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        Ok(vec![x.clone()])
    }
}

/// Convolution widths of the 19-layer VGG feature stack; `0` marks a 2×2 max pool.
const VGG19_LAYOUT: [usize; 21] = [
    64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
];

/// Indices (into the torchvision `features` sequence) of the ReLU outputs
/// tapped for the loss: relu1_1, relu2_1, relu3_1, relu4_1, relu5_1.
pub const VGG19_TAPS: [usize; 5] = [1, 6, 11, 20, 29];

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Pretrained VGG-19 feature stack. Parameters are named
/// `features.{i}.weight` / `features.{i}.bias` using torchvision's layer
/// indices, so converted torchvision weights load without renaming.
pub struct Vgg19 {
    store: ParamStore,
    /// (torchvision index, conv) in order; pools sit between groups.
    convs: Vec<(usize, Option<Conv2d>)>,
}

impl Vgg19 {
    /// Randomly initialized network; useful for shape checks.
    pub fn untrained(seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(seed);
        let mut convs = Vec::new();
        let mut index = 0;
        let mut in_ch = 3;
        for &width in &VGG19_LAYOUT {
            if width == 0 {
                convs.push((index, None));
                index += 1;
            } else {
                let conv = Conv2d::new(
                    &mut store,
                    &format!("features.{index}"),
                    in_ch,
                    width,
                    3,
                    1,
                    Padding::Zero(1),
                )?;
                convs.push((index, Some(conv)));
                in_ch = width;
                // conv + relu
                index += 2;
            }
        }
        Ok(Self { store, convs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = WeightsFile::load(path)?;
        let net = Self::untrained(0)?;
        net.store.import(&file.tensors)?;
        Ok(net)
    }

    fn normalize(x: &Tensor) -> Result<Tensor> {
        let dev = x.device();
        let mean = stat(&IMAGENET_MEAN, dev)?.to_dtype(x.dtype())?;
        let std = stat(&IMAGENET_STD, dev)?.to_dtype(x.dtype())?;
        let unit = ((x + 1.0)? * 0.5)?;
        Ok(unit.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }
}

fn stat(v: &[f64; 3], dev: &Device) -> Result<Tensor> {
    Ok(Tensor::from_slice(v, (1, 3, 1, 1), dev)?)
}

impl FeatureExtractor for Vgg19 {
    fn extract(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, _, _) = x.dims4()?;
        if c != 3 {
            return Err(Error::dim(format!("VGG expects 3 channels, got {c}")));
        }
        let mut h = Self::normalize(x)?;
        let mut taps = Vec::with_capacity(VGG19_TAPS.len());
        for (index, conv) in &self.convs {
            match conv {
                Some(conv) => {
                    h = conv.forward(&h)?.relu()?;
                    if VGG19_TAPS.contains(&(index + 1)) {
                        taps.push(h.clone());
                    }
                }
                None => {
                    if taps.len() == VGG19_TAPS.len() {
                        break;
                    }
                    h = h.max_pool2d(2)?;
                }
            }
        }
        Ok(taps)
    }
}
