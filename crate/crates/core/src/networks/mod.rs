//! CompNet, FineNet and the two-scale discriminator.

mod convnet;
pub mod segmentation;
pub mod spec;
pub mod vgg;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use convnet::ConvNet;
pub use segmentation::{
    encode_segmentation_input, one_hot_batch, one_hot_tensor, CommandSegmenter, MapTable, PrecomputedMaps,
    Segmenter,
};
pub use spec::NetworkSpec;
pub use vgg::{FeatureExtractor, IdentityExtractor, Vgg19};

use crate::error::{Error, Result};
use crate::image::{ImagePlane, SegmentationMap};
use crate::nn::ParamStore;
use crate::resample;
use crate::weights::WeightsFile;

pub const COMPNET_PREFIX: &str = "compnet";
pub const FINENET_PREFIX: &str = "finenet";
pub const DISC_PREFIXES: [&str; 2] = ["disc1", "disc2"];

/// Pipeline configurations compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// `x′ = c′`; FineNet is never run.
    #[serde(rename = "upComp")]
    UpComp,
    /// Perceptual losses kept for every epoch.
    #[serde(rename = "synth")]
    Synth,
    /// Neither network sees the segmentation map.
    #[serde(rename = "noSeg")]
    NoSeg,
    /// Full pipeline.
    #[serde(rename = "withSeg")]
    WithSeg,
}

impl Variant {
    /// Column order of the ablation table.
    pub const ALL: [Variant; 4] = [
        Variant::UpComp,
        Variant::Synth,
        Variant::NoSeg,
        Variant::WithSeg,
    ];

    pub fn uses_segmentation(self) -> bool {
        self != Variant::NoSeg
    }

    pub fn uses_finenet(self) -> bool {
        self != Variant::UpComp
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::UpComp => "upComp",
            Variant::Synth => "synth",
            Variant::NoSeg => "noSeg",
            Variant::WithSeg => "withSeg",
        }
    }

    /// Variant whose trained weights serve this one. `upComp` reuses the
    /// full model and simply skips FineNet.
    pub fn weights_variant(self) -> Variant {
        match self {
            Variant::UpComp => Variant::WithSeg,
            v => v,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Architecture hyper-parameters. The reference configuration is
/// `base_filters = 64`, `res_blocks = 9`, `alpha = 8`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_labels: usize,
    pub alpha: usize,
    pub base_filters: usize,
    pub res_blocks: usize,
    pub disc_filters: usize,
    pub use_segmentation: bool,
}

impl NetworkConfig {
    pub fn reference(num_labels: usize) -> Self {
        Self {
            num_labels,
            alpha: 8,
            base_filters: 64,
            res_blocks: 9,
            disc_filters: 64,
            use_segmentation: true,
        }
    }

    fn seg_channels(&self) -> usize {
        if self.use_segmentation {
            self.num_labels
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        spec::downsampling_layers(self.alpha)?;
        if self.num_labels == 0 || self.num_labels > 255 {
            return Err(Error::Config(format!(
                "num_labels {} outside 1..=255",
                self.num_labels
            )));
        }
        if self.base_filters == 0 || self.disc_filters == 0 {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        Ok(())
    }
}

/// `(x, s) ↦ c`, an α×-downsampled 3-channel image in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct CompNet {
    net: ConvNet,
    alpha: usize,
    use_segmentation: bool,
}

impl CompNet {
    pub fn forward(&self, x: &Tensor, seg: Option<&Tensor>) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        if h % self.alpha != 0 || w % self.alpha != 0 {
            return Err(Error::dim(format!(
                "{h}×{w} input is not divisible by α = {}",
                self.alpha
            )));
        }
        let input = condition(seg, self.use_segmentation, &[x])?;
        self.net.forward(&input)
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }
}

/// `(s, c′) ↦ f`, the fine-information image added to `c′`.
#[derive(Debug, Clone)]
pub struct FineNet {
    net: ConvNet,
    use_segmentation: bool,
}

impl FineNet {
    pub fn forward(&self, seg: Option<&Tensor>, c_up: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = c_up.dims4()?;
        if h % 8 != 0 || w % 8 != 0 {
            return Err(Error::dim(format!("FineNet input {h}×{w} is not divisible by 8")));
        }
        let input = condition(seg, self.use_segmentation, &[c_up])?;
        self.net.forward(&input)
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }
}

/// Output of one discriminator: logit score map plus intermediate features
/// (shallowest first, one per `C_k` layer).
#[derive(Debug, Clone)]
pub struct DiscOutput {
    pub score: Tensor,
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    net: ConvNet,
    scale: usize,
    use_segmentation: bool,
}

impl Discriminator {
    /// Judges `image` conditioned on the segmentation and the upsampled
    /// compact image.
    pub fn forward(&self, seg: Option<&Tensor>, c_up: &Tensor, image: &Tensor) -> Result<DiscOutput> {
        if c_up.dims() != image.dims() {
            return Err(Error::dim(format!(
                "conditioning image {:?} vs judged image {:?}",
                c_up.dims(),
                image.dims()
            )));
        }
        let mut input = condition(seg, self.use_segmentation, &[c_up, image])?;
        if self.scale == 2 {
            input = resample::downsample2(&input)?;
        }
        let (_, _, h, w) = input.dims4()?;
        let need = self.net.spec().downsampling();
        if h < need || w < need {
            return Err(Error::dim(format!(
                "discriminator at scale {} needs inputs of at least {}×{}, got {}×{} after scaling",
                self.scale,
                need * self.scale,
                need * self.scale,
                h,
                w
            )));
        }
        let (score, features) = self.net.forward_with_features(&input)?;
        Ok(DiscOutput { score, features })
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.net.spec()
    }
}

fn condition(seg: Option<&Tensor>, use_segmentation: bool, images: &[&Tensor]) -> Result<Tensor> {
    let mut parts: Vec<Tensor> = Vec::with_capacity(images.len() + 1);
    if use_segmentation {
        let seg = seg.ok_or_else(|| Error::dim("network expects a segmentation input"))?;
        let (sn, _, sh, sw) = seg.dims4()?;
        let (n, _, h, w) = images[0].dims4()?;
        if (sn, sh, sw) != (n, h, w) {
            return Err(Error::dim(format!(
                "segmentation {sn}×{sh}×{sw} does not match image {n}×{h}×{w}"
            )));
        }
        parts.push(seg.to_dtype(images[0].dtype())?);
    }
    parts.extend(images.iter().map(|t| (*t).clone()));
    Ok(Tensor::cat(&parts, 1)?)
}

pub fn build_compnet(store: &mut ParamStore, config: &NetworkConfig) -> Result<CompNet> {
    let spec = NetworkSpec::compnet(3 + config.seg_channels(), config.base_filters, config.alpha)?;
    Ok(CompNet {
        net: ConvNet::build(store, COMPNET_PREFIX, &spec)?,
        alpha: config.alpha,
        use_segmentation: config.use_segmentation,
    })
}

pub fn build_finenet(store: &mut ParamStore, config: &NetworkConfig) -> Result<FineNet> {
    let spec = NetworkSpec::finenet(3 + config.seg_channels(), config.base_filters, config.res_blocks);
    Ok(FineNet {
        net: ConvNet::build(store, FINENET_PREFIX, &spec)?,
        use_segmentation: config.use_segmentation,
    })
}

pub fn build_discriminator(
    store: &mut ParamStore,
    config: &NetworkConfig,
    scale: usize,
) -> Result<Discriminator> {
    if scale != 1 && scale != 2 {
        return Err(Error::Config(format!("discriminator scale {scale} not in {{1, 2}}")));
    }
    let spec = NetworkSpec::discriminator(6 + config.seg_channels(), config.disc_filters);
    Ok(Discriminator {
        net: ConvNet::build(store, DISC_PREFIXES[scale - 1], &spec)?,
        scale,
        use_segmentation: config.use_segmentation,
    })
}

/// Generator output for a batch.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// compact image `c`
    pub compact: Tensor,
    /// upsampled compact image `c′`
    pub upsampled: Tensor,
    /// `x′ = c′ + f` (equal to `c′` when FineNet is skipped)
    pub coarse: Tensor,
}

/// Every trainable network of the codec with its parameter store.
pub struct DsslicNetworks {
    config: NetworkConfig,
    store: ParamStore,
    pub compnet: CompNet,
    pub finenet: FineNet,
    pub discriminators: [Discriminator; 2],
}

impl fmt::Debug for DsslicNetworks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DsslicNetworks")
            .field("config", &self.config)
            .field("parameters", &self.store.len())
            .finish()
    }
}

impl DsslicNetworks {
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let compnet = build_compnet(&mut store, &config)?;
        let finenet = build_finenet(&mut store, &config)?;
        let d1 = build_discriminator(&mut store, &config, 1)?;
        let d2 = build_discriminator(&mut store, &config, 2)?;
        Ok(Self {
            config,
            store,
            compnet,
            finenet,
            discriminators: [d1, d2],
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        self.store.device()
    }

    pub fn generator_params(&self) -> Vec<(String, Var)> {
        self.store.select(&[COMPNET_PREFIX, FINENET_PREFIX])
    }

    pub fn discriminator_params(&self) -> Vec<(String, Var)> {
        self.store.select(&DISC_PREFIXES)
    }

    /// Makes FineNet emit exactly zero (its output projection is zeroed, so
    /// `tanh(0) = 0`).
    pub fn zero_finenet_output(&self) -> Result<()> {
        let last = self.finenet.spec().layers.len() - 1;
        self.store.zero_prefix(&format!("{FINENET_PREFIX}.{last}."))
    }

    /// One-hot batch for the configured label count, or `None` when the
    /// networks ignore segmentation.
    pub fn segmentation_input(&self, maps: &[&SegmentationMap]) -> Result<Option<Tensor>> {
        if !self.config.use_segmentation {
            return Ok(None);
        }
        for m in maps {
            if m.num_labels() != self.config.num_labels {
                return Err(Error::WeightsMismatch(format!(
                    "segmentation has {} labels, networks expect {}",
                    m.num_labels(),
                    self.config.num_labels
                )));
            }
        }
        Ok(Some(one_hot_batch(maps, DType::F32, self.device())?))
    }

    /// `c′ = upsample(c)`.
    pub fn upsample(&self, compact: &Tensor) -> Result<Tensor> {
        resample::upsample_bilinear(compact, self.config.alpha)
    }

    /// `c′ + FineNet(s, c′)`, or `c′` alone when `use_finenet` is false.
    pub fn recnet(&self, seg: Option<&Tensor>, upsampled: &Tensor, use_finenet: bool) -> Result<Tensor> {
        if !use_finenet {
            return Ok(upsampled.clone());
        }
        let f = self.finenet.forward(seg, upsampled)?;
        Ok((upsampled + f)?)
    }

    /// Full generator pass `x ↦ (c, c′, x′)`.
    pub fn generate(&self, x: &Tensor, seg: Option<&Tensor>, use_finenet: bool) -> Result<Reconstruction> {
        let compact = self.compnet.forward(x, seg)?;
        let upsampled = self.upsample(&compact)?;
        let coarse = self.recnet(seg, &upsampled, use_finenet)?;
        Ok(Reconstruction {
            compact,
            upsampled,
            coarse,
        })
    }

    pub fn to_weights_file(&self, variant: Variant) -> Result<WeightsFile> {
        let mut file = WeightsFile::new("dsslic-networks");
        file.set_meta("network", &self.config)?;
        file.set_meta("variant", &variant)?;
        file.tensors = self.store.export()?;
        Ok(file)
    }

    pub fn save(&self, path: &Path, variant: Variant) -> Result<()> {
        self.to_weights_file(variant)?.save(path)
    }

    /// Restores networks from a weights file; returns them with the variant
    /// they were trained for.
    pub fn from_weights_file(file: &WeightsFile) -> Result<(Self, Variant)> {
        file.expect_kind("dsslic-networks")?;
        let config: NetworkConfig = file.meta("network")?;
        let variant: Variant = file.meta("variant")?;
        let nets = Self::new(config, 0)?;
        nets.store.import(&file.tensors)?;
        Ok((nets, variant))
    }

    pub fn load(path: &Path) -> Result<(Self, Variant)> {
        Self::from_weights_file(&WeightsFile::load(path)?)
    }

    /// Batch of planes as an `N × 3 × h × w` tensor.
    pub fn image_batch(&self, planes: &[&ImagePlane]) -> Result<Tensor> {
        let parts = planes
            .iter()
            .map(|p| p.to_tensor(DType::F32, self.device()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&parts, 0)?)
    }
}
