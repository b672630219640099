//! Layered encode/decode.
//!
//! Encoding runs segmentation → CompNet → RecNet, then codes the residual
//! `r = x − x′` after min-max scaling to 8 bits. The decoder repeats RecNet on
//! the decoded segmentation and compact layers, which must give the
//! bit-identical `x′` the encoder used, and adds the decoded residual.
//!
//! `x′` is quantized to 8 bits before the residual is taken, so `r` is an
//! integer plane in `[−255, 255]`.

pub mod backend;
pub mod container;
pub mod minmax;

use image::{DynamicImage, RgbImage};

pub use backend::{
    BackendRegistry, BpgCodec, CommandTemplate, FlifCodec, LosslessCodec, PngCodec, ResidualCodec,
    UniformQuantizer,
};
pub use container::{
    LayerSizes, LayeredBitstream, LosslessBackendId, LossyBackendId, ParseMode, Parsed,
};
pub use minmax::{minmax_denormalize, minmax_normalize, ResidualPlane};

use crate::error::{Error, Result};
use crate::image::{round_up, ImagePlane, SegmentationMap};
use crate::networks::{DsslicNetworks, Segmenter, Variant};

/// Residual layer configuration for one encode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualSetting {
    /// Emit no residual layer (`x̃ = x′`).
    Skip,
    /// Code the residual with the given backend and quality (0 best, 51 coarsest).
    Code { backend: LossyBackendId, quality: u8 },
}

/// Encoder output together with the intermediate images, which evaluation
/// code uses for per-layer measurements.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bitstream: LayeredBitstream,
    /// `x′` quantized to 8 bits, as the decoder will reproduce it
    pub coarse: RgbImage,
    /// dequantized compact image `c`
    pub compact: ImagePlane,
    pub residual: Option<ResidualPlane>,
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub image: RgbImage,
    pub coarse: RgbImage,
    pub dropped_layers: Vec<&'static str>,
    pub warnings: Vec<String>,
}

/// A configured pipeline: trained networks, the ablation variant they run
/// as, and the layer backends.
pub struct Codec {
    networks: DsslicNetworks,
    variant: Variant,
    backends: BackendRegistry,
    lossless: LosslessBackendId,
}

impl Codec {
    /// `upComp` accepts any weights trained with segmentation; every other
    /// variant must match how the networks were built.
    pub fn new(networks: DsslicNetworks, variant: Variant, backends: BackendRegistry) -> Result<Self> {
        let seg = networks.config().use_segmentation;
        if variant.uses_segmentation() != seg {
            return Err(Error::WeightsMismatch(format!(
                "variant {variant} {} segmentation but the networks were built {} it",
                if variant.uses_segmentation() { "needs" } else { "excludes" },
                if seg { "with" } else { "without" },
            )));
        }
        if networks.config().alpha > 128 {
            return Err(Error::Config("alpha above 128 cannot be stored".into()));
        }
        let lossless = backends.preferred_lossless();
        Ok(Self {
            networks,
            variant,
            backends,
            lossless,
        })
    }

    pub fn with_lossless(mut self, id: LosslessBackendId) -> Result<Self> {
        self.backends.lossless(id)?;
        self.lossless = id;
        Ok(self)
    }

    pub fn networks(&self) -> &DsslicNetworks {
        &self.networks
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn backends(&self) -> &BackendRegistry {
        &self.backends
    }

    pub fn alpha(&self) -> usize {
        self.networks.config().alpha
    }

    /// Spatial granularity both networks need: α for CompNet, 8 for FineNet.
    pub fn pad_multiple(&self) -> usize {
        self.alpha().max(8)
    }

    /// `x′ = clip(c′ + FineNet(s, c′))` with `c′ = upsample(c)`. `seg` must
    /// already be padded to `α ×` the compact dims. FineNet is skipped for
    /// the `upComp` variant.
    pub fn recnet(&self, seg: Option<&SegmentationMap>, compact: &ImagePlane) -> Result<ImagePlane> {
        let alpha = self.alpha();
        let (ch, cw, _) = compact.dims();
        let (h, w) = (ch * alpha, cw * alpha);
        if let Some(s) = seg {
            if (s.height(), s.width()) != (h, w) {
                return Err(Error::dim(format!(
                    "segmentation {}×{} does not match upsampled compact {h}×{w}",
                    s.height(),
                    s.width()
                )));
            }
        }
        let seg_t = match seg {
            Some(s) => self.networks.segmentation_input(&[s])?,
            None if self.networks.config().use_segmentation => {
                let blank = SegmentationMap::uniform(h, w, self.networks.config().num_labels, 0)?;
                self.networks.segmentation_input(&[&blank])?
            }
            None => None,
        };
        let c = compact.to_tensor(candle_core::DType::F32, self.networks.device())?;
        let up = self.networks.upsample(&c)?;
        let x = self
            .networks
            .recnet(seg_t.as_ref(), &up, self.variant.uses_finenet())?;
        ImagePlane::from_tensor(&x, 0)
    }

    /// Encodes with a segmentation map obtained from `segmenter`.
    pub fn encode_with(
        &self,
        id: &str,
        image: &RgbImage,
        segmenter: &dyn Segmenter,
        residual: ResidualSetting,
    ) -> Result<Encoded> {
        if !self.variant.uses_segmentation() {
            return self.encode(image, None, residual);
        }
        let s = segmenter.segment(id, &ImagePlane::from_rgb8(image))?;
        self.encode(image, Some(&s), residual)
    }

    pub fn encode(
        &self,
        image: &RgbImage,
        seg: Option<&SegmentationMap>,
        residual: ResidualSetting,
    ) -> Result<Encoded> {
        let (w, h) = image.dimensions();
        let (h, w) = (h as usize, w as usize);
        let height = u16::try_from(h).map_err(|_| Error::dim(format!("height {h} exceeds 65535")))?;
        let width = u16::try_from(w).map_err(|_| Error::dim(format!("width {w} exceeds 65535")))?;
        let cfg = self.networks.config();
        let seg = if self.variant.uses_segmentation() {
            let s = seg.ok_or_else(|| Error::dim("this variant needs a segmentation map"))?;
            if (s.height(), s.width()) != (h, w) {
                return Err(Error::dim(format!(
                    "segmentation {}×{} does not match image {h}×{w}",
                    s.height(),
                    s.width()
                )));
            }
            if s.num_labels() != cfg.num_labels {
                return Err(Error::WeightsMismatch(format!(
                    "segmentation has {} labels, networks expect {}",
                    s.num_labels(),
                    cfg.num_labels
                )));
            }
            Some(s)
        } else {
            None
        };

        let m = self.pad_multiple();
        let x = ImagePlane::from_rgb8(image).pad_to_multiple(m);
        let s_pad = seg.map(|s| s.pad_to_multiple(m));
        let lossless = self.backends.lossless(self.lossless)?;

        // base layer
        let seg_payload = match seg {
            Some(s) => lossless.encode(&DynamicImage::ImageLuma8(s.to_gray8()?))?,
            None => Vec::new(),
        };

        // first enhancement layer, quantized to 8 bits before coding
        let seg_t = match &s_pad {
            Some(s) => self.networks.segmentation_input(&[s])?,
            None => None,
        };
        let x_t = x.to_tensor(candle_core::DType::F32, self.networks.device())?;
        let c = ImagePlane::from_tensor(&self.networks.compnet.forward(&x_t, seg_t.as_ref())?, 0)?;
        let c8 = c.to_rgb8()?;
        let compact_payload = lossless.encode(&DynamicImage::ImageRgb8(c8.clone()))?;
        let compact = ImagePlane::from_rgb8(&c8);

        // coarse reconstruction exactly as the decoder will see it
        let coarse = self.recnet(s_pad.as_ref(), &compact)?.crop(h, w)?.to_rgb8()?;

        let mut b = LayeredBitstream {
            height,
            width,
            channels: 3,
            num_labels: if seg.is_some() { cfg.num_labels as u8 } else { 0 },
            alpha: self.alpha() as u8,
            residual_min: 0.0,
            residual_max: 0.0,
            lossless_backend: self.lossless,
            lossy_backend: LossyBackendId::None,
            quality: 0,
            segmentation: seg_payload,
            compact: compact_payload,
            residual: Vec::new(),
        };

        let residual_plane = match residual {
            ResidualSetting::Skip => None,
            ResidualSetting::Code { backend, quality } => {
                let codec = self.backends.lossy(backend)?;
                let r: Vec<f32> = image
                    .as_raw()
                    .iter()
                    .zip(coarse.as_raw())
                    .map(|(&a, &b)| a as f32 - b as f32)
                    .collect();
                let plane = ResidualPlane::from_residual(r)?;
                let scaled = RgbImage::from_raw(w as u32, h as u32, plane.scaled.clone())
                    .expect("residual size");
                b.residual = codec.encode(&scaled, quality)?;
                b.residual_min = plane.min;
                b.residual_max = plane.max;
                b.lossy_backend = backend;
                b.quality = quality;
                Some(plane)
            }
        };

        Ok(Encoded {
            bitstream: b,
            coarse,
            compact,
            residual: residual_plane,
        })
    }

    pub fn decode(&self, bytes: &[u8], mode: ParseMode) -> Result<Decoded> {
        let parsed = LayeredBitstream::parse_with(bytes, mode)?;
        let mut decoded = self.decode_bitstream(&parsed.bitstream)?;
        for layer in &parsed.dropped_layers {
            decoded
                .warnings
                .push(format!("{layer} layer truncated; decoded without it"));
        }
        decoded.dropped_layers = parsed.dropped_layers;
        Ok(decoded)
    }

    /// Decodes whatever layers are present: a missing compact layer is
    /// replaced by mid-gray, a missing segmentation layer by label 0, and a
    /// missing residual leaves `x̃ = x′`.
    pub fn decode_bitstream(&self, b: &LayeredBitstream) -> Result<Decoded> {
        let cfg = self.networks.config();
        if b.channels != 3 {
            return Err(Error::dim(format!("{}-channel containers are not supported", b.channels)));
        }
        if b.alpha as usize != cfg.alpha {
            return Err(Error::WeightsMismatch(format!(
                "container alpha {} but networks use {}",
                b.alpha, cfg.alpha
            )));
        }
        let (h, w) = (b.height as usize, b.width as usize);
        let m = self.pad_multiple();
        let (ph, pw) = (round_up(h, m), round_up(w, m));
        let mut warnings = Vec::new();

        let seg = if b.segmentation.is_empty() {
            None
        } else {
            if !self.variant.uses_segmentation() {
                return Err(Error::WeightsMismatch(format!(
                    "container carries a segmentation layer but the variant is {}",
                    self.variant
                )));
            }
            if b.num_labels as usize != cfg.num_labels {
                return Err(Error::WeightsMismatch(format!(
                    "container has {} labels, networks expect {}",
                    b.num_labels, cfg.num_labels
                )));
            }
            let lossless = self.backends.lossless(b.lossless_backend)?;
            Some(decode_label_layer(lossless, &b.segmentation, h, w, cfg.num_labels)?)
        };
        if seg.is_none() && self.variant.uses_segmentation() {
            warnings.push("segmentation layer absent; using label 0".into());
        }

        let (ch, cw) = (ph / cfg.alpha, pw / cfg.alpha);
        let compact = if b.compact.is_empty() {
            warnings.push("compact layer absent; using mid-gray".into());
            ImagePlane::zeros(ch, cw, 3)?
        } else {
            let img = self.backends.lossless(b.lossless_backend)?.decode(&b.compact)?.into_rgb8();
            if img.dimensions() != (cw as u32, ch as u32) {
                return Err(Error::Container(format!(
                    "compact layer is {}×{}, expected {ch}×{cw}",
                    img.height(),
                    img.width()
                )));
            }
            ImagePlane::from_rgb8(&img)
        };

        let s_pad = seg.map(|s| s.pad_to_multiple(m));
        let coarse = self.recnet(s_pad.as_ref(), &compact)?.crop(h, w)?.to_rgb8()?;

        let image = if b.residual.is_empty() {
            coarse.clone()
        } else {
            let codec = self.backends.lossy(b.lossy_backend)?;
            let scaled = codec.decode(&b.residual, b.quality, w as u32, h as u32)?;
            let r = minmax_denormalize(scaled.as_raw(), b.residual_min, b.residual_max)?;
            let raw = coarse
                .as_raw()
                .iter()
                .zip(&r)
                .map(|(&x, &d)| (x as f64 + d).round().clamp(0.0, 255.0) as u8)
                .collect();
            RgbImage::from_raw(w as u32, h as u32, raw).expect("image size")
        };

        Ok(Decoded {
            image,
            coarse,
            dropped_layers: Vec::new(),
            warnings,
        })
    }
}

/// Decodes a base layer into an `h`×`w` map with labels below `num_labels`.
pub fn decode_label_layer(
    codec: &dyn LosslessCodec,
    bytes: &[u8],
    h: usize,
    w: usize,
    num_labels: usize,
) -> Result<SegmentationMap> {
    let gray = backend::gray_image(&codec.decode(bytes)?)?;
    if gray.dimensions() != (w as u32, h as u32) {
        return Err(Error::Container(format!(
            "segmentation layer is {}×{}, header says {h}×{w}",
            gray.height(),
            gray.width()
        )));
    }
    let labels = gray.into_raw().into_iter().map(u32::from).collect();
    SegmentationMap::new(h, w, num_labels, labels)
}

impl LayeredBitstream {
    /// Keeps only the first `layers` layers (0..=3) in
    /// segmentation/compact/residual order.
    pub fn prefix(&self, layers: usize) -> Self {
        let mut b = self.clone();
        if layers < 3 {
            b.residual.clear();
            b.lossy_backend = LossyBackendId::None;
            b.residual_min = 0.0;
            b.residual_max = 0.0;
            b.quality = 0;
        }
        if layers < 2 {
            b.compact.clear();
        }
        if layers < 1 {
            b.segmentation.clear();
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::NetworkConfig;

    fn config(use_segmentation: bool) -> NetworkConfig {
        NetworkConfig {
            num_labels: 4,
            alpha: 8,
            base_filters: 4,
            res_blocks: 1,
            disc_filters: 4,
            use_segmentation,
        }
    }

    fn codec(variant: Variant) -> Codec {
        let nets = DsslicNetworks::new(config(variant.uses_segmentation()), 5).unwrap();
        Codec::new(nets, variant, BackendRegistry::builtin()).unwrap()
    }

    fn scene(h: u32, w: u32) -> (RgbImage, SegmentationMap) {
        let img = RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([(x * 9 % 256) as u8, (y * 5 % 256) as u8, 120])
        });
        let labels = (0..h * w).map(|i| ((i % w) * 4 / w) as u32).collect();
        (img, SegmentationMap::new(h as usize, w as usize, 4, labels).unwrap())
    }

    #[test]
    fn variant_weight_mismatch_is_rejected() {
        let nets = DsslicNetworks::new(config(true), 0).unwrap();
        assert!(matches!(
            Codec::new(nets, Variant::NoSeg, BackendRegistry::builtin()),
            Err(Error::WeightsMismatch(_))
        ));
        let nets = DsslicNetworks::new(config(true), 0).unwrap();
        assert!(Codec::new(nets, Variant::UpComp, BackendRegistry::builtin()).is_ok());
    }

    #[test]
    fn header_echoes_dims_and_alpha() {
        let c = codec(Variant::WithSeg);
        let (img, s) = scene(20, 27);
        let enc = c.encode(&img, Some(&s), ResidualSetting::Skip).unwrap();
        let b = &enc.bitstream;
        assert_eq!((b.height, b.width, b.channels, b.alpha), (20, 27, 3, 8));
        assert!(b.residual.is_empty());
        assert_eq!(enc.compact.dims(), (3, 4, 3));
    }

    #[test]
    fn decoded_segmentation_is_lossless() {
        let c = codec(Variant::WithSeg);
        let (img, s) = scene(16, 24);
        let enc = c.encode(&img, Some(&s), ResidualSetting::Skip).unwrap();
        let gray = backend::PngCodec;
        let decoded = backend::LosslessCodec::decode(&gray, &enc.bitstream.segmentation).unwrap();
        let labels: Vec<u32> = decoded.into_luma8().into_raw().into_iter().map(u32::from).collect();
        assert_eq!(labels, s.labels());
    }

    #[test]
    fn encoder_and_decoder_agree_on_coarse_image() {
        let c = codec(Variant::WithSeg);
        let (img, s) = scene(16, 16);
        let enc = c.encode(&img, Some(&s), ResidualSetting::Skip).unwrap();
        let bytes = enc.bitstream.serialize().unwrap();
        let dec = c.decode(&bytes, ParseMode::Strict).unwrap();
        assert_eq!(dec.coarse, enc.coarse);
        assert_eq!(dec.image, enc.coarse);
    }

    #[test]
    fn up_comp_skips_finenet_and_no_seg_omits_base_layer() {
        let (img, s) = scene(16, 16);
        let up = codec(Variant::UpComp);
        let enc = up.encode(&img, Some(&s), ResidualSetting::Skip).unwrap();
        let expected = ImagePlane::from_tensor(
            &up.networks()
                .upsample(&enc.compact.to_tensor(candle_core::DType::F32, &candle_core::Device::Cpu).unwrap())
                .unwrap(),
            0,
        )
        .unwrap()
        .to_rgb8()
        .unwrap();
        assert_eq!(enc.coarse, expected);

        let no_seg = codec(Variant::NoSeg);
        let enc = no_seg.encode(&img, None, ResidualSetting::Skip).unwrap();
        assert!(enc.bitstream.segmentation.is_empty());
        assert_eq!(enc.bitstream.num_labels, 0);
    }

    #[test]
    fn strict_and_resilient_decoding_of_truncated_residual() {
        let c = codec(Variant::WithSeg);
        let (img, s) = scene(16, 16);
        let enc = c
            .encode(
                &img,
                Some(&s),
                ResidualSetting::Code {
                    backend: LossyBackendId::Quantizer,
                    quality: 0,
                },
            )
            .unwrap();
        let bytes = enc.bitstream.serialize().unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(c.decode(cut, ParseMode::Strict).is_err());
        let dec = c.decode(cut, ParseMode::Resilient).unwrap();
        assert_eq!(dec.image, enc.coarse);
        assert_eq!(dec.dropped_layers, vec!["residual"]);
        assert!(!dec.warnings.is_empty());
    }

    #[test]
    fn mismatched_segmentation_dims_are_rejected() {
        let c = codec(Variant::WithSeg);
        let (img, _) = scene(16, 16);
        let (_, s) = scene(16, 24);
        assert!(matches!(
            c.encode(&img, Some(&s), ResidualSetting::Skip),
            Err(Error::Dimension(_))
        ));
    }
}
