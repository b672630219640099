//! Image codec backends for the individual layers.
//!
//! Segmentation and compact layers go through a lossless codec (PNG built in,
//! FLIF as an external program). The 8-bit scaled residual goes through a
//! lossy codec (a built-in uniform quantizer, or BPG as an external program).
//! External programs are configured by path and argument template; nothing is
//! looked up implicitly.

use std::path::{Path, PathBuf};
use std::process::Command;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, GrayImage, ImageEncoder, RgbImage};

use super::container::{LosslessBackendId, LossyBackendId, MAX_QUALITY};
use crate::error::{Error, Result};

/// A program plus an argument template. Placeholders `{input}`, `{output}`
/// and `{quality}` are substituted per invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTemplate {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandTemplate {
    pub fn new(program: impl Into<PathBuf>, args: &[&str]) -> Self {
        Self {
            program: program.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn run(&self, input: &Path, output: &Path, quality: Option<u8>) -> Result<()> {
        let q = quality.map(|q| q.to_string()).unwrap_or_default();
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
                    .replace("{quality}", &q)
            })
            .collect();
        let name = self.program.display().to_string();
        let out = Command::new(&self.program)
            .args(&args)
            .output()
            .map_err(|e| Error::backend(&name, format!("cannot run: {e}")))?;
        if !out.status.success() {
            return Err(Error::backend(
                &name,
                format!(
                    "{}: {}",
                    out.status,
                    String::from_utf8_lossy(&out.stderr).trim()
                ),
            ));
        }
        if !output.is_file() {
            return Err(Error::backend(&name, "produced no output file"));
        }
        Ok(())
    }

    /// Writes `input_bytes` to a scratch file named `in.{in_ext}`, runs the
    /// command, and returns the bytes of `out.{out_ext}`.
    pub fn transcode(
        &self,
        input_bytes: &[u8],
        in_ext: &str,
        out_ext: &str,
        quality: Option<u8>,
    ) -> Result<Vec<u8>> {
        let work = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = work.path().join(format!("in.{in_ext}"));
        let output = work.path().join(format!("out.{out_ext}"));
        std::fs::write(&input, input_bytes).map_err(|e| Error::io(&input, e))?;
        self.run(&input, &output, quality)?;
        std::fs::read(&output).map_err(|e| Error::io(&output, e))
    }
}

pub fn png_bytes(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let enc = PngEncoder::new_with_quality(&mut out, CompressionType::Best, FilterType::Adaptive);
    enc.write_image(
        img.as_bytes(),
        img.width(),
        img.height(),
        img.color().into(),
    )?;
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<DynamicImage> {
    Ok(image::load_from_memory_with_format(
        bytes,
        image::ImageFormat::Png,
    )?)
}

pub trait LosslessCodec: Send + Sync {
    fn id(&self) -> LosslessBackendId;
    fn encode(&self, img: &DynamicImage) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8]) -> Result<DynamicImage>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PngCodec;

impl LosslessCodec for PngCodec {
    fn id(&self) -> LosslessBackendId {
        LosslessBackendId::Png
    }

    fn encode(&self, img: &DynamicImage) -> Result<Vec<u8>> {
        png_bytes(img)
    }

    fn decode(&self, bytes: &[u8]) -> Result<DynamicImage> {
        decode_png(bytes)
    }
}

/// FLIF through its reference command-line tool.
#[derive(Debug, Clone)]
pub struct FlifCodec {
    pub encode: CommandTemplate,
    pub decode: CommandTemplate,
}

impl FlifCodec {
    /// Standard `flif` invocation: `flif -e in.png out.flif`, `flif -d in.flif out.png`.
    pub fn with_program(program: impl Into<PathBuf>) -> Self {
        let program = program.into();
        Self {
            encode: CommandTemplate::new(&program, &["--overwrite", "-e", "{input}", "{output}"]),
            decode: CommandTemplate::new(&program, &["--overwrite", "-d", "{input}", "{output}"]),
        }
    }
}

impl LosslessCodec for FlifCodec {
    fn id(&self) -> LosslessBackendId {
        LosslessBackendId::Flif
    }

    fn encode(&self, img: &DynamicImage) -> Result<Vec<u8>> {
        self.encode.transcode(&png_bytes(img)?, "png", "flif", None)
    }

    fn decode(&self, bytes: &[u8]) -> Result<DynamicImage> {
        decode_png(&self.decode.transcode(bytes, "flif", "png", None)?)
    }
}

/// Lossy coding of the 8-bit scaled residual. `quality` follows the
/// quantization-parameter convention: 0 is best, 51 is coarsest.
pub trait ResidualCodec: Send + Sync {
    fn id(&self) -> LossyBackendId;
    fn encode(&self, img: &RgbImage, quality: u8) -> Result<Vec<u8>>;
    fn decode(&self, bytes: &[u8], quality: u8, width: u32, height: u32) -> Result<RgbImage>;
}

/// Uniform scalar quantizer with step `round(2^(q/6))` (step 1 at q = 0, so
/// quality 0 is lossless), indices stored as PNG.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformQuantizer;

impl UniformQuantizer {
    pub fn step(quality: u8) -> u32 {
        2f64.powf(quality as f64 / 6.0).round() as u32
    }
}

impl ResidualCodec for UniformQuantizer {
    fn id(&self) -> LossyBackendId {
        LossyBackendId::Quantizer
    }

    fn encode(&self, img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
        check_quality(quality)?;
        let step = Self::step(quality) as f64;
        let idx: Vec<u8> = img
            .as_raw()
            .iter()
            .map(|&v| (v as f64 / step).round().min(255.0) as u8)
            .collect();
        let q = RgbImage::from_raw(img.width(), img.height(), idx).expect("same size");
        png_bytes(&DynamicImage::ImageRgb8(q))
    }

    fn decode(&self, bytes: &[u8], quality: u8, width: u32, height: u32) -> Result<RgbImage> {
        check_quality(quality)?;
        let step = Self::step(quality);
        let q = decode_png(bytes)?.into_rgb8();
        check_dims("quantizer", &q, width, height)?;
        let raw = q
            .as_raw()
            .iter()
            .map(|&i| (i as u32 * step).min(255) as u8)
            .collect();
        Ok(RgbImage::from_raw(width, height, raw).expect("same size"))
    }
}

/// BPG (HEVC intra) through `bpgenc`/`bpgdec`, coded as RGB 4:4:4.
#[derive(Debug, Clone)]
pub struct BpgCodec {
    pub encode: CommandTemplate,
    pub decode: CommandTemplate,
}

impl BpgCodec {
    pub fn with_programs(encoder: impl Into<PathBuf>, decoder: impl Into<PathBuf>) -> Self {
        Self {
            encode: CommandTemplate::new(
                encoder,
                &["-q", "{quality}", "-f", "444", "-c", "rgb", "-o", "{output}", "{input}"],
            ),
            decode: CommandTemplate::new(decoder, &["-o", "{output}", "{input}"]),
        }
    }
}

impl ResidualCodec for BpgCodec {
    fn id(&self) -> LossyBackendId {
        LossyBackendId::Bpg
    }

    fn encode(&self, img: &RgbImage, quality: u8) -> Result<Vec<u8>> {
        check_quality(quality)?;
        let png = png_bytes(&DynamicImage::ImageRgb8(img.clone()))?;
        self.encode.transcode(&png, "png", "bpg", Some(quality))
    }

    fn decode(&self, bytes: &[u8], _quality: u8, width: u32, height: u32) -> Result<RgbImage> {
        let img = decode_png(&self.decode.transcode(bytes, "bpg", "png", None)?)?.into_rgb8();
        check_dims("bpg", &img, width, height)?;
        Ok(img)
    }
}

fn check_quality(q: u8) -> Result<()> {
    if q > MAX_QUALITY {
        return Err(Error::Config(format!("quality {q} exceeds {MAX_QUALITY}")));
    }
    Ok(())
}

fn check_dims(name: &str, img: &RgbImage, width: u32, height: u32) -> Result<()> {
    if img.dimensions() != (width, height) {
        return Err(Error::backend(
            name,
            format!(
                "decoded {}×{}, expected {width}×{height}",
                img.width(),
                img.height()
            ),
        ));
    }
    Ok(())
}

/// Every backend the codec may need, resolved by container id at decode time.
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    pub flif: Option<FlifCodec>,
    pub bpg: Option<BpgCodec>,
}

impl BackendRegistry {
    /// Built-in backends only.
    pub fn builtin() -> Self {
        Self::default()
    }

    pub fn lossless(&self, id: LosslessBackendId) -> Result<&dyn LosslessCodec> {
        match id {
            LosslessBackendId::Png => Ok(&PngCodec),
            LosslessBackendId::Flif => self
                .flif
                .as_ref()
                .map(|c| c as &dyn LosslessCodec)
                .ok_or_else(|| Error::backend("flif", "not configured")),
        }
    }

    pub fn lossy(&self, id: LossyBackendId) -> Result<&dyn ResidualCodec> {
        match id {
            LossyBackendId::None => Err(Error::backend("none", "no residual codec")),
            LossyBackendId::Quantizer => Ok(&UniformQuantizer),
            LossyBackendId::Bpg => self
                .bpg
                .as_ref()
                .map(|c| c as &dyn ResidualCodec)
                .ok_or_else(|| Error::backend("bpg", "not configured")),
        }
    }

    /// FLIF when configured, PNG otherwise.
    pub fn preferred_lossless(&self) -> LosslessBackendId {
        if self.flif.is_some() {
            LosslessBackendId::Flif
        } else {
            LosslessBackendId::Png
        }
    }

    /// BPG when configured, the built-in quantizer otherwise.
    pub fn preferred_lossy(&self) -> LossyBackendId {
        if self.bpg.is_some() {
            LossyBackendId::Bpg
        } else {
            LossyBackendId::Quantizer
        }
    }
}

pub(crate) fn gray_image(img: &DynamicImage) -> Result<GrayImage> {
    match img {
        DynamicImage::ImageLuma8(g) => Ok(g.clone()),
        other => Err(Error::Container(format!(
            "segmentation layer decoded as {:?}, expected 8-bit gray",
            other.color()
        ))),
    }
}
