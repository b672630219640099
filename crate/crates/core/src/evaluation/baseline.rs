//! Reference codecs for RD comparison.
//!
//! JPEG is built in (baseline, 4:4:4). JPEG2000, WebP and BPG run as
//! external programs; their default argument templates are:
//!
//! | codec    | encode                                               | decode                              |
//! |----------|------------------------------------------------------|-------------------------------------|
//! | JPEG2000 | `opj_compress -i {input} -o {output} -r {quality}`   | `opj_decompress -i {input} -o {output}` |
//! | WebP     | `cwebp -q {quality} {input} -o {output}`             | `dwebp {input} -o {output}`         |
//! | BPG      | `bpgenc -q {quality} -f 444 -c rgb -o {output} {input}` | `bpgdec -o {output} {input}`     |
//!
//! For JPEG2000 `quality` is the compression ratio. Lossy WebP is always
//! 4:2:0 and cannot honour the 4:4:4 setting.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use image::codecs::jpeg::JpegEncoder;
use image::{DynamicImage, RgbImage};

use super::rd::CodecPipeline;
use crate::codec::backend::{decode_png, png_bytes};
use crate::codec::CommandTemplate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Jpeg,
    Jpeg2000,
    Webp,
    Bpg,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [Self::Jpeg, Self::Jpeg2000, Self::Webp, Self::Bpg];

    pub fn name(self) -> &'static str {
        match self {
            Self::Jpeg => "jpeg",
            Self::Jpeg2000 => "jpeg2000",
            Self::Webp => "webp",
            Self::Bpg => "bpg",
        }
    }

    fn extension(self) -> &'static str {
        match self {
            Self::Jpeg => "jpg",
            Self::Jpeg2000 => "j2k",
            Self::Webp => "webp",
            Self::Bpg => "bpg",
        }
    }

    /// Whether a larger quality value means a better image.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Self::Jpeg | Self::Webp)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown baseline codec {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct BaselineCodec {
    pub kind: BaselineKind,
    /// `(encode, decode)`; unused for JPEG
    pub commands: Option<(CommandTemplate, CommandTemplate)>,
}

impl BaselineCodec {
    pub fn jpeg() -> Self {
        Self {
            kind: BaselineKind::Jpeg,
            commands: None,
        }
    }

    /// External codec with the default templates. `encoder` and `decoder`
    /// are the program paths.
    pub fn external(kind: BaselineKind, encoder: impl Into<PathBuf>, decoder: impl Into<PathBuf>) -> Result<Self> {
        let (e, d): (&[&str], &[&str]) = match kind {
            BaselineKind::Jpeg => {
                return Err(Error::Config("jpeg is built in".into()));
            }
            BaselineKind::Jpeg2000 => (
                &["-i", "{input}", "-o", "{output}", "-r", "{quality}"],
                &["-i", "{input}", "-o", "{output}"],
            ),
            BaselineKind::Webp => (
                &["-q", "{quality}", "{input}", "-o", "{output}"],
                &["{input}", "-o", "{output}"],
            ),
            BaselineKind::Bpg => (
                &["-q", "{quality}", "-f", "444", "-c", "rgb", "-o", "{output}", "{input}"],
                &["-o", "{output}", "{input}"],
            ),
        };
        Ok(Self {
            kind,
            commands: Some((CommandTemplate::new(encoder, e), CommandTemplate::new(decoder, d))),
        })
    }

    /// Encodes and decodes `image`, returning the decoded image and the exact
    /// payload size in bytes.
    pub fn run(&self, image: &RgbImage, quality: u8) -> Result<(RgbImage, usize)> {
        let (payload, decoded) = match &self.commands {
            None => {
                if !(1..=100).contains(&quality) {
                    return Err(Error::Config(format!("jpeg quality {quality} not in 1..=100")));
                }
                let mut bytes = Vec::new();
                JpegEncoder::new_with_quality(&mut bytes, quality).encode_image(image)?;
                let decoded =
                    image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)?.into_rgb8();
                (bytes, decoded)
            }
            Some((enc, dec)) => {
                let png = png_bytes(&DynamicImage::ImageRgb8(image.clone()))?;
                let ext = self.kind.extension();
                let payload = enc.transcode(&png, "png", ext, Some(quality))?;
                let decoded = decode_png(&dec.transcode(&payload, ext, "png", None)?)?.into_rgb8();
                (payload, decoded)
            }
        };
        if decoded.dimensions() != image.dimensions() {
            return Err(Error::backend(self.kind.name(), "decoded size differs from input"));
        }
        Ok((decoded, payload.len()))
    }
}

impl CodecPipeline for BaselineCodec {
    fn name(&self) -> String {
        self.kind.name().to_string()
    }

    fn run(&self, _id: &str, image: &RgbImage, quality: u32) -> Result<(RgbImage, usize)> {
        let q = u8::try_from(quality).map_err(|_| Error::Config(format!("quality {quality} out of range")))?;
        BaselineCodec::run(self, image, q)
    }
}

/// Component sampling factors `(h, v)` from a baseline JPEG's SOF0 marker.
pub fn jpeg_sampling_factors(bytes: &[u8]) -> Option<Vec<(u8, u8)>> {
    let mut i = 2;
    while i + 4 <= bytes.len() {
        if bytes[i] != 0xFF {
            return None;
        }
        let marker = bytes[i + 1];
        let len = u16::from_be_bytes([bytes[i + 2], bytes[i + 3]]) as usize;
        if marker == 0xC0 {
            let seg = bytes.get(i + 4..i + 2 + len)?;
            let n = *seg.get(5)? as usize;
            return (0..n)
                .map(|c| seg.get(6 + 3 * c + 1).map(|f| (f >> 4, f & 0x0F)))
                .collect();
        }
        i += 2 + len;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::metrics::psnr;

    fn scene() -> RgbImage {
        RgbImage::from_fn(48, 40, |x, y| {
            image::Rgb([(x * 5) as u8, (y * 6) as u8, ((x * y) % 256) as u8])
        })
    }

    #[test]
    fn jpeg_is_444() {
        let mut bytes = Vec::new();
        JpegEncoder::new_with_quality(&mut bytes, 80)
            .encode_image(&scene())
            .unwrap();
        assert_eq!(jpeg_sampling_factors(&bytes).unwrap(), vec![(1, 1); 3]);
    }

    #[test]
    fn jpeg_quality_extremes_order_distortion() {
        let img = scene();
        let j = BaselineCodec::jpeg();
        let (lo, lo_bytes) = j.run(&img, 5).unwrap();
        let (hi, hi_bytes) = j.run(&img, 95).unwrap();
        assert!(psnr(&img, &hi).unwrap() > psnr(&img, &lo).unwrap());
        assert!(hi_bytes > lo_bytes);
        assert!(j.run(&img, 0).is_err());
    }

    #[test]
    fn missing_binary_is_backend_error() {
        let b = BaselineCodec::external(BaselineKind::Bpg, "/nonexistent/bpgenc", "/nonexistent/bpgdec").unwrap();
        assert!(matches!(b.run(&scene(), 30), Err(Error::Backend { .. })));
        assert!(BaselineCodec::external(BaselineKind::Jpeg, "a", "b").is_err());
    }

    #[test]
    fn names_parse() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("gif".parse::<BaselineKind>().is_err());
    }
}
