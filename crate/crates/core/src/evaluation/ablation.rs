//! Per-variant comparison without residual coding.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use image::RgbImage;

use super::metrics::{bpp, ms_ssim, psnr};
use crate::codec::{Codec, ResidualSetting};
use crate::error::Result;
use crate::image::SegmentationMap;
use crate::networks::Variant;

/// An evaluation image with its segmentation map, when one exists.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub id: String,
    pub image: RgbImage,
    pub segmentation: Option<SegmentationMap>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
}

#[derive(Debug, Clone, Default)]
pub struct AblationTable {
    /// present variants, in table column order
    pub columns: Vec<(Variant, AblationCell)>,
    pub notes: Vec<String>,
}

impl AblationTable {
    pub fn get(&self, v: Variant) -> Option<&AblationCell> {
        self.columns.iter().find(|(c, _)| *c == v).map(|(_, cell)| cell)
    }

    /// Variants as columns, BPP/PSNR/MS-SSIM as rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric");
        for (v, _) in &self.columns {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
        let rows: [(&str, fn(&AblationCell) -> String); 3] = [
            ("BPP", |c| format!("{:.4}", c.bpp)),
            ("PSNR", |c| format!("{:.2}", c.psnr)),
            ("MS-SSIM", |c| format!("{:.4}", c.msssim)),
        ];
        for (name, f) in rows {
            s.push_str(name);
            for (_, c) in &self.columns {
                write!(s, ",{}", f(c)).unwrap();
            }
            s.push('\n');
        }
        for n in &self.notes {
            writeln!(s, "# {n}").unwrap();
        }
        s
    }
}

/// Evaluates the coarse reconstruction `x′` of each variant, averaged over
/// `images`. Variants without a codec are left out with a note.
pub fn ablation_table(images: &[EvalImage], codecs: &BTreeMap<Variant, &Codec>) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for v in Variant::ALL {
        let Some(codec) = codecs.get(&v) else {
            table.notes.push(format!("{v}: no weights supplied; column omitted"));
            continue;
        };
        let mut acc = AblationCell {
            bpp: 0.0,
            psnr: 0.0,
            msssim: 0.0,
        };
        for im in images {
            let enc = codec.encode(&im.image, im.segmentation.as_ref(), ResidualSetting::Skip)?;
            let (w, h) = im.image.dimensions();
            acc.bpp += bpp(enc.bitstream.total_bytes(), h as usize, w as usize, 3)?;
            acc.psnr += psnr(&im.image, &enc.coarse)?;
            acc.msssim += ms_ssim(&im.image, &enc.coarse)?;
        }
        let n = images.len().max(1) as f64;
        table.columns.push((
            v,
            AblationCell {
                bpp: acc.bpp / n,
                psnr: acc.psnr / n,
                msssim: acc.msssim / n,
            },
        ));
    }
    Ok(table)
}
