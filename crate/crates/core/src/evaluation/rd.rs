//! Rate-distortion sweeps, CSV output and plots.

use std::fmt::Write as _;
use std::path::Path;

use image::RgbImage;
use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{bpp, ms_ssim, psnr};
use crate::codec::{Codec, LossyBackendId, ParseMode, ResidualSetting};
use crate::error::{Error, Result};
use crate::networks::Segmenter;
use crate::weights::write_atomic;

/// One operating point: a single image, or the average over a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub codec: String,
    pub quality: u32,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
    /// images averaged into this point
    pub n_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub dataset: String,
    pub codec: String,
    /// sorted by bpp
    pub points: Vec<RdPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub image: String,
    pub quality: u32,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub curve: RdCurve,
    /// every successful `(image id, point)`, in image-major order
    pub per_image: Vec<(String, RdPoint)>,
    pub failures: Vec<PointFailure>,
}

/// Anything that turns an image and a quality setting into a decoded image
/// and its exact coded size.
pub trait CodecPipeline: Sync {
    fn name(&self) -> String;
    fn run(&self, id: &str, image: &RgbImage, quality: u32) -> Result<(RgbImage, usize)>;
}

/// Evaluates one `(image, quality)` pair.
pub fn measure(
    pipeline: &dyn CodecPipeline,
    id: &str,
    image: &RgbImage,
    quality: u32,
) -> Result<RdPoint> {
    let (decoded, bytes) = pipeline.run(id, image, quality)?;
    let (w, h) = image.dimensions();
    Ok(RdPoint {
        codec: pipeline.name(),
        quality,
        bpp: bpp(bytes, h as usize, w as usize, 3)?,
        psnr: psnr(image, &decoded)?,
        msssim: ms_ssim(image, &decoded)?,
        n_images: 1,
    })
}

/// Runs every `(image, quality)` pair on up to `jobs` threads, then averages
/// per quality. Failures are collected and the curve is built from the
/// remaining points. Output order does not depend on `jobs`.
pub fn sweep_rd(
    dataset: &str,
    images: &[(String, RgbImage)],
    pipeline: &dyn CodecPipeline,
    qualities: &[u32],
    jobs: usize,
) -> Sweep {
    let tasks: Vec<(usize, u32)> = (0..images.len())
        .flat_map(|i| qualities.iter().map(move |&q| (i, q)))
        .collect();
    let jobs = jobs.clamp(1, tasks.len().max(1));
    let mut results: Vec<Option<Result<RdPoint>>> = (0..tasks.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (t, chunk) in results.chunks_mut(tasks.len().div_ceil(jobs).max(1)).enumerate() {
            let start = t * tasks.len().div_ceil(jobs).max(1);
            let tasks = &tasks;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let (i, q) = tasks[start + k];
                    let (id, img) = &images[i];
                    *slot = Some(measure(pipeline, id, img, q));
                }
            });
        }
    });

    let mut per_image = Vec::new();
    let mut failures = Vec::new();
    for ((i, q), r) in tasks.iter().zip(results) {
        let id = images[*i].0.clone();
        match r.expect("every task ran") {
            Ok(p) => per_image.push((id, p)),
            Err(e) => {
                log::warn!("{} failed on {id} at quality {q}: {e}", pipeline.name());
                failures.push(PointFailure {
                    image: id,
                    quality: *q,
                    message: e.to_string(),
                })
            }
        }
    }

    let mut points: Vec<RdPoint> = qualities
        .iter()
        .filter_map(|&q| {
            let ps: Vec<&RdPoint> = per_image.iter().map(|(_, p)| p).filter(|p| p.quality == q).collect();
            if ps.is_empty() {
                return None;
            }
            let n = ps.len() as f64;
            Some(RdPoint {
                codec: pipeline.name(),
                quality: q,
                bpp: ps.iter().map(|p| p.bpp).sum::<f64>() / n,
                psnr: ps.iter().map(|p| p.psnr).sum::<f64>() / n,
                msssim: ps.iter().map(|p| p.msssim).sum::<f64>() / n,
                n_images: ps.len(),
            })
        })
        .collect();
    points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp).then(a.quality.cmp(&b.quality)));

    Sweep {
        curve: RdCurve {
            dataset: dataset.to_string(),
            codec: pipeline.name(),
            points,
        },
        per_image,
        failures,
    }
}

/// True when, after sorting by bpp, PSNR never drops as bpp grows.
pub fn psnr_monotone_in_bpp(points: &[RdPoint]) -> bool {
    let mut p: Vec<&RdPoint> = points.iter().collect();
    p.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    p.windows(2).all(|w| w[1].psnr >= w[0].psnr || w[1].bpp == w[0].bpp)
}

pub const RD_CSV_HEADER: &str = "dataset,codec,quality,bpp,psnr_db,msssim,n_images";

pub fn rd_csv(curves: &[RdCurve]) -> String {
    let mut s = format!("{RD_CSV_HEADER}\n");
    for c in curves {
        for p in &c.points {
            writeln!(
                s,
                "{},{},{},{:.6},{:.4},{:.6},{}",
                c.dataset, p.codec, p.quality, p.bpp, p.psnr, p.msssim, p.n_images
            )
            .expect("write to string");
        }
    }
    s
}

pub fn write_rd_csv(path: &Path, curves: &[RdCurve]) -> Result<()> {
    write_atomic(path, rd_csv(curves).as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Psnr,
    MsSsim,
}

impl Metric {
    fn value(self, p: &RdPoint) -> f64 {
        match self {
            Metric::Psnr => p.psnr,
            Metric::MsSsim => p.msssim,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Psnr => "PSNR (dB)",
            Metric::MsSsim => "MS-SSIM",
        }
    }
}

/// Metric against bpp, one line per curve, as an SVG document.
pub fn plot_svg(curves: &[RdCurve], metric: Metric, title: &str) -> Result<String> {
    let pts = curves.iter().flat_map(|c| &c.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in pts {
        x0 = x0.min(p.bpp);
        x1 = x1.max(p.bpp);
        y0 = y0.min(metric.value(p));
        y1 = y1.max(metric.value(p));
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let m = ((hi - lo) * 0.05).max(1e-3);
        (lo - m, hi + m)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);

    let plot_err = |e: &dyn std::fmt::Display| Error::Config(format!("plot: {e}"));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| plot_err(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(|e| plot_err(&e))?;
        chart
            .configure_mesh()
            .x_desc("bpp (bits/pixel/channel)")
            .y_desc(metric.label())
            .draw()
            .map_err(|e| plot_err(&e))?;
        for (i, c) in curves.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let series: Vec<(f64, f64)> = c.points.iter().map(|p| (p.bpp, metric.value(p))).collect();
            chart
                .draw_series(LineSeries::new(series.clone(), color.stroke_width(2)))
                .map_err(|e| plot_err(&e))?
                .label(c.codec.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
            chart
                .draw_series(series.into_iter().map(|p| Circle::new(p, 3, color.filled())))
                .map_err(|e| plot_err(&e))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| plot_err(&e))?;
        root.present().map_err(|e| plot_err(&e))?;
    }
    Ok(svg)
}

/// The DSSLIC pipeline with the residual coded at the swept quality.
pub struct DsslicPipeline<'a> {
    pub codec: &'a Codec,
    pub segmenter: &'a (dyn Segmenter + Sync),
    pub residual: LossyBackendId,
}

impl CodecPipeline for DsslicPipeline<'_> {
    fn name(&self) -> String {
        format!("dsslic-{}", self.codec.variant())
    }

    fn run(&self, id: &str, image: &RgbImage, quality: u32) -> Result<(RgbImage, usize)> {
        let quality = u8::try_from(quality)
            .map_err(|_| Error::Config(format!("quality {quality} out of range")))?;
        let enc = self.codec.encode_with(
            id,
            image,
            self.segmenter,
            ResidualSetting::Code {
                backend: self.residual,
                quality,
            },
        )?;
        let bytes = enc.bitstream.serialize()?;
        let dec = self.codec.decode(&bytes, ParseMode::Strict)?;
        Ok((dec.image, bytes.len()))
    }
}
