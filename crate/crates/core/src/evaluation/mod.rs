//! Quality metrics, rate-distortion sweeps, reference codecs and the
//! per-variant ablation table.

pub mod ablation;
pub mod baseline;
pub mod metrics;
pub mod rd;

pub use ablation::{ablation_table, AblationCell, AblationTable, EvalImage};
pub use baseline::{BaselineCodec, BaselineKind};
pub use metrics::{bpp, ms_ssim, ms_ssim_scales, ms_ssim_with_scales, mse, psnr, ssim, PSNR_CAP_DB};
pub use rd::{
    plot_svg, psnr_monotone_in_bpp, rd_csv, sweep_rd, write_rd_csv, CodecPipeline, DsslicPipeline,
    Metric, RdCurve, RdPoint, Sweep,
};
