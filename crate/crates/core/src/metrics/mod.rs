//! PSNR, Bjøntegaard deltas, inference timing and report rendering.

mod bd;
mod psnr;
mod report;
mod timing;

pub use bd::{bd_metrics, bd_psnr, bd_rate, BdResult, Cubic, RdCurve, RdPoint};
pub use psnr::{psnr_images, psnr_tensors, PEAK_8BIT, PEAK_NORMALIZED};
pub use report::{
    render_report, render_table, thousands, trace_csv, trace_svg, Report, ReportColumn,
    TRACE_CSV_HEADER,
};
pub use timing::{median, time_inference, EnvFingerprint, InferenceTiming};
