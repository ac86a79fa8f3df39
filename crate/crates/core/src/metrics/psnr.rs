use crate::codec::Image8;
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

pub const PEAK_8BIT: f64 = 255.0;
pub const PEAK_NORMALIZED: f64 = 1.0;

fn from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// PSNR of two 8-bit images (peak 255). Identical images give `+inf`.
pub fn psnr_images(a: &Image8, b: &Image8) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(dim_err!(
            "psnr: {}x{} vs {}x{}",
            a.width,
            a.height,
            b.width,
            b.height
        ));
    }
    if a.samples.is_empty() {
        return Err(dim_err!("psnr: empty images"));
    }
    let sse: f64 = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(from_mse(sse / a.samples.len() as f64, PEAK_8BIT))
}

/// PSNR of two normalized tensors (peak 1.0).
pub fn psnr_tensors(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.expect_same_shape(b, "psnr")?;
    if a.is_empty() {
        return Err(dim_err!("psnr: empty tensors"));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(from_mse(sse / a.len() as f64, PEAK_NORMALIZED))
}
