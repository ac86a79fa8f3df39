//! Block-DCT uniform quantization: the stand-in for a codec with its in-loop
//! filters disabled. Quantizing each 8x8 block independently produces the
//! block-edge discontinuities the filter network learns to remove.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dct::{dct8, idct8, Block};
use super::image::Image8;
use crate::error::{Error, Result};

/// Quantization level. The step follows the usual codec convention of doubling
/// every 6 QP: `step = 2^((qp - 4) / 6)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub qp: i32,
}

impl QuantSpec {
    pub fn new(qp: i32) -> Self {
        QuantSpec { qp }
    }

    pub fn step(&self) -> f64 {
        2f64.powf((self.qp as f64 - 4.0) / 6.0)
    }
}

/// `round(c / step) * step`
pub fn quantize(coeff: f64, step: f64) -> f64 {
    (coeff / step).round() * step
}

fn blocks(image: &Image8) -> Result<(Image8, Vec<(usize, usize)>)> {
    if image.is_empty() {
        return Err(Error::Image("cannot code an empty image".into()));
    }
    let padded = image.pad_to_multiple(8);
    let origins = (0..padded.height / 8)
        .flat_map(|by| (0..padded.width / 8).map(move |bx| (bx * 8, by * 8)))
        .collect();
    Ok((padded, origins))
}

fn load_block(img: &Image8, x0: usize, y0: usize) -> Block {
    let mut b = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            b[y * 8 + x] = img.get(x0 + x, y0 + y) as f64;
        }
    }
    b
}

/// dct8 -> uniform quantization -> idct8 -> clamp -> round, per 8x8 block.
/// Non-multiple-of-8 images are edge-padded and cropped back.
pub fn degrade(image: &Image8, q: QuantSpec) -> Result<Image8> {
    let step = q.step();
    let (mut padded, origins) = blocks(image)?;
    for (x0, y0) in origins {
        let mut c = dct8(&load_block(&padded, x0, y0));
        c.iter_mut().for_each(|v| *v = quantize(*v, step));
        let rec = idct8(&c);
        for y in 0..8 {
            for x in 0..8 {
                let v = rec[y * 8 + x].clamp(0.0, 255.0).round() as u8;
                padded.set(x0 + x, y0 + y, v);
            }
        }
    }
    padded.crop(0, 0, image.width, image.height)
}

/// Quantized coefficient indices `round(c / step)` of every block, in raster
/// block order and row-major coefficient order.
pub fn quantized_indices(image: &Image8, q: QuantSpec) -> Result<Vec<i64>> {
    let step = q.step();
    let (padded, origins) = blocks(image)?;
    let mut out = Vec::with_capacity(origins.len() * 64);
    for (x0, y0) in origins {
        let c = dct8(&load_block(&padded, x0, y0));
        out.extend(c.iter().map(|v| (v / step).round() as i64));
    }
    Ok(out)
}

/// `N * H(histogram)` in bits: the ideal code length of the symbol sequence
/// under its own empirical distribution.
pub fn entropy_bits(symbols: &[i64]) -> f64 {
    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for &s in symbols {
        *hist.entry(s).or_default() += 1;
    }
    let n = symbols.len() as f64;
    hist.values()
        .map(|&c| {
            let c = c as f64;
            -c * (c / n).log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Rate proxy: entropy-coded size (bits) of the quantized coefficient indices.
pub fn rate_proxy(image: &Image8, q: QuantSpec) -> Result<f64> {
    Ok(entropy_bits(&quantized_indices(image, q)?))
}
