//! Orthonormal 8x8 DCT-II and its inverse.

use std::sync::OnceLock;

pub type Block = [f64; 64];

fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (k, row) in c.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = alpha
                    * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
            }
        }
        c
    })
}

/// `C x C^T`
pub fn dct8(block: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; 64];
    for k in 0..8 {
        for x in 0..8 {
            tmp[k * 8 + x] = (0..8).map(|y| c[k][y] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for k in 0..8 {
        for l in 0..8 {
            out[k * 8 + l] = (0..8).map(|x| tmp[k * 8 + x] * c[l][x]).sum();
        }
    }
    out
}

/// `C^T X C`
pub fn idct8(coeffs: &Block) -> Block {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for l in 0..8 {
            tmp[y * 8 + l] = (0..8).map(|k| c[k][y] * coeffs[k * 8 + l]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|l| tmp[y * 8 + l] * c[l][x]).sum();
        }
    }
    out
}
