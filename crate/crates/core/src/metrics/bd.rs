//! Bjøntegaard delta metrics.
//!
//! Each RD curve is fitted with a cubic (least squares when it has more than
//! four points). BD-PSNR is the mean vertical gap between the `psnr(log rate)`
//! fits over the shared log-rate range; BD-rate is `exp(mean gap) - 1` of the
//! `log rate(psnr)` fits over the shared PSNR range. The integrals use the
//! closed-form antiderivative of the cubic.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// bits
    pub rate: f64,
    /// dB
    pub psnr: f64,
}

/// At least four points, strictly increasing in both rate and PSNR once
/// sorted by rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(mut points: Vec<RdPoint>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Config(format!(
                "an RD curve needs at least 4 points, got {}",
                points.len()
            )));
        }
        for p in &points {
            if !(p.rate > 0.0 && p.rate.is_finite()) || !p.psnr.is_finite() {
                return Err(Error::Config(format!("invalid RD point {p:?}")));
            }
        }
        points.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        if points
            .windows(2)
            .any(|w| w[1].rate <= w[0].rate || w[1].psnr <= w[0].psnr)
        {
            return Err(Error::Config(
                "RD curve must be strictly increasing in rate and PSNR".into(),
            ));
        }
        Ok(RdCurve { points })
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn log_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate.ln()).collect()
    }

    fn psnrs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.psnr).collect()
    }
}

/// Cubic in a centered/scaled abscissa `t = (x - center) / scale`.
#[derive(Debug, Clone, Copy)]
pub struct Cubic {
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

impl Cubic {
    pub fn fit(xs: &[f64], ys: &[f64]) -> Result<Cubic> {
        let n = xs.len();
        if n < 4 || ys.len() != n {
            return Err(Error::Config("cubic fit needs >= 4 (x, y) pairs".into()));
        }
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
        let a = DMatrix::from_fn(n, 4, |i, j| ((xs[i] - center) / scale).powi(j as i32));
        let b = DVector::from_column_slice(ys);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| Error::Numeric(format!("cubic fit failed: {e}")))?;
        Ok(Cubic {
            coeffs: [sol[0], sol[1], sol[2], sol[3]],
            center,
            scale,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.scale;
        let c = &self.coeffs;
        ((c[3] * t + c[2]) * t + c[1]) * t + c[0]
    }

    /// `∫ p(x) dx` from `a` to `b`.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let anti = |x: f64| {
            let t = (x - self.center) / self.scale;
            let c = &self.coeffs;
            self.scale * t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)))
        };
        anti(b) - anti(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BdResult {
    /// Percent; negative means the test curve needs fewer bits.
    pub bd_rate: f64,
    /// dB; positive means the test curve has higher quality.
    pub bd_psnr: f64,
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if hi <= lo {
        return Err(Error::Config("RD curves do not overlap".into()));
    }
    Ok((lo, hi))
}

pub fn bd_psnr(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (la, lt) = (anchor.log_rates(), test.log_rates());
    let (lo, hi) = overlap(&la, &lt)?;
    let pa = Cubic::fit(&la, &anchor.psnrs())?;
    let pt = Cubic::fit(&lt, &test.psnrs())?;
    Ok((pt.integrate(lo, hi) - pa.integrate(lo, hi)) / (hi - lo))
}

pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    let (qa, qt) = (anchor.psnrs(), test.psnrs());
    let (lo, hi) = overlap(&qa, &qt)?;
    let ra = Cubic::fit(&qa, &anchor.log_rates())?;
    let rt = Cubic::fit(&qt, &test.log_rates())?;
    let mean_diff = (rt.integrate(lo, hi) - ra.integrate(lo, hi)) / (hi - lo);
    Ok(mean_diff.exp_m1() * 100.0)
}

pub fn bd_metrics(anchor: &RdCurve, test: &RdCurve) -> Result<BdResult> {
    Ok(BdResult {
        bd_rate: bd_rate(anchor, test)?,
        bd_psnr: bd_psnr(anchor, test)?,
    })
}
