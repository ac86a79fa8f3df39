use std::time::Instant;

use serde::Serialize;

use crate::codec::Sample;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::train::predict;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnvFingerprint {
    pub cpu_model: String,
    pub threads: usize,
}

impl EnvFingerprint {
    /// Inference runs on the calling thread only.
    pub fn current() -> Self {
        let cpu_model = std::fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| {
                s.lines()
                    .find(|l| l.starts_with("model name"))
                    .and_then(|l| l.split(':').nth(1))
                    .map(|v| v.trim().to_string())
            })
            .unwrap_or_else(|| std::env::consts::ARCH.to_string());
        EnvFingerprint {
            cpu_model,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InferenceTiming {
    pub raw_s: Vec<f64>,
    pub median_s: f64,
    pub env: EnvFingerprint,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Wall time of full forward passes over `dataset`, `repeats` times.
/// Only the forward passes are timed.
pub fn time_inference(
    model: &ModelState,
    dataset: &[Sample],
    repeats: usize,
) -> Result<InferenceTiming> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot time inference on an empty dataset".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut raw_s = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = predict(model, dataset)?;
        std::hint::black_box(&out);
        raw_s.push(start.elapsed().as_secs_f64());
    }
    Ok(InferenceTiming {
        median_s: median(&raw_s),
        raw_s,
        env: EnvFingerprint::current(),
    })
}
