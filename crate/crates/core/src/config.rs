//! Declarative run configuration (TOML).
//!
//! Only `dataset.source_dir` is required. Relative paths resolve against the
//! directory that holds the config file. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::{AccuracyThreshold, PruneConfig};
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "LOOPPRUNE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// When false every wall-clock value is written as 0, which makes all
    /// outputs byte-reproducible.
    #[serde(default = "yes")]
    pub timing: bool,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub eval: EvalSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source_dir: PathBuf,
    #[serde(default = "default_qps")]
    pub qps: Vec<i32>,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    /// Defaults to `patch_size` (non-overlapping tiles).
    #[serde(default)]
    pub stride: Option<usize>,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_qps() -> Vec<i32> {
    vec![22, 27, 32, 37]
}

fn default_patch() -> usize {
    48
}

fn default_validation_fraction() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub width_scale: f64,
    /// Label used for parameter counts in reports.
    pub component: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            width_scale: 1.0,
            component: "Y".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            lr: t.lr,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneSection {
    pub st: f64,
    pub ct: f64,
    /// Absolute PSNR floor in dB; overrides `max_drop` when set.
    pub at: Option<f64>,
    pub max_drop: f64,
    pub pt: f64,
    pub train_epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub max_sweeps: usize,
}

impl Default for PruneSection {
    fn default() -> Self {
        let p = PruneConfig::default();
        let max_drop = match p.at {
            AccuracyThreshold::MaxDrop(d) => d,
            AccuracyThreshold::Absolute(_) => 0.1,
        };
        PruneSection {
            st: p.st,
            ct: p.ct,
            at: None,
            max_drop,
            pt: p.pt,
            train_epochs: p.train_epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            max_sweeps: p.max_sweeps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub timing_repeats: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { timing_repeats: 5 }
    }
}

/// Parses `key=value` where `key` is a dotted path. The value is read as a
/// TOML value when possible and as a bare string otherwise.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("invalid override key `{key}`")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses `text`, applies `overrides` (in order), then resolves relative
    /// paths against `base_dir`.
    pub fn from_toml(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("config: {}", e.message())))?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the config file. Precedence, lowest first: file, the
    /// `LOOPPRUNE_SEED` environment variable, `--set` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut all = Vec::new();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
            all.push(format!("seed={seed}"));
        }
        all.extend(overrides.iter().cloned());
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, &all, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.dataset.source_dir.is_relative() {
            self.dataset.source_dir = base.join(&self.dataset.source_dir);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.dataset;
        if d.qps.is_empty() {
            return bad("dataset.qps is empty".into());
        }
        let mut qps = d.qps.clone();
        qps.sort_unstable();
        qps.dedup();
        if qps.len() != d.qps.len() {
            return bad("dataset.qps contains duplicates".into());
        }
        if d.patch_size < 8 || d.stride == Some(0) {
            return bad("dataset.patch_size must be >= 8 and stride > 0".into());
        }
        if !(0.0..1.0).contains(&d.validation_fraction) {
            return bad("dataset.validation_fraction must lie in [0, 1)".into());
        }
        if self.train.batch_size == 0 || !(self.train.lr > 0.0) {
            return bad("train.batch_size and train.lr must be positive".into());
        }
        if !(self.model.width_scale > 0.0 && self.model.width_scale <= 1.0) {
            return bad(format!(
                "model.width_scale must lie in (0, 1], got {}",
                self.model.width_scale
            ));
        }
        self.prune_config().validate()
    }

    pub fn stride(&self) -> usize {
        self.dataset.stride.unwrap_or(self.dataset.patch_size)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch_size: self.train.batch_size,
            seed: self.seed,
        }
    }

    pub fn prune_config(&self) -> PruneConfig {
        let p = &self.prune;
        PruneConfig {
            st: p.st,
            ct: p.ct,
            at: match p.at {
                Some(a) => AccuracyThreshold::Absolute(a),
                None => AccuracyThreshold::MaxDrop(p.max_drop),
            },
            pt: p.pt,
            train_epochs: p.train_epochs,
            lr: p.lr,
            batch_size: p.batch_size,
            seed: self.seed,
            max_sweeps: p.max_sweeps,
            timing_repeats: usize::from(self.timing),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[dataset]\nsource_dir = \"imgs\"\n";

    #[test]
    fn defaults_fill_everything_but_source_dir() {
        let c = RunConfig::from_toml(MINIMAL, &[], Path::new("/base")).unwrap();
        assert_eq!(c.dataset.source_dir, PathBuf::from("/base/imgs"));
        assert_eq!(c.output_dir, PathBuf::from("/base/out"));
        assert_eq!(c.dataset.qps, vec![22, 27, 32, 37]);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.prune_config().at, AccuracyThreshold::MaxDrop(0.1));
        assert!(RunConfig::from_toml("seed = 1\n", &[], Path::new(".")).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [
            format!("{MINIMAL}bogus = 1\n"),
            format!("{MINIMAL}[prune]\nsparsity = 0.5\n"),
        ] {
            assert!(matches!(
                RunConfig::from_toml(&text, &[], Path::new(".")),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn overrides() {
        let c = RunConfig::from_toml(
            MINIMAL,
            &[
                "prune.pt=0".into(),
                "dataset.qps=[22, 37]".into(),
                "output_dir=elsewhere".into(),
                "prune.at=31.5".into(),
            ],
            Path::new("/b"),
        )
        .unwrap();
        assert_eq!(c.prune.pt, 0.0);
        assert_eq!(c.dataset.qps, vec![22, 37]);
        assert_eq!(c.output_dir, PathBuf::from("/b/elsewhere"));
        assert_eq!(c.prune_config().at, AccuracyThreshold::Absolute(31.5));
        assert!(RunConfig::from_toml(MINIMAL, &["nokey".into()], Path::new(".")).is_err());
        assert!(RunConfig::from_toml(MINIMAL, &["prune.nope=1".into()], Path::new(".")).is_err());
        assert!(RunConfig::from_toml(MINIMAL, &["prune.st=1.5".into()], Path::new(".")).is_err());
    }
}
