//! Paired degraded/original patch datasets on disk.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.txt
//! data/<qp>/<split>/<image>_p<k>_deg.pgm
//! data/<qp>/<split>/<image>_p<k>_orig.pgm
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::image::Image8;
use super::quant::{degrade, QuantSpec};
use crate::error::{Error, Result};
use crate::rng::Prng;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_TAG: &str = "# loopprune-manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            other => Err(Error::Config(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchPair {
    pub x: usize,
    pub y: usize,
    pub degraded: Image8,
    pub original: Image8,
}

/// Tiles aligned `patch_size` squares at `stride`; `seed` fixes the output order.
pub fn extract_patches(
    degraded: &Image8,
    original: &Image8,
    patch_size: usize,
    stride: usize,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    if (degraded.width, degraded.height) != (original.width, original.height) {
        return Err(Error::Config("degraded/original sizes differ".into()));
    }
    if patch_size == 0 || stride == 0 {
        return Err(Error::Config("patch size and stride must be positive".into()));
    }
    if patch_size > original.width || patch_size > original.height {
        return Err(Error::Config(format!(
            "patch {patch_size} larger than {}x{} image",
            original.width, original.height
        )));
    }
    let mut coords: Vec<(usize, usize)> = (0..=original.height - patch_size)
        .step_by(stride)
        .flat_map(|y| {
            (0..=original.width - patch_size)
                .step_by(stride)
                .map(move |x| (x, y))
        })
        .collect();
    Prng::new(seed).shuffle(&mut coords);
    coords
        .into_iter()
        .map(|(x, y)| {
            Ok(PatchPair {
                x,
                y,
                degraded: degraded.crop(x, y, patch_size, patch_size)?,
                original: original.crop(x, y, patch_size, patch_size)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub degraded: PathBuf,
    pub original: PathBuf,
    pub qp: i32,
    pub split: Split,
}

/// Record list of a generated dataset. Paths are relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub patch_size: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub degraded: Tensor,
    pub original: Tensor,
    pub qp: i32,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{MANIFEST_TAG}\n# patch_size {}\n# seed {}\n",
            self.patch_size, self.seed
        );
        for e in &self.entries {
            s.push_str(&format!(
                "{} {} {} {}\n",
                e.degraded.display(),
                e.original.display(),
                e.qp,
                e.split
            ));
        }
        s
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Config(format!("manifest line {line}: {msg}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_TAG => {}
            _ => return Err(Error::Config("not a loopprune manifest".into())),
        }
        let (mut patch_size, mut seed) = (None, None);
        let mut entries = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let mut it = meta.split_whitespace();
                match (it.next(), it.next()) {
                    (Some("patch_size"), Some(v)) => {
                        patch_size = Some(v.parse().map_err(|_| bad(i + 1, "patch_size".into()))?)
                    }
                    (Some("seed"), Some(v)) => {
                        seed = Some(v.parse().map_err(|_| bad(i + 1, "seed".into()))?)
                    }
                    _ => {}
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(bad(i + 1, format!("expected 4 fields, got {}", f.len())));
            }
            entries.push(ManifestEntry {
                degraded: PathBuf::from(f[0]),
                original: PathBuf::from(f[1]),
                qp: f[2].parse().map_err(|_| bad(i + 1, format!("bad qp {:?}", f[2])))?,
                split: f[3].parse()?,
            });
        }
        Ok(DatasetManifest {
            root: root.into(),
            patch_size: patch_size.ok_or_else(|| Error::Config("manifest lacks patch_size".into()))?,
            seed: seed.ok_or_else(|| Error::Config("manifest lacks seed".into()))?,
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, root)
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Number of patch pairs per `(qp, split)`.
    pub fn counts(&self) -> BTreeMap<(i32, Split), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.qp, e.split)).or_default() += 1;
        }
        out
    }

    pub fn qps(&self) -> Vec<i32> {
        let mut q: Vec<i32> = self.entries.iter().map(|e| e.qp).collect();
        q.sort_unstable();
        q.dedup();
        q
    }

    /// Decodes every pair of `split` (manifest order). Every file must
    /// decode to the declared patch size.
    pub fn load_split(&self, split: Split) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .map(|e| {
                let deg = Image8::read_pgm(self.root.join(&e.degraded))?;
                let orig = Image8::read_pgm(self.root.join(&e.original))?;
                for img in [&deg, &orig] {
                    if (img.width, img.height) != (self.patch_size, self.patch_size) {
                        return Err(Error::Config(format!(
                            "{} is {}x{}, manifest patch size is {}",
                            e.degraded.display(),
                            img.width,
                            img.height,
                            self.patch_size
                        )));
                    }
                }
                Ok(Sample {
                    degraded: deg.to_tensor(),
                    original: orig.to_tensor(),
                    qp: e.qp,
                })
            })
            .collect()
    }

    /// Validates that every referenced file exists and parses.
    pub fn verify(&self) -> Result<()> {
        self.load_split(Split::Train)?;
        self.load_split(Split::Validation)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub qps: Vec<i32>,
    pub patch_size: usize,
    pub stride: usize,
    /// Fraction of source images held out for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

/// Degrades every source image at every QP, tiles aligned patch pairs, and
/// writes them with a manifest under `out_dir`.
///
/// Images (not patches) are assigned to splits, so validation patches never
/// overlap training content.
pub fn gen_dataset(
    sources: &[(String, Image8)],
    cfg: &DatasetConfig,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    if sources.is_empty() {
        return Err(Error::Config("no source images".into()));
    }
    if cfg.qps.is_empty() {
        return Err(Error::Config("no QPs configured".into()));
    }
    if !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
    }
    let n = sources.len();
    let n_val = if cfg.validation_fraction == 0.0 {
        0
    } else if n < 2 {
        return Err(Error::Config(
            "a validation split needs at least two source images".into(),
        ));
    } else {
        ((cfg.validation_fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let mut rng = Prng::new(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut split_of = vec![Split::Train; n];
    for &i in &order[..n_val] {
        split_of[i] = Split::Validation;
    }
    let patch_seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();

    let mut entries = Vec::new();
    for &qp in &cfg.qps {
        let q = QuantSpec::new(qp);
        for (i, (name, image)) in sources.iter().enumerate() {
            let split = split_of[i];
            let rel_dir = PathBuf::from("data").join(qp.to_string()).join(split.as_str());
            let abs_dir = out_dir.join(&rel_dir);
            fs::create_dir_all(&abs_dir).map_err(|e| Error::io(&abs_dir, e))?;
            let degraded = degrade(image, q)?;
            let pairs =
                extract_patches(&degraded, image, cfg.patch_size, cfg.stride, patch_seeds[i])?;
            for (k, pair) in pairs.iter().enumerate() {
                let deg = rel_dir.join(format!("{name}_p{k:03}_deg.pgm"));
                let orig = rel_dir.join(format!("{name}_p{k:03}_orig.pgm"));
                pair.degraded.write_pgm(out_dir.join(&deg))?;
                pair.original.write_pgm(out_dir.join(&orig))?;
                entries.push(ManifestEntry {
                    degraded: deg,
                    original: orig,
                    qp,
                    split,
                });
            }
        }
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        patch_size: cfg.patch_size,
        seed: cfg.seed,
        entries,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Reads every `*.pgm` in `dir`, sorted by file name.
pub fn read_source_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, Image8)>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "source directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok((stem, Image8::read_pgm(&p)?))
        })
        .collect()
}

/// Deterministic synthetic test picture: smooth gradients and waves with
/// hard-edged shapes and mild noise, so block quantization produces visible
/// ringing and blocking.
pub fn synth_image(width: usize, height: usize, seed: u64) -> Image8 {
    let mut rng = Prng::new(seed);
    let gx = rng.uniform_f64(-0.6, 0.6);
    let gy = rng.uniform_f64(-0.6, 0.6);
    let base = rng.uniform_f64(70.0, 170.0);
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform_f64(0.02, 0.35),
                rng.uniform_f64(0.02, 0.35),
                rng.uniform_f64(0.0, std::f64::consts::TAU),
                rng.uniform_f64(8.0, 30.0),
            )
        })
        .collect();
    let rects: Vec<(f64, f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let x0 = rng.uniform_f64(0.0, width as f64);
            let y0 = rng.uniform_f64(0.0, height as f64);
            (
                x0,
                y0,
                x0 + rng.uniform_f64(6.0, width as f64 / 2.0),
                y0 + rng.uniform_f64(6.0, height as f64 / 2.0),
                rng.uniform_f64(-60.0, 60.0),
            )
        })
        .collect();
    let discs: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.uniform_f64(0.0, width as f64),
                rng.uniform_f64(0.0, height as f64),
                rng.uniform_f64(4.0, width.min(height) as f64 / 3.0),
                rng.uniform_f64(-50.0, 50.0),
            )
        })
        .collect();
    let mut samples = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = base + gx * (xf - width as f64 / 2.0) + gy * (yf - height as f64 / 2.0);
            for &(fx, fy, ph, amp) in &waves {
                v += amp * (fx * xf + fy * yf + ph).sin();
            }
            for &(x0, y0, x1, y1, d) in &rects {
                if xf >= x0 && xf < x1 && yf >= y0 && yf < y1 {
                    v += d;
                }
            }
            for &(cx, cy, r, d) in &discs {
                if (xf - cx).powi(2) + (yf - cy).powi(2) < r * r {
                    v += d;
                }
            }
            // unit-variance grain, small next to the coding error at the tested QPs
            v += rng.normal() as f64;
            samples.push(v.clamp(0.0, 255.0).round() as u8);
        }
    }
    Image8 {
        width,
        height,
        samples,
    }
}
