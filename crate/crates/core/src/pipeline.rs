//! The four workflow commands behind the `loopprune` binary.
//!
//! Everything a command writes lands under `output_dir`:
//!
//! ```text
//! dataset/manifest.txt, dataset/data/<qp>/<split>/*.pgm   gen-data
//! baseline.ckpt, train_log.csv                            train
//! pruned.ckpt, prune_trace.csv, prune_trace.svg           prune
//! eval_report.txt, eval_rd.csv                            eval
//! ```

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use crate::codec::{
    gen_dataset, read_source_dir, rate_proxy, DatasetConfig, DatasetManifest, Image8, QuantSpec,
    Sample, Split, MANIFEST_FILE,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    bd_metrics, render_report, thousands, time_inference, trace_csv, trace_svg, BdResult, RdCurve,
    RdPoint, ReportColumn,
};
use crate::model::{load_model, save_model, write_atomic, ModelState};
use crate::prune::prune_loop_observed;
use crate::train::{degraded_psnr, evaluate_psnr, train_model};

pub const DATASET_DIR: &str = "dataset";
pub const BASELINE_CKPT: &str = "baseline.ckpt";
pub const PRUNED_CKPT: &str = "pruned.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRACE_CSV: &str = "prune_trace.csv";
pub const TRACE_SVG: &str = "prune_trace.svg";
pub const EVAL_REPORT: &str = "eval_report.txt";
pub const EVAL_RD: &str = "eval_rd.csv";
const LOCK_FILE: &str = ".loopprune.lock";

/// Line-oriented `level event=name key=value ...` logging to stderr.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logger {
    pub quiet: bool,
}

impl Logger {
    fn emit(&self, level: &str, event: &str, fields: &[(&str, &dyn Display)]) {
        if self.quiet {
            return;
        }
        let mut line = format!("{level} event={event}");
        for (k, v) in fields {
            let v = v.to_string();
            if v.contains(char::is_whitespace) {
                let _ = write!(line, " {k}={v:?}");
            } else {
                let _ = write!(line, " {k}={v}");
            }
        }
        eprintln!("{line}");
    }

    pub fn info(&self, event: &str, fields: &[(&str, &dyn Display)]) {
        self.emit("info", event, fields);
    }

    pub fn warn(&self, event: &str, fields: &[(&str, &dyn Display)]) {
        self.emit("warn", event, fields);
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<OutputLock> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::State(format!(
                "{} exists: another command is using this output dir (delete the file if it is stale)",
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let path = cfg.output_dir.join(DATASET_DIR).join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::Config(format!(
            "no dataset manifest at {} (run gen-data first)",
            path.display()
        )));
    }
    DatasetManifest::read(&path)
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

pub fn gen_data(cfg: &RunConfig, log: &Logger) -> Result<DatasetManifest> {
    let sources = read_source_dir(&cfg.dataset.source_dir)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let dcfg = DatasetConfig {
        qps: cfg.dataset.qps.clone(),
        patch_size: cfg.dataset.patch_size,
        stride: cfg.stride(),
        validation_fraction: cfg.dataset.validation_fraction,
        seed: cfg.seed,
    };
    let out = cfg.output_dir.join(DATASET_DIR);
    let manifest = gen_dataset(&sources, &dcfg, &out)?;
    for ((qp, split), n) in manifest.counts() {
        log.info("patches", &[("qp", &qp), ("split", &split.as_str()), ("count", &n)]);
    }
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub params: usize,
    pub degraded_psnr: f64,
    pub best_psnr: f64,
    pub epochs: usize,
}

pub fn train(cfg: &RunConfig, log: &Logger) -> Result<TrainSummary> {
    let manifest = load_manifest(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let train_set = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Validation)?;
    let model = ModelState::build_default_uclf(cfg.model.width_scale, cfg.seed)?;
    let deg = degraded_psnr(&val)?;
    log.info(
        "train_start",
        &[
            ("params", &model.count_parameters()),
            ("train_patches", &train_set.len()),
            ("val_patches", &val.len()),
            ("degraded_psnr_db", &format!("{deg:.4}")),
        ],
    );
    let mut csv = String::from("epoch,train_mae,val_psnr_db\n");
    let (best, logs) = train_model(&model, &train_set, &val, &cfg.train_config(), |e| {
        log.info(
            "epoch",
            &[
                ("epoch", &e.epoch),
                ("train_mae", &format!("{:.6}", e.train_mae)),
                ("val_psnr_db", &format!("{:.4}", e.val_psnr)),
            ],
        );
    })?;
    for e in &logs {
        let _ = writeln!(csv, "{},{:.6},{:.4}", e.epoch, e.train_mae, e.val_psnr);
    }
    let checkpoint = cfg.output_dir.join(BASELINE_CKPT);
    save_model(&best, &checkpoint)?;
    write_text(&cfg.output_dir.join(TRAIN_LOG), &csv)?;
    Ok(TrainSummary {
        checkpoint,
        params: best.count_parameters(),
        degraded_psnr: deg,
        best_psnr: evaluate_psnr(&best, &val)?,
        epochs: logs.len(),
    })
}

#[derive(Debug, Clone)]
pub struct PruneSummary {
    pub checkpoint: PathBuf,
    pub params_before: usize,
    pub params_after: usize,
    pub psnr_before: f64,
    pub psnr_after: f64,
    pub attempts: usize,
    pub stop: String,
}

impl Display for PruneSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "params {} -> {} ({:.1}% removed), validation PSNR {:.4} dB -> {:.4} dB after {} attempt(s), stop: {}",
            thousands(self.params_before),
            thousands(self.params_after),
            100.0 * (1.0 - self.params_after as f64 / self.params_before as f64),
            self.psnr_before,
            self.psnr_after,
            self.attempts,
            self.stop
        )
    }
}

pub fn prune(cfg: &RunConfig, checkpoint: Option<&Path>, log: &Logger) -> Result<PruneSummary> {
    let input = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.join(BASELINE_CKPT));
    require_file(&input, "checkpoint")?;
    let manifest = load_manifest(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let model = load_model(&input)?;
    let train_set = manifest.load_split(Split::Train)?;
    let val = manifest.load_split(Split::Validation)?;
    let (pruned, trace) =
        prune_loop_observed(&model, &cfg.prune_config(), &train_set, &val, |r| {
            log.info(
                "attempt",
                &[
                    ("iteration", &r.iteration),
                    ("params", &r.params),
                    ("psnr_db", &format!("{:.4}", r.psnr_db)),
                    ("removed_channels", &r.removed_channels()),
                    ("accepted", &r.accepted),
                ],
            );
        })?;
    let out = cfg.output_dir.join(PRUNED_CKPT);
    save_model(&pruned, &out)?;
    write_text(&cfg.output_dir.join(TRACE_CSV), &trace_csv(&trace))?;
    let svg_path = cfg.output_dir.join(TRACE_SVG);
    match trace_svg(&trace) {
        Some(svg) => write_text(&svg_path, &svg)?,
        None => {
            let _ = fs::remove_file(&svg_path);
        }
    }
    let psnr_after = trace
        .accepted()
        .last()
        .map_or(trace.baseline.psnr_db, |r| r.psnr_db);
    Ok(PruneSummary {
        checkpoint: out,
        params_before: trace.baseline.params,
        params_after: pruned.count_parameters(),
        psnr_before: trace.baseline.psnr_db,
        psnr_after,
        attempts: trace.attempts(),
        stop: trace.stop.map_or("none", |s| s.name()).to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: String,
    /// Degraded input PSNR per QP.
    pub degraded: Vec<(i32, f64)>,
    pub columns: Vec<ReportColumn>,
}

fn by_qp(samples: Vec<Sample>) -> BTreeMap<i32, Vec<Sample>> {
    let mut out: BTreeMap<i32, Vec<Sample>> = BTreeMap::new();
    for s in samples {
        out.entry(s.qp).or_default().push(s);
    }
    out
}

fn curve(rates: &BTreeMap<i32, f64>, psnr: &[(i32, f64)]) -> Result<RdCurve> {
    RdCurve::new(
        psnr.iter()
            .map(|&(qp, p)| RdPoint {
                rate: rates[&qp],
                psnr: p,
            })
            .collect(),
    )
}

/// Per-QP validation PSNR of the degraded input and of each checkpoint's
/// output, BD metrics of each checkpoint against the degraded anchor (needs
/// at least four QPs), parameter counts and, when timing is on, inference
/// time.
pub fn eval(cfg: &RunConfig, checkpoints: &[PathBuf], log: &Logger) -> Result<EvalSummary> {
    if checkpoints.is_empty() || checkpoints.len() > 2 {
        return Err(Error::Config("eval takes one or two checkpoints".into()));
    }
    for c in checkpoints {
        require_file(c, "checkpoint")?;
    }
    let manifest = load_manifest(cfg)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let val = manifest.load_split(Split::Validation)?;
    if val.is_empty() {
        return Err(Error::Config("the dataset has no validation patches".into()));
    }
    let groups = by_qp(val.clone());
    let mut rates = BTreeMap::new();
    let mut degraded = Vec::new();
    for (&qp, samples) in &groups {
        let mut bits = 0.0;
        for s in samples {
            bits += rate_proxy(&Image8::from_tensor(&s.original)?, QuantSpec::new(qp))?;
        }
        rates.insert(qp, bits);
        degraded.push((qp, degraded_psnr(samples)?));
    }
    let anchor = curve(&rates, &degraded);
    let labels: &[&str] = if checkpoints.len() == 2 {
        &["UCLF before pruning", "UCLF after pruning"]
    } else {
        &["UCLF"]
    };
    let mut rd_csv = String::from("condition,qp,rate_bits,psnr_db\n");
    for &(qp, p) in &degraded {
        let _ = writeln!(rd_csv, "degraded,{qp},{:.4},{:.4}", rates[&qp], p);
    }
    let mut columns = Vec::new();
    for (i, (path, label)) in checkpoints.iter().zip(labels).enumerate() {
        let model = load_model(path)?;
        let mut qp_psnr = Vec::new();
        for (&qp, samples) in &groups {
            let p = evaluate_psnr(&model, samples)?;
            let _ = writeln!(rd_csv, "filtered_{},{qp},{:.4},{:.4}", i + 1, rates[&qp], p);
            qp_psnr.push((qp, p));
        }
        let bd: Option<BdResult> = match (&anchor, &curve(&rates, &qp_psnr)) {
            (Ok(a), Ok(t)) => match bd_metrics(a, t) {
                Ok(r) => Some(r),
                Err(e) => {
                    log.warn("bd_unavailable", &[("model", label), ("reason", &e)]);
                    None
                }
            },
            (Err(e), _) | (_, Err(e)) => {
                log.warn("bd_unavailable", &[("model", label), ("reason", e)]);
                None
            }
        };
        let time_s = if cfg.timing {
            Some(time_inference(&model, &val, cfg.eval.timing_repeats.max(1))?.median_s)
        } else {
            None
        };
        columns.push(ReportColumn {
            label: label.to_string(),
            params: vec![(cfg.model.component.clone(), model.count_parameters())],
            time_s,
            bd,
            qp_psnr,
        });
    }
    let report = render_report(None, &columns, &degraded).table;
    write_text(&cfg.output_dir.join(EVAL_REPORT), &report)?;
    write_text(&cfg.output_dir.join(EVAL_RD), &rd_csv)?;
    Ok(EvalSummary {
        report,
        degraded,
        columns,
    })
}
