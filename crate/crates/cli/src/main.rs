use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use loopprune_core::codec::synth_image;
use loopprune_core::config::RunConfig;
use loopprune_core::metrics::thousands;
use loopprune_core::pipeline::{self, Logger, BASELINE_CKPT, PRUNED_CKPT};
use loopprune_core::Error;

#[derive(Parser)]
#[command(name = "loopprune", version, about = "Train, prune and evaluate a single-branch in-loop filter CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. `--set prune.pt=0.5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Suppress progress logs on stderr
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade the source images and write paired patches plus a manifest
    GenData(Common),
    /// Train the baseline model
    Train(Common),
    /// Prune a trained checkpoint (default: the baseline in output_dir)
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Per-QP PSNR, BD metrics and a comparison table for one or two checkpoints.
    /// Without flags: the baseline, plus the pruned model when it exists.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        checkpoint2: Option<PathBuf>,
    },
    /// Write synthetic 8-bit PGM source images
    MakeFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 192)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(common: &Common) -> Result<(RunConfig, Logger), Error> {
    let cfg = RunConfig::load(&common.config, &common.overrides)?;
    Ok((cfg, Logger { quiet: common.quiet }))
}

fn eval_inputs(cfg: &RunConfig, first: Option<PathBuf>, second: Option<PathBuf>) -> Vec<PathBuf> {
    match (first, second) {
        (None, None) => {
            let mut v = vec![cfg.output_dir.join(BASELINE_CKPT)];
            let pruned = cfg.output_dir.join(PRUNED_CKPT);
            if pruned.is_file() {
                v.push(pruned);
            }
            v
        }
        (a, b) => {
            let first = a.unwrap_or_else(|| cfg.output_dir.join(BASELINE_CKPT));
            std::iter::once(first).chain(b).collect()
        }
    }
}

fn make_fixtures(out: &Path, count: usize, size: usize, seed: u64) -> Result<(), Error> {
    if count == 0 || size < 8 {
        return Err(Error::Config("make-fixtures needs count >= 1 and size >= 8".into()));
    }
    std::fs::create_dir_all(out).map_err(|source| Error::Io {
        path: out.to_path_buf(),
        source,
    })?;
    for i in 0..count {
        let path = out.join(format!("fixture{i:02}.pgm"));
        synth_image(size, size, seed.wrapping_add(i as u64)).write_pgm(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData(common) => {
            let (cfg, log) = load(&common)?;
            let manifest = pipeline::gen_data(&cfg, &log)?;
            for ((qp, split), n) in manifest.counts() {
                println!("qp {qp} {}: {n} patches", split.as_str());
            }
        }
        Command::Train(common) => {
            let (cfg, log) = load(&common)?;
            let s = pipeline::train(&cfg, &log)?;
            println!(
                "trained {} epoch(s): {} params, validation PSNR {:.4} dB (degraded input {:.4} dB), saved {}",
                s.epochs,
                thousands(s.params),
                s.best_psnr,
                s.degraded_psnr,
                s.checkpoint.display()
            );
        }
        Command::Prune { common, checkpoint } => {
            let (cfg, log) = load(&common)?;
            let s = pipeline::prune(&cfg, checkpoint.as_deref(), &log)?;
            println!("{s}, saved {}", s.checkpoint.display());
        }
        Command::Eval {
            common,
            checkpoint,
            checkpoint2,
        } => {
            let (cfg, log) = load(&common)?;
            let inputs = eval_inputs(&cfg, checkpoint, checkpoint2);
            print!("{}", pipeline::eval(&cfg, &inputs, &log)?.report);
        }
        Command::MakeFixtures {
            out,
            count,
            size,
            seed,
        } => make_fixtures(&out, count, size, seed)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
