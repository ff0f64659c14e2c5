//! `agse`: phantom generation, preprocessing, training, inference, evaluation
//! and gradient checking.
//!
//! Exit codes: 0 success, 1 validation failure (bad flags, config or data,
//! or a failed gradient check), 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agse_core::data::PatchSpec;
use agse_core::gradcheck::Scope;
use agse_core::harness::{commands, Checkpoint, TrainConfig};
use agse_core::Error;
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "agse", version, about = "SE + attention guided filter V-Net for volumetric segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic nested-ellipsoid cases.
    PhantomGen {
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Spatial extent z,h,w.
        #[arg(long, default_value = "32,32,32", value_parser = parse_shape)]
        shape: [usize; 3],
        /// Noise level; 0 gives piecewise-constant intensities.
        #[arg(long, default_value_t = 0.3)]
        difficulty: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalise cases and write tiled image/label patches.
    Preprocess {
        /// Patch shape and stride are read from this config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, or resume from a checkpoint.
    Train {
        /// Required unless resuming; when resuming it must match the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory or previous run directory to resume from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Segment every case under --data with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground-truth cases.
    Evaluate {
        /// Directory of `<case_id>/seg.npy` predictions.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth case directories.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Voxel spacing is read from this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences and oracles.
    Gradcheck {
        #[arg(long, default_value = "all", value_parser = parse_scope)]
        scope: Scope,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad extent {p:?}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected z,h,w, got {s:?}"))
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load_config(path: Option<&Path>) -> agse_core::Result<TrainConfig> {
    path.map_or_else(|| Ok(TrainConfig::default()), TrainConfig::load)
}

/// Ok(false) means the command ran but reported a failure.
fn run(cli: Cli) -> agse_core::Result<bool> {
    match cli.command {
        Command::PhantomGen {
            n,
            shape,
            difficulty,
            seed,
            out,
        } => {
            for dir in commands::phantom_gen(n, shape, difficulty, seed, &out)? {
                println!("{}", dir.display());
            }
        }
        Command::Preprocess { config, data, out } => {
            let cfg = load_config(config.as_deref())?;
            let count = commands::preprocess(&data, &out, &PatchSpec::new(cfg.net.patch, cfg.stride)?)?;
            println!("wrote {count} patches to {}", out.join("patches").display());
        }
        Command::Train {
            config,
            seed,
            data,
            out,
            checkpoint,
        } => {
            let mut cfg = match (&config, &checkpoint) {
                (Some(path), _) => TrainConfig::load(path)?,
                (None, Some(ck)) => Checkpoint::load_model(ck)?.0,
                (None, None) => return Err(Error::Config("train needs --config or --checkpoint".into())),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = commands::train(&cfg, &data, &out, checkpoint.as_deref())?;
            if let Some(last) = result.report.steps.last() {
                println!("step {} lr {} loss {}", last.step, last.lr, last.loss);
            }
            if let Some(v) = result.report.validation.last() {
                for (region, m) in &v.means {
                    println!("validation {} dice {:?}", region.name(), m[0]);
                }
            }
            println!("report {}", out.join("report.txt").display());
        }
        Command::Predict { checkpoint, data, out } => {
            for path in commands::predict(&checkpoint, &data, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Evaluate { pred, data, out, config } => {
            let cfg = load_config(config.as_deref())?;
            print!("{}", commands::evaluate(&pred, &data, &out, cfg.spacing)?);
        }
        Command::Gradcheck { scope, seed } => {
            let checks = commands::gradcheck(scope, seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.passed()).count();
            println!("{} checks, {failed} failed", checks.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
