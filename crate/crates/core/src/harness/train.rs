//! Training loop, checkpoints and patch-wise inference.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{extract_patches, preprocess_case, stack_modalities, stitch_patches, Case, PatchSpec, SegVolume};
use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::optim::{self, OptimState};
use crate::losses::dice_loss;
use crate::metrics::{cell, region_means, score_case, Region};
use crate::net::{self, load_params, save_params, NetParams};
use crate::npy;
use crate::rng::Rng;
use crate::tensor::Tensor5;

/// Rng streams derived from the run seed. Each epoch shuffle and each step
/// gets its own stream so a resumed run replays the same randomness.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 32;
const STEP_STREAM: u64 = 1 << 33;

#[derive(Clone, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Mean validation scores after an epoch, one entry per region in report order.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochValidation {
    pub epoch: usize,
    /// Number of completed steps when the validation ran.
    pub step: usize,
    pub means: Vec<(Region, [Option<f64>; 4])>,
}

impl EpochValidation {
    pub fn dice(&self, region: Region) -> Option<f64> {
        self.means.iter().find(|(r, _)| *r == region).and_then(|(_, m)| m[0])
    }
}

/// Everything a run reports except wall-clock time, which is written to a
/// separate file so the report stays byte-reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub config_hash: String,
    pub train_cases: Vec<String>,
    pub val_cases: Vec<String>,
    pub steps: Vec<StepLog>,
    pub validation: Vec<EpochValidation>,
}

const STEP_HEADER: &str = "step,lr,loss";
const VAL_HEADER: &str = "epoch,step,region,dice,sensitivity,specificity,hd95";

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "config_hash={}", self.config_hash);
        let _ = writeln!(s, "train_cases={}", self.train_cases.join(","));
        let _ = writeln!(s, "val_cases={}", self.val_cases.join(","));
        let _ = writeln!(s, "\n{STEP_HEADER}");
        for l in &self.steps {
            let _ = writeln!(s, "{},{},{}", l.step, l.lr, l.loss);
        }
        let _ = writeln!(s, "\n{VAL_HEADER}");
        for v in &self.validation {
            for (region, m) in &v.means {
                let cells: Vec<String> = m.iter().map(|x| cell(*x)).collect();
                let _ = writeln!(s, "{},{},{},{}", v.epoch, v.step, region.name(), cells.join(","));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("run report: {m}"));
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix('='))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected {key}=, got {line:?}")))
        };
        let seed = header("seed")?.parse().map_err(|_| bad("seed"))?;
        let config_hash = header("config_hash")?;
        let names = |s: String| -> Vec<String> {
            s.split(',').filter(|x| !x.is_empty()).map(str::to_string).collect()
        };
        let train_cases = names(header("train_cases")?);
        let val_cases = names(header("val_cases")?);
        let mut report = RunReport {
            seed,
            config_hash,
            train_cases,
            val_cases,
            steps: Vec::new(),
            validation: Vec::new(),
        };
        let mut section = "";
        for line in lines {
            match line {
                "" => continue,
                STEP_HEADER | VAL_HEADER => {
                    section = if line == STEP_HEADER { STEP_HEADER } else { VAL_HEADER };
                    continue;
                }
                _ => {}
            }
            let f: Vec<&str> = line.split(',').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("bad number in {line:?}")));
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(&format!("bad integer in {line:?}")));
            match (section, f.len()) {
                (STEP_HEADER, 3) => report.steps.push(StepLog {
                    step: int(f[0])?,
                    lr: num(f[1])?,
                    loss: num(f[2])?,
                }),
                (VAL_HEADER, 7) => {
                    let region = Region::REPORT_ORDER
                        .into_iter()
                        .find(|r| r.name() == f[2])
                        .ok_or_else(|| bad(&format!("unknown region in {line:?}")))?;
                    let mut m = [None; 4];
                    for (slot, s) in m.iter_mut().zip(&f[3..]) {
                        *slot = if *s == "undefined" { None } else { Some(num(s)?) };
                    }
                    let (epoch, step) = (int(f[0])?, int(f[1])?);
                    match report.validation.last_mut() {
                        Some(v) if v.epoch == epoch => v.means.push((region, m)),
                        _ => report.validation.push(EpochValidation {
                            epoch,
                            step,
                            means: vec![(region, m)],
                        }),
                    }
                }
                _ => return Err(bad(&format!("unexpected line {line:?}"))),
            }
        }
        Ok(report)
    }
}

/// Training patches with one-hot labels, plus the held-out validation cases.
pub struct Dataset {
    pub train_ids: Vec<String>,
    pub val: Vec<Case>,
    pub patches: Vec<(Tensor5, Tensor5)>,
}

impl Dataset {
    /// Splits `cases` (any order; sorted by id here) into training and the
    /// trailing `val_cases` validation cases, then tiles the training cases.
    pub fn new(mut cases: Vec<Case>, cfg: &TrainConfig) -> Result<Self> {
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        if cases.len() <= cfg.val_cases {
            return Err(Error::Config(format!(
                "{} cases leave no training case after holding out {}",
                cases.len(),
                cfg.val_cases
            )));
        }
        let val = cases.split_off(cases.len() - cfg.val_cases);
        let spec = PatchSpec::new(cfg.net.patch, cfg.stride)?;
        let mut patches = Vec::new();
        for case in &cases {
            let labels = case
                .labels
                .as_ref()
                .ok_or_else(|| Error::Config(format!("training case {} has no seg.npy", case.id)))?;
            let x = stack_modalities(&preprocess_case(case)?)?;
            for p in extract_patches(&x, Some(labels), &spec)? {
                patches.push((p.image, p.label.expect("labels were supplied")));
            }
        }
        Ok(Self {
            train_ids: cases.into_iter().map(|c| c.id).collect(),
            val,
            patches,
        })
    }

    pub fn read(dirs: &[PathBuf], cfg: &TrainConfig) -> Result<Self> {
        let cases = dirs.iter().map(|d| Case::read(d)).collect::<Result<Vec<_>>>()?;
        Self::new(cases, cfg)
    }
}

/// Normalises, tiles, runs the network per patch, stitches probabilities and
/// takes the per-voxel argmax.
pub fn predict_case(params: &NetParams, cfg: &TrainConfig, case: &Case) -> Result<SegVolume> {
    let x = stack_modalities(&preprocess_case(case)?)?;
    let spec = PatchSpec::new(cfg.net.patch, cfg.stride)?;
    // dropout is off at inference, so the rng is never drawn from
    let mut rng = Rng::new(cfg.seed);
    let probs = extract_patches(&x, None, &spec)?
        .iter()
        .map(|p| Ok(net::forward(&p.image, params, &cfg.net, false, &mut rng)?.output))
        .collect::<Result<Vec<_>>>()?;
    let stitched = stitch_patches(&probs, x.shape().with_channels(probs[0].shape().c), &spec)?;
    net::predict_labels(&stitched)
}

/// Checkpoint directory name for a step count.
pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}")
}

/// Saved training state: parameters, optimizer moments, configuration and
/// the report so far.
pub struct Checkpoint {
    pub step: usize,
    pub config: TrainConfig,
    pub params: NetParams,
    pub state: OptimState,
    pub report: RunReport,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        if let Some((name, _)) = self.params.iter().find(|(_, t)| !t.all_finite()) {
            return Err(Error::invalid(
                "checkpoint",
                format!("refusing to write non-finite parameter {name} at step {}", self.step),
            ));
        }
        save_params(&dir.join("params"), &self.params)?;
        self.state.save(&dir.join("optim"))?;
        let write = |file: &str, text: String| {
            let p = dir.join(file);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("config.txt", self.config.to_text())?;
        write("state.txt", format!("step={}\nconfig_hash={}\n", self.step, self.config.hash()))?;
        write("report.txt", self.report.to_text())
    }

    /// Loads a checkpoint directory, or the latest checkpoint of a run
    /// directory containing `latest.txt`.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = resolve_checkpoint(path)?;
        let read = |file: &str| {
            let p = dir.join(file);
            fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        let config = TrainConfig::parse(&read("config.txt")?)?;
        let state_text = read("state.txt")?;
        let field = |key: &str| {
            state_text
                .lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| Error::Config(format!("{dir:?}: state.txt lacks {key}")))
        };
        let step = field("step")?
            .parse()
            .map_err(|_| Error::Config(format!("{dir:?}: bad step")))?;
        if field("config_hash")? != config.hash() {
            return Err(Error::Config(format!("{dir:?}: config.txt does not match the recorded hash")));
        }
        let params = load_params(&dir.join("params"))?;
        net::check_params(&config.net, &params)?;
        let state = OptimState::load(&dir.join("optim"))?;
        let report = RunReport::from_text(&read("report.txt")?)?;
        Ok(Self {
            step,
            config,
            params,
            state,
            report,
        })
    }

    /// Loads only what inference needs.
    pub fn load_model(path: &Path) -> Result<(TrainConfig, NetParams)> {
        let dir = resolve_checkpoint(path)?;
        let p = dir.join("config.txt");
        let config = TrainConfig::parse(&fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?)?;
        let params = load_params(&dir.join("params"))?;
        net::check_params(&config.net, &params)?;
        Ok((config, params))
    }
}

fn resolve_checkpoint(path: &Path) -> Result<PathBuf> {
    let latest = path.join("latest.txt");
    if latest.is_file() {
        let name = fs::read_to_string(&latest).map_err(|e| Error::io(&latest, e))?;
        Ok(path.join("checkpoints").join(name.trim()))
    } else {
        Ok(path.to_path_buf())
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::with_stream(seed, SHUFFLE_STREAM + epoch as u64).shuffle(&mut order);
    order
}

fn dump_batch(dir: &Path, x: &Tensor5, g: &Tensor5) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    npy::save_tensor(&dir.join("image.npy"), x)?;
    npy::save_tensor(&dir.join("label.npy"), g)
}

/// Outcome of [`train`]: the report plus the final parameters.
pub struct TrainResult {
    pub report: RunReport,
    pub params: NetParams,
    pub wall_clock_secs: f64,
}

/// Runs (or resumes) training up to `cfg.max_steps`, writing checkpoints under
/// `out/checkpoints`, `out/latest.txt`, `out/report.txt` and
/// `out/wall_clock.txt`. A resumed run must use the checkpoint's config.
pub fn train(cfg: &TrainConfig, data: &Dataset, out: &Path, resume: Option<Checkpoint>) -> Result<TrainResult> {
    cfg.validate()?;
    let started = Instant::now();
    let (mut step, mut params, mut state, mut report) = match resume {
        Some(ck) => {
            if ck.config != *cfg {
                return Err(Error::Config(format!(
                    "config hash {} differs from the checkpoint's {}",
                    cfg.hash(),
                    ck.config.hash()
                )));
            }
            if ck.report.train_cases != data.train_ids {
                return Err(Error::Config("training cases differ from the checkpoint's".into()));
            }
            (ck.step, ck.params, ck.state, ck.report)
        }
        None => {
            let params = net::build(&cfg.net, &mut Rng::with_stream(cfg.seed, INIT_STREAM))?;
            let state = OptimState::zeros_like(&params);
            let report = RunReport {
                seed: cfg.seed,
                config_hash: cfg.hash(),
                train_cases: data.train_ids.clone(),
                val_cases: data.val.iter().map(|c| c.id.clone()).collect(),
                steps: Vec::new(),
                validation: Vec::new(),
            };
            (0, params, state, report)
        }
    };
    let n = data.patches.len();
    if n == 0 {
        return Err(Error::Config("no training patches".into()));
    }
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let ck_root = out.join("checkpoints");
    let mut order_cache: Option<(usize, Vec<usize>)> = None;

    while step < cfg.max_steps {
        let epoch = step / steps_per_epoch;
        if order_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            order_cache = Some((epoch, epoch_order(cfg.seed, epoch, n)));
        }
        let order = &order_cache.as_ref().unwrap().1;
        let j = step % steps_per_epoch;
        let batch = &order[j * cfg.batch_size..((j + 1) * cfg.batch_size).min(n)];
        let x = Tensor5::concat_batch(&batch.iter().map(|&i| data.patches[i].0.clone()).collect::<Vec<_>>())?;
        let g = Tensor5::concat_batch(&batch.iter().map(|&i| data.patches[i].1.clone()).collect::<Vec<_>>())?;

        let mut rng = Rng::with_stream(cfg.seed, STEP_STREAM + step as u64);
        let fwd = net::forward(&x, &params, &cfg.net, true, &mut rng)?;
        let (loss, dp) = dice_loss(&fwd.output, &g, &cfg.class_weights)?;
        let grads = if loss.is_finite() { Some(fwd.backward(&dp).params) } else { None };
        let finite = grads.as_ref().is_some_and(|gr| gr.values().all(Tensor5::all_finite));
        if !finite {
            let dump = out.join(format!("nonfinite_step_{step:06}"));
            dump_batch(&dump, &x, &g)?;
            return Err(Error::NonFiniteLoss { step, dump });
        }
        let lr = cfg.lr_at(step);
        optim::apply(cfg.optimizer, &mut params, &grads.unwrap(), &mut state, lr, step + 1)?;
        report.steps.push(StepLog { step, lr, loss });
        step += 1;

        if step % steps_per_epoch == 0 && !data.val.is_empty() {
            let mut rows = Vec::new();
            for case in &data.val {
                let truth = case
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("validation case {} has no seg.npy", case.id)))?;
                rows.extend(score_case(&case.id, &predict_case(&params, cfg, case)?, truth, cfg.spacing)?);
            }
            report.validation.push(EpochValidation {
                epoch,
                step,
                means: Region::REPORT_ORDER.iter().map(|&r| (r, region_means(&rows, r))).collect(),
            });
        }

        if step % cfg.checkpoint_interval == 0 || step == cfg.max_steps {
            let name = checkpoint_name(step);
            let ck = Checkpoint {
                step,
                config: cfg.clone(),
                params: params.clone(),
                state: state.clone(),
                report: report.clone(),
            };
            ck.save(&ck_root.join(&name))?;
            let latest = out.join("latest.txt");
            fs::write(&latest, format!("{name}\n")).map_err(|e| Error::io(&latest, e))?;
        }
    }

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("report.txt");
    fs::write(&path, report.to_text()).map_err(|e| Error::io(&path, e))?;
    let wall_clock_secs = started.elapsed().as_secs_f64();
    let path = out.join("wall_clock.txt");
    fs::write(&path, format!("seconds={wall_clock_secs:.3}\n")).map_err(|e| Error::io(&path, e))?;
    Ok(TrainResult {
        report,
        params,
        wall_clock_secs,
    })
}
