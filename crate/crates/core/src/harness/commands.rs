//! One function per CLI subcommand. Each is a pure function of its inputs,
//! flags and seed, so reruns produce identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{extract_patches, generate_phantom, list_cases, preprocess_case, stack_modalities, Case, PatchSpec, SegVolume};
use crate::error::{Error, Result};
use crate::gradcheck::{self, Check, Scope};
use crate::harness::config::TrainConfig;
use crate::harness::train::{self, predict_case, Checkpoint, Dataset, TrainResult};
use crate::metrics::{format_report, score_case};
use crate::npy;
use crate::rng::Rng;

/// Case directory name for phantom `i`.
pub fn phantom_id(i: usize) -> String {
    format!("phantom_{i:03}")
}

/// Writes `n` phantom cases; case `i` draws from stream `i` of `seed`.
pub fn phantom_gen(n: usize, shape: [usize; 3], difficulty: f64, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::Config("phantom-gen needs n >= 1".into()));
    }
    (0..n)
        .map(|i| {
            let case = generate_phantom(phantom_id(i), &mut Rng::with_stream(seed, i as u64), shape, difficulty)?;
            let dir = out.join(&case.id);
            case.write(&dir)?;
            Ok(dir)
        })
        .collect()
}

/// A single case directory, or every case directory under a root.
pub fn case_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    if data.join("t1.npy").is_file() {
        return Ok(vec![data.to_path_buf()]);
    }
    let dirs = list_cases(data)?;
    if dirs.is_empty() {
        return Err(Error::Config(format!("{data:?} contains no case directories")));
    }
    Ok(dirs)
}

/// Normalises every case into `out/cases/<id>` and writes the tiled patches
/// as `out/patches/img_XXXX.npy` / `lbl_XXXX.npy` with `out/patches/manifest.txt`.
/// Returns the number of patches.
pub fn preprocess(data: &Path, out: &Path, spec: &PatchSpec) -> Result<usize> {
    let patch_dir = out.join("patches");
    fs::create_dir_all(&patch_dir).map_err(|e| Error::io(&patch_dir, e))?;
    let mut manifest = String::new();
    let mut index = 0;
    for dir in case_dirs(data)? {
        let case = preprocess_case(&Case::read(&dir)?)?;
        case.write(&out.join("cases").join(&case.id))?;
        let x = stack_modalities(&case)?;
        for p in extract_patches(&x, case.labels.as_ref(), spec)? {
            let img = format!("img_{index:04}.npy");
            npy::save_tensor(&patch_dir.join(&img), &p.image)?;
            let lbl = match &p.label {
                Some(l) => {
                    let name = format!("lbl_{index:04}.npy");
                    npy::save_tensor(&patch_dir.join(&name), l)?;
                    name
                }
                None => "none".to_string(),
            };
            let [z, h, w] = p.origin;
            manifest.push_str(&format!("index={index} case={} origin={z},{h},{w} img={img} lbl={lbl}\n", case.id));
            index += 1;
        }
    }
    let path = patch_dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Trains from scratch, or resumes from `checkpoint` (a checkpoint directory
/// or a previous run directory).
pub fn train(cfg: &TrainConfig, data: &Path, out: &Path, checkpoint: Option<&Path>) -> Result<TrainResult> {
    let dataset = Dataset::read(&case_dirs(data)?, cfg)?;
    let resume = checkpoint.map(Checkpoint::load).transpose()?;
    train::train(cfg, &dataset, out, resume)
}

/// Writes `out/<case_id>/seg.npy` for every case under `data`.
pub fn predict(checkpoint: &Path, data: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let (cfg, params) = Checkpoint::load_model(checkpoint)?;
    let mut written = Vec::new();
    for dir in case_dirs(data)? {
        let case = Case::read(&dir)?;
        let seg = predict_case(&params, &cfg, &case)?;
        let case_out = out.join(&case.id);
        fs::create_dir_all(&case_out).map_err(|e| Error::io(&case_out, e))?;
        let path = case_out.join("seg.npy");
        npy::save(&path, &seg.to_npy())?;
        written.push(path);
    }
    Ok(written)
}

fn read_seg(path: &Path) -> Result<SegVolume> {
    SegVolume::from_npy(&npy::load(path)?)
}

/// Scores `pred/<id>/seg.npy` against `truth/<id>/seg.npy` for every case,
/// writes `out/evaluation.csv` and returns its text. Case sets must match.
pub fn evaluate(pred: &Path, truth: &Path, out: &Path, spacing: [f64; 3]) -> Result<String> {
    let ids = |root: &Path| -> Result<Vec<String>> {
        Ok(list_cases(root)?
            .iter()
            .map(|d| d.file_name().unwrap().to_string_lossy().into_owned())
            .collect())
    };
    let (pred_ids, truth_ids) = (ids(pred)?, ids(truth)?);
    if let Some(id) = truth_ids.iter().find(|id| !pred_ids.contains(id)) {
        return Err(Error::Config(format!("case {id} has no prediction in {pred:?}")));
    }
    if let Some(id) = pred_ids.iter().find(|id| !truth_ids.contains(id)) {
        return Err(Error::Config(format!("prediction {id} has no ground truth in {truth:?}")));
    }
    if truth_ids.is_empty() {
        return Err(Error::Config(format!("{truth:?} contains no cases")));
    }
    let per_case = truth_ids
        .par_iter()
        .map(|id| {
            let p = read_seg(&pred.join(id).join("seg.npy"))?;
            let t = read_seg(&truth.join(id).join("seg.npy"))?;
            score_case(id, &p, &t, spacing)
        })
        .collect::<Result<Vec<_>>>()?;
    let text = format_report(&per_case.concat());
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("evaluation.csv");
    fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    Ok(text)
}

pub fn gradcheck(scope: Scope, seed: u64) -> Result<Vec<Check>> {
    gradcheck::run(scope, seed)
}
