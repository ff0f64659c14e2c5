//! End-to-end acceptance suite. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line even when output is captured.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use agse_core::ag::{ag_fit, box_sum, window_coefficients};
use agse_core::data::{generate_phantom, SegVolume, CHANNEL_LABELS};
use agse_core::gradcheck::{self, Scope};
use agse_core::harness::train::{predict_case, Dataset};
use agse_core::harness::{commands, TrainConfig};
use agse_core::losses::{dice_loss, dice_loss_composed, ClassWeights};
use agse_core::metrics::{
    confusion, derive_regions, hausdorff95, metric, region_mask, score_case, MetricKind, Region, RegionMask,
};
use agse_core::net::{self, NetConfig};
use agse_core::nn::{
    conv3d_forward, conv_output_extent, deconv3d_forward, softmax_channel, transpose_kernel_channels, Conv3dParams,
    Deconv3dParams,
};
use agse_core::npy::{self, NpyArray, NpyData};
use agse_core::verify::oracles;
use agse_core::{Rng, Shape5, Tensor5};
use sha2::{Digest, Sha256};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn max_abs_diff(a: &Tensor5, b: &Tensor5) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c1_gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst_layer: f64 = 0.0;
    let mut worst_composite: f64 = 0.0;
    let mut failures = Vec::new();
    for scope in [Scope::Layers, Scope::Se, Scope::Ag, Scope::Loss, Scope::Net] {
        for seed in 0..5 {
            for c in gradcheck::run(scope, seed).expect("gradcheck") {
                if !c.passed() {
                    failures.push(format!("seed {seed} {c}"));
                }
                if c.component.ends_with(".grad") || c.component.ends_with(".grad_logits") {
                    if c.tolerance > 1e-5 {
                        worst_composite = worst_composite.max(c.error);
                    } else {
                        worst_layer = worst_layer.max(c.error);
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < 300.0,
        format!(
            "5 seeds per scope; worst layer/loss rel err {worst_layer:.2e} (tol 1e-5), worst AG block/network {worst_composite:.2e} (tol 1e-4), {secs:.1}s (limit 300s){}",
            if failures.is_empty() { String::new() } else { format!("; failures: {failures:?}") }
        ),
    )
}

fn c2_dice_paths() -> Outcome {
    let mut rng = Rng::new(2);
    let mut worst: f64 = 0.0;
    for pair in 0..20 {
        let shape = Shape5::new(1 + pair % 2, 3 + pair % 3, 4, 5, 4);
        let p = softmax_channel(&Tensor5::normal(shape, 2.0, &mut rng)).output;
        let g = Tensor5::from_fn(shape, |_, _, _, _, _| 0.0);
        let mut g = g.into_vec();
        for vox in 0..shape.len() / 4 {
            g[vox * 4 + rng.below(4)] = 1.0;
        }
        let g = Tensor5::from_vec(shape, g).unwrap();
        let w = ClassWeights::new([rng.uniform(), rng.uniform(), rng.uniform(), 0.1 + rng.uniform()]).unwrap();
        let (l1, g1) = dice_loss(&p, &g, &w).unwrap();
        let (l2, g2) = dice_loss_composed(&p, &g, &w).unwrap();
        let scale = g1.max_abs().max(g2.max_abs());
        worst = worst.max(max_abs_diff(&g1, &g2) / scale).max((l1 - l2).abs());
    }
    outcome(worst <= 1e-10, format!("20 pairs; closed form vs composed max rel diff {worst:.2e} (tol 1e-10)"))
}

fn c3_guided_filter() -> Outcome {
    let mut rng = Rng::new(3);
    let (mut fit, mut classical): (f64, f64) = (0.0, 0.0);
    for r in 1..=3 {
        for _ in 0..3 {
            let s = Shape5::new(1, 6, 6, 6, 2);
            let i_l = Tensor5::normal(s, 1.0, &mut rng);
            let o = Tensor5::normal(s, 1.0, &mut rng);
            let t = Tensor5::uniform(s.with_channels(1), 0.1, 1.0, &mut rng);
            let eps = rng.uniform_range(0.01, 0.5);
            let win = window_coefficients(&i_l, &o, &t, r, eps).unwrap();
            let (a_ref, b_ref) = oracles::window_normal_equations(&i_l, &o, &t, r, eps);
            fit = fit.max(max_abs_diff(&win.a, &a_ref)).max(max_abs_diff(&win.b, &b_ref));
            let avg = ag_fit(&i_l, &o, &t, r, eps).unwrap();
            fit = fit
                .max(max_abs_diff(&avg.a, &oracles::covering_average(&a_ref, r)))
                .max(max_abs_diff(&avg.b, &oracles::covering_average(&b_ref, r)));
            let unit = ag_fit(&i_l, &o, &t.ones_like(), r, eps).unwrap();
            let (ca, cb) = oracles::unweighted_guided_filter(&i_l, &o, r, eps);
            classical = classical.max(max_abs_diff(&unit.a, &ca)).max(max_abs_diff(&unit.b, &cb));
        }
    }
    outcome(
        fit <= 1e-10 && classical == 0.0,
        format!("6^3, r in 1..=3; weighted fit vs normal equations {fit:.2e} (tol 1e-10); T=1 vs classical {classical:e} (exact)"),
    )
}

fn c4_box_sum() -> Outcome {
    let mut rng = Rng::new(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let s = Shape5::new(1 + rng.below(2), 1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(9), 1 + rng.below(3));
        let x = Tensor5::from_fn(s, |_, _, _, _, _| rng.below(201) as f64 - 100.0);
        let r = 1 + rng.below(4);
        worst = worst.max(max_abs_diff(&box_sum(&x, r), &oracles::window_sum(&x, r)));
    }
    outcome(worst == 0.0, format!("50 integer volumes; max |box_sum - naive| = {worst:e} (exact)"))
}

fn c5_conv_arithmetic() -> Outcome {
    let mut mismatches = 0;
    let mut cases = 0;
    for i in 1..=10 {
        for k in 1..=5 {
            for s in 1..=3 {
                for p in 0..=2 {
                    if i + 2 * p < k {
                        continue;
                    }
                    cases += 1;
                    let expect = (i + 2 * p - k) / s + 1;
                    let conv = Conv3dParams::new(Tensor5::zeros(Shape5::new(k, k, k, 1, 1)), None, [s; 3], [p; 3]).unwrap();
                    let got = conv3d_forward(&Tensor5::zeros(Shape5::new(1, i, i, i, 1)), &conv).unwrap().output.shape();
                    if got.spatial() != [expect; 3] || conv_output_extent(i, k, s, p) != Some(expect) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let mut doubling = true;
    for i in 1..=8 {
        let de = Deconv3dParams::new(Tensor5::zeros(Shape5::new(3, 3, 3, 1, 1)), None, [2; 3], [1; 3], [1; 3]).unwrap();
        let y = deconv3d_forward(&Tensor5::zeros(Shape5::new(1, i, i + 1, i + 2, 1)), &de).unwrap().output;
        doubling &= y.shape().spatial() == [2 * i, 2 * (i + 1), 2 * (i + 2)];
    }
    let mut rng = Rng::new(5);
    let mut adjoint: f64 = 0.0;
    for (stride, pad) in [(1, 1), (2, 1), (2, 0), (1, 0)] {
        let x = Tensor5::normal(Shape5::new(2, 7, 6, 5, 3), 1.0, &mut rng);
        let k = Tensor5::normal(Shape5::new(3, 3, 3, 3, 2), 1.0, &mut rng);
        let conv = Conv3dParams::new(k.clone(), None, [stride; 3], [pad; 3]).unwrap();
        let fwd = conv3d_forward(&x, &conv).unwrap();
        let y = Tensor5::normal(fwd.output.shape(), 1.0, &mut rng);
        // the input gradient is the adjoint applied to y
        let back = fwd.backward(&y).input;
        let (lhs, rhs) = (fwd.output.dot(&y).unwrap(), x.dot(&back).unwrap());
        adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        if stride == 2 && pad == 1 {
            // explicit transposed convolution, with the output padding that
            // restores the input extents
            let op = [0, 1, 2].map(|ax| x.shape().spatial()[ax] + 2 * pad - 3 - (fwd.output.shape().spatial()[ax] - 1) * 2);
            let de = Deconv3dParams::new(transpose_kernel_channels(&k), None, [2; 3], [1; 3], op).unwrap();
            let dy = deconv3d_forward(&y, &de).unwrap().output;
            let rhs = x.dot(&dy).unwrap();
            adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
    }
    outcome(
        mismatches == 0 && doubling && adjoint <= 1e-10,
        format!(
            "{cases} (i,k,s,p) cases with i<=10 k<=5 s<=3 p<=2: {mismatches} extent mismatches; k3 s2 p1 op1 deconv doubles: {doubling}; adjointness {adjoint:.2e} (tol 1e-10)"
        ),
    )
}

fn c6_shape_contract() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut shapes_ok = true;
    for extent in [16, 32] {
        for bw in [2, 4] {
            let cfg = NetConfig { base_width: bw, patch: [extent; 3], ..NetConfig::default() };
            let params = net::build(&cfg, &mut Rng::new(6)).unwrap();
            let x = Tensor5::normal(Shape5::new(1, extent, extent, extent, 4), 1.0, &mut Rng::new(7));
            let y = net::forward(&x, &params, &cfg, false, &mut Rng::new(8)).unwrap().output;
            shapes_ok &= y.shape() == x.shape();
            for row in y.data().chunks_exact(4) {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    outcome(
        shapes_ok && worst <= 1e-12,
        format!("{{16,32}}^3 x base_width {{2,4}}: shapes preserved {shapes_ok}; max |channel sum - 1| = {worst:.2e} (tol 1e-12)"),
    )
}

/// Face-connected surface written independently of the library.
fn brute_surface(m: &[bool], shape: [usize; 3]) -> Vec<[usize; 3]> {
    let [z, h, w] = shape;
    let at = |k: isize, i: isize, j: isize| {
        k >= 0 && i >= 0 && j >= 0 && (k as usize) < z && (i as usize) < h && (j as usize) < w && m[((k as usize) * h + i as usize) * w + j as usize]
    };
    let mut out = Vec::new();
    for k in 0..z as isize {
        for i in 0..h as isize {
            for j in 0..w as isize {
                if at(k, i, j)
                    && [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
                        .iter()
                        .any(|&(a, b, c)| !at(k + a, i + b, j + c))
                {
                    out.push([k as usize, i as usize, j as usize]);
                }
            }
        }
    }
    out
}

fn c7_metrics_oracle() -> Outcome {
    let mut rng = Rng::new(7);
    let (mut count_errors, mut ratio_err, mut hd_err): (usize, f64, f64) = (0, 0.0, 0.0);
    for _ in 0..100 {
        let shape = [8 + rng.below(3), 8 + rng.below(3), 8 + rng.below(3)];
        let len = shape.iter().product();
        let (da, db) = (rng.uniform_range(0.05, 0.6), rng.uniform_range(0.05, 0.6));
        let a: Vec<bool> = (0..len).map(|_| rng.uniform() < da).collect();
        let b: Vec<bool> = (0..len).map(|_| rng.uniform() < db).collect();
        let spacing = [rng.uniform_range(0.5, 2.0), rng.uniform_range(0.5, 2.0), rng.uniform_range(0.5, 2.0)];
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for (&p, &t) in a.iter().zip(&b) {
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let pm = RegionMask::new(Region::WT, shape, a.clone()).unwrap();
        let tm = RegionMask::new(Region::WT, shape, b.clone()).unwrap();
        let c = confusion(&pm, &tm).unwrap();
        if (c.tp, c.fp, c.fn_, c.tn) != (tp, fp, fn_, tn) {
            count_errors += 1;
        }
        let expect = [
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64,
            tp as f64 / (tp + fn_) as f64,
            tn as f64 / (tn + fp) as f64,
        ];
        for (kind, e) in [MetricKind::Dice, MetricKind::Sensitivity, MetricKind::Specificity].into_iter().zip(expect) {
            ratio_err = ratio_err.max((metric(kind, &c).unwrap() - e).abs());
        }
        let (h95, _) = oracles::hausdorff_all_pairs(&brute_surface(&a, shape), &brute_surface(&b, shape), spacing);
        hd_err = hd_err.max((hausdorff95(&pm, &tm, spacing).unwrap().unwrap() - h95).abs());
    }
    let labels = SegVolume::new([9, 8, 10], (0..720).map(|_| CHANNEL_LABELS[rng.below(4)]).collect()).unwrap();
    let identity = score_case("x", &labels, &labels, [1.0; 3]).unwrap();
    let identity_ok = identity.iter().all(|r| r.dice == Some(1.0) && r.hd95 == Some(0.0));
    outcome(
        count_errors == 0 && ratio_err <= 1e-12 && hd_err <= 1e-12 && identity_ok,
        format!(
            "100 pairs 8^3-10^3: {count_errors} count mismatches; ratio err {ratio_err:.1e}; hd95 err {hd_err:.1e} (tol 1e-12); pred==truth gives dice 1 and hd95 0: {identity_ok}"
        ),
    )
}

fn c8_region_nesting() -> Outcome {
    let mut violations = 0;
    let check = |labels: &SegVolume| {
        let [wt, tc, et] = derive_regions(labels);
        let direct = |r| region_mask(labels, r);
        !(et.is_subset_of(&tc) && tc.is_subset_of(&wt) && wt == direct(Region::WT) && et == direct(Region::ET))
    };
    for seed in 0..20 {
        let case = generate_phantom("p", &mut Rng::new(seed), [16 + (seed as usize % 3) * 8; 3], 0.5).unwrap();
        violations += check(case.labels.as_ref().unwrap()) as usize;
    }
    let mut rng = Rng::new(8);
    for _ in 0..100 {
        let shape = [1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)];
        let data = (0..shape.iter().product()).map(|_| CHANNEL_LABELS[rng.below(4)]).collect();
        violations += check(&SegVolume::new(shape, data).unwrap()) as usize;
    }
    outcome(violations == 0, format!("20 phantoms + 100 random label volumes: {violations} nesting violations"))
}

fn mean_dice(rows: &[agse_core::metrics::RegionScores], region: Region) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.region == region).filter_map(|r| r.dice).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn c9_end_to_end(work: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = TrainConfig::parse(include_str!("../../../configs/desk.txt")).unwrap();
    let data = work.join("phantoms");
    commands::phantom_gen(20, [32; 3], 0.3, 7, &data).unwrap();
    let dataset = Dataset::read(&commands::case_dirs(&data).unwrap(), &cfg).unwrap();
    let result = agse_core::harness::train::train(&cfg, &dataset, &work.join("run"), None).unwrap();
    let mut held_out = Vec::new();
    for case in &dataset.val {
        let pred = predict_case(&result.params, &cfg, case).unwrap();
        held_out.extend(score_case(&case.id, &pred, case.labels.as_ref().unwrap(), cfg.spacing).unwrap());
    }
    let (wt, tc, et) = (mean_dice(&held_out, Region::WT), mean_dice(&held_out, Region::TC), mean_dice(&held_out, Region::ET));
    let train_case = agse_core::data::Case::read(&data.join(commands::phantom_id(0))).unwrap();
    let train_pred = predict_case(&result.params, &cfg, &train_case).unwrap();
    let train_wt = score_case("t", &train_pred, train_case.labels.as_ref().unwrap(), cfg.spacing)
        .unwrap()
        .into_iter()
        .find(|r| r.region == Region::WT)
        .and_then(|r| r.dice)
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ordering = wt >= et;
    outcome(
        wt >= 0.80 && et >= 0.60 && ordering && secs <= 1800.0 && cfg.max_steps <= 500 && cfg.batch_size == 1,
        format!(
            "20 phantoms 32^3 difficulty 0.3, base_width 4, {} steps, 4 held out: WT {wt:.4} (>= 0.80), TC {tc:.4}, ET {et:.4} (>= 0.60), WT >= ET: {ordering}; training-case WT {train_wt:.4}; {secs:.0}s (limit 1800s)",
            cfg.max_steps
        ),
    )
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "wall_clock.txt" {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c10_reproducibility(work: &Path) -> Outcome {
    let cfg = TrainConfig::parse(
        "base_width = 2\npatch = 16,16,16\nse_reduction = 2\nmax_steps = 24\ndecay_step = 12\ncheckpoint_interval = 8\nval_cases = 1\nlr = 1e-3\nlr_decayed = 3e-4\ndropout = 0.2\nseed = 4\n",
    )
    .unwrap();
    let data = work.join("data");
    commands::phantom_gen(3, [16, 16, 32], 0.3, 11, &data).unwrap();
    let run = |name: &str, resume: Option<&Path>| {
        let out = work.join(name);
        commands::train(&cfg, &data, &out, resume).unwrap();
        commands::predict(&out, &data, &out.join("pred")).unwrap();
        commands::evaluate(&out.join("pred"), &data, &out.join("eval"), cfg.spacing).unwrap();
        out
    };
    let (a, b) = (run("a", None), run("b", None));
    let identical = tree(&a) == tree(&b);
    let c = run("c", Some(&a.join("checkpoints/step_000008")));
    let resumed = tree(&a.join("checkpoints/step_000024")) == tree(&c.join("checkpoints/step_000024"))
        && fs::read(a.join("report.txt")).unwrap() == fs::read(c.join("report.txt")).unwrap()
        && tree(&a.join("pred")) == tree(&c.join("pred"))
        && tree(&a.join("eval")) == tree(&c.join("eval"));
    let files = tree(&a).len();
    outcome(
        identical && resumed,
        format!("two runs: {files} checkpoint/prediction/report files byte-identical: {identical}; resume from step 8 matches at step 24: {resumed}"),
    )
}

fn c11_npy(work: &Path) -> Outcome {
    let mut rng = Rng::new(11);
    let (mut exact, mut npyz_ok) = (0, 0);
    let mut manifest = String::new();
    for i in 0..50 {
        let ndim = 1 + rng.below(5);
        let shape: Vec<usize> = (0..ndim).map(|_| rng.below(6)).collect();
        let len: usize = shape.iter().product();
        let array = if i % 5 == 4 {
            NpyArray::u8(shape.clone(), (0..len).map(|_| rng.below(256) as u8).collect())
        } else {
            let specials = [0.0, -0.0, f64::INFINITY, f64::NEG_INFINITY, f64::MIN_POSITIVE, f64::MAX, 5e-324];
            NpyArray::f64(
                shape.clone(),
                (0..len)
                    .map(|_| if rng.below(8) == 0 { specials[rng.below(specials.len())] } else { rng.normal() * 1e3 })
                    .collect(),
            )
        };
        let path = work.join(format!("t{i:02}.npy"));
        npy::save(&path, &array).unwrap();
        let back = npy::load(&path).unwrap();
        let same_bits = match (&array.data, &back.data) {
            (NpyData::F64(a), NpyData::F64(b)) => a.iter().map(|v| v.to_bits()).eq(b.iter().map(|v| v.to_bits())),
            (NpyData::U8(a), NpyData::U8(b)) => a == b,
            _ => false,
        };
        exact += (same_bits && back.shape == shape) as usize;

        let bytes = fs::read(&path).unwrap();
        let file = npyz::NpyFile::new(&bytes[..]).unwrap();
        let third_shape: Vec<usize> = file.shape().iter().map(|&d| d as usize).collect();
        let raw: Vec<u8> = match &array.data {
            NpyData::F64(a) => {
                let v: Vec<f64> = file.into_vec().unwrap();
                npyz_ok += (third_shape == shape && v.iter().map(|x| x.to_bits()).eq(a.iter().map(|x| x.to_bits()))) as usize;
                a.iter().flat_map(|x| x.to_le_bytes()).collect()
            }
            NpyData::U8(a) => {
                let v: Vec<u8> = file.into_vec().unwrap();
                npyz_ok += (third_shape == shape && &v == a) as usize;
                a.clone()
            }
        };
        let digest: String = Sha256::digest(&raw).iter().map(|b| format!("{b:02x}")).collect();
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{} {} {}\n", path.display(), dims.join(","), digest));
    }
    let numpy = numpy_check(work, &manifest);
    outcome(
        exact == 50 && npyz_ok == 50 && numpy.as_ref().map_or(true, Result::is_ok),
        format!(
            "50 tensors: {exact}/50 bit-exact round trips; npyz reads {npyz_ok}/50 identically; numpy: {}",
            match &numpy {
                Some(Ok(())) => "50/50 identical".to_string(),
                Some(Err(e)) => format!("FAILED ({e})"),
                None => "not installed, skipped".to_string(),
            }
        ),
    )
}

/// Asks numpy to load every file and hash its raw bytes. `None` when python3
/// or numpy is not installed.
fn numpy_check(work: &Path, manifest: &str) -> Option<Result<(), String>> {
    let python = |args: &[&std::ffi::OsStr]| std::process::Command::new("python3").args(args).output();
    match python(&["-c".as_ref(), "import numpy".as_ref()]) {
        Ok(o) if o.status.success() => {}
        _ => return None,
    }
    let list = work.join("manifest.txt");
    fs::write(&list, manifest).unwrap();
    let script = r#"
import sys, hashlib, numpy as np
bad = []
for line in open(sys.argv[1]):
    path, dims, digest = line.split()
    a = np.load(path)
    shape = tuple(int(d) for d in dims.split(','))
    if not (a.shape == shape and a.dtype.str in ('<f8', '|u1')
            and hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest() == digest):
        bad.append(path)
print('ok' if not bad else 'mismatch: ' + ' '.join(bad))
"#;
    let out = python(&["-c".as_ref(), script.as_ref(), list.as_os_str()]).map_err(|e| e.to_string());
    Some(out.and_then(|o| {
        let stdout = String::from_utf8_lossy(&o.stdout).trim().to_string();
        match (o.status.success(), stdout.as_str()) {
            (true, "ok") => Ok(()),
            (true, _) => Err(stdout),
            (false, _) => Err(String::from_utf8_lossy(&o.stderr).lines().last().unwrap_or("").to_string()),
        }
    }))
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().unwrap();
    let dir = |name: &str| {
        let d = work.path().join(name);
        fs::create_dir_all(&d).unwrap();
        d
    };
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("01 gradient suite", Box::new(c1_gradient_suite)),
        ("02 dice gradient closed form vs composed", Box::new(c2_dice_paths)),
        ("03 guided filter oracle", Box::new(c3_guided_filter)),
        ("04 box sum vs naive window sum", Box::new(c4_box_sum)),
        ("05 conv arithmetic and adjointness", Box::new(c5_conv_arithmetic)),
        ("06 network shape contract", Box::new(c6_shape_contract)),
        ("07 metrics vs brute-force oracles", Box::new(c7_metrics_oracle)),
        ("08 region nesting", Box::new(c8_region_nesting)),
        ("09 end-to-end phantom run", Box::new({
            let d = dir("c9");
            move || c9_end_to_end(&d)
        })),
        ("10 reproducibility and resume", Box::new({
            let d = dir("c10");
            move || c10_reproducibility(&d)
        })),
        ("11 npy round trip and conformance", Box::new({
            let d = dir("c11");
            move || c11_npy(&d)
        })),
    ];
    // optional criterion numbers, e.g. `-- 09 11`; flags from cargo are ignored
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut ran, mut failed) = (0, 0);
    for (name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|n| name.starts_with(n.as_str())) {
            continue;
        }
        let o = run();
        ran += 1;
        failed += !o.passed as usize;
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    // report-only by default so the rest of the workspace suite still runs
    let strict = std::env::var_os("AGSE_ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
