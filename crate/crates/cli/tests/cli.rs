use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn agse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agse")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = agse(args);
    assert_eq!(code(&o), 0, "{args:?}\n{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Every file under `root` with its bytes, in path order.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn phantoms(dir: &Path, n: usize, shape: &str, seed: u64) {
    ok(&["phantom-gen", "--n", &n.to_string(), "--shape", shape, "--difficulty", "0.3", "--seed", &seed.to_string(), "--out", p(dir)]);
}

const TINY: &str = "base_width = 2\npatch = 16,16,16\nse_reduction = 2\nmax_steps = 50\ndecay_step = 30\ncheckpoint_interval = 10\nlr = 1e-3\nlr_decayed = 3e-4\n";

#[test]
fn phantom_gen_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    phantoms(&t.path().join("a"), 2, "16,16,16", 7);
    phantoms(&t.path().join("b"), 2, "16,16,16", 7);
    let a = tree(&t.path().join("a"));
    assert_eq!(a.len(), 10);
    assert_eq!(a, tree(&t.path().join("b")));
    phantoms(&t.path().join("c"), 2, "16,16,16", 8);
    assert_ne!(a, tree(&t.path().join("c")));
}

#[test]
fn validation_failures_exit_with_1() {
    let t = tempfile::tempdir().unwrap();
    let out = p(t.path());
    assert_eq!(code(&agse(&["phantom-gen", "--n", "0", "--out", out])), 1);
    assert_eq!(code(&agse(&["phantom-gen", "--shape", "8,8,8", "--out", out])), 1);
    assert_eq!(code(&agse(&["phantom-gen", "--bogus"])), 1);
    assert_eq!(code(&agse(&["gradcheck", "--scope", "nope"])), 1);
    assert_eq!(code(&agse(&["train", "--data", out, "--out", out])), 1);
    let cfg = t.path().join("bad.txt");
    fs::write(&cfg, "lr = -1\n").unwrap();
    assert_eq!(code(&agse(&["train", "--config", p(&cfg), "--data", out, "--out", out])), 1);
    assert_eq!(code(&agse(&["--help"])), 0);
}

#[test]
fn unreadable_data_is_a_runtime_failure() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("cfg.txt");
    fs::write(&cfg, TINY).unwrap();
    let missing = t.path().join("missing");
    let o = agse(&["train", "--config", p(&cfg), "--data", p(&missing), "--out", p(t.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_loss_scope_passes() {
    let out = ok(&["gradcheck", "--scope", "loss", "--seed", "3"]);
    assert!(out.contains("PASS dice_loss.grad_logits"), "{out}");
    assert!(out.contains("PASS dice_loss.closed_vs_composed"), "{out}");
    assert!(out.contains("0 failed"));
}

#[test]
fn evaluate_identity_and_missing_counterpart() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    phantoms(&data, 3, "16,16,16", 1);
    // predictions identical to the truth
    let pred = t.path().join("pred");
    for i in 0..3 {
        let id = format!("phantom_{i:03}");
        fs::create_dir_all(pred.join(&id)).unwrap();
        fs::copy(data.join(&id).join("seg.npy"), pred.join(&id).join("seg.npy")).unwrap();
    }
    let report = ok(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--out", p(&t.path().join("ev1"))]);
    let (rows, summary) = report.split_once("\n\n").unwrap();
    for row in rows.lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!((f[2], f[5]), ("1", "0"), "{row}");
    }
    assert_eq!(rows.lines().count(), 1 + 9);
    assert!(summary.lines().any(|l| l == "mean,WT,1,1,1,0"), "{summary}");
    let again = ok(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--out", p(&t.path().join("ev2"))]);
    assert_eq!(report, again);
    assert_eq!(
        fs::read(t.path().join("ev1/evaluation.csv")).unwrap(),
        fs::read(t.path().join("ev2/evaluation.csv")).unwrap()
    );

    fs::remove_dir_all(pred.join("phantom_001")).unwrap();
    let o = agse(&["evaluate", "--pred", p(&pred), "--data", p(&data), "--out", p(t.path())]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("phantom_001"));
}

fn loss_series(report: &str) -> Vec<(usize, f64, f64)> {
    let section = report.split("step,lr,loss\n").nth(1).unwrap();
    section
        .lines()
        .take_while(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn train_predict_resume_round_trip() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    phantoms(&data, 1, "16,16,16", 5);
    let cfg = t.path().join("cfg.txt");
    fs::write(&cfg, TINY).unwrap();
    let (run_a, run_b, run_c) = (t.path().join("a"), t.path().join("b"), t.path().join("c"));
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run_a)]);

    // learning happens and the schedule is logged
    let report = fs::read_to_string(run_a.join("report.txt")).unwrap();
    let series = loss_series(&report);
    assert_eq!(series.len(), 50);
    assert!(series[49].2 < series[0].2, "loss did not drop: {} -> {}", series[0].2, series[49].2);
    assert!(series.iter().all(|&(s, lr, _)| lr == if s < 30 { 1e-3 } else { 3e-4 }));
    assert!(run_a.join("wall_clock.txt").is_file());
    assert!(!report.contains("seconds"));

    // identical reruns
    ok(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run_b)]);
    let tb = tree(&run_b);
    let ta: Vec<_> = tree(&run_a).into_iter().filter(|(f, _)| f != Path::new("wall_clock.txt")).collect();
    assert_eq!(ta, tb.into_iter().filter(|(f, _)| f != Path::new("wall_clock.txt")).collect::<Vec<_>>());

    // resume from step 20 in a fresh directory
    let ck = run_a.join("checkpoints/step_000020");
    ok(&["train", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&run_c)]);
    let resumed = fs::read_to_string(run_c.join("report.txt")).unwrap();
    assert_eq!(resumed, report);
    assert_eq!(loss_series(&resumed)[30], series[30]);
    assert_eq!(tree(&run_a.join("checkpoints/step_000050")), tree(&run_c.join("checkpoints/step_000050")));

    // a different seed is rejected when resuming
    let o = agse(&["train", "--checkpoint", p(&ck), "--seed", "99", "--data", p(&data), "--out", p(&run_c)]);
    assert_eq!(code(&o), 1);

    // inference: deterministic, label alphabet, run-directory checkpoint lookup
    let (pa, pb) = (t.path().join("pa"), t.path().join("pb"));
    ok(&["predict", "--checkpoint", p(&run_a), "--data", p(&data), "--out", p(&pa)]);
    ok(&["predict", "--checkpoint", p(&run_a.join("checkpoints/step_000050")), "--data", p(&data), "--out", p(&pb)]);
    assert_eq!(tree(&pa), tree(&pb));
    let seg = agse_core::npy::load(&pa.join("phantom_000/seg.npy")).unwrap();
    assert_eq!(seg.shape, vec![16, 16, 16]);
    assert!(seg.to_u8().unwrap().iter().all(|v| [0, 1, 2, 4].contains(v)));
    ok(&["evaluate", "--pred", p(&pa), "--data", p(&data), "--out", p(&t.path().join("ev"))]);
}

#[test]
fn preprocess_writes_patch_pairs() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    phantoms(&data, 2, "16,16,32", 2);
    let cfg = t.path().join("cfg.txt");
    fs::write(&cfg, "patch = 16,16,16\nstride = 16,16,8\n").unwrap();
    let out = t.path().join("pre");
    ok(&["preprocess", "--config", p(&cfg), "--data", p(&data), "--out", p(&out)]);
    let manifest = fs::read_to_string(out.join("patches/manifest.txt")).unwrap();
    // 1 * 1 * 3 patches per case
    assert_eq!(manifest.lines().count(), 6);
    for i in 0..6 {
        assert!(out.join(format!("patches/img_{i:04}.npy")).is_file());
        assert!(out.join(format!("patches/lbl_{i:04}.npy")).is_file());
    }
    assert!(out.join("cases/phantom_001/flair.npy").is_file());
}

#[test]
fn non_finite_input_aborts_with_a_dump() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    phantoms(&data, 1, "16,16,16", 3);
    let t1 = data.join("phantom_000/t1.npy");
    let mut a = agse_core::npy::load(&t1).unwrap();
    let mut v = a.to_f64();
    v[100] = f64::NAN;
    a = agse_core::npy::NpyArray::f64(a.shape.clone(), v);
    agse_core::npy::save(&t1, &a).unwrap();
    let cfg = t.path().join("cfg.txt");
    fs::write(&cfg, TINY).unwrap();
    let run = t.path().join("run");
    let o = agse(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite loss at step 0"));
    assert!(run.join("nonfinite_step_000000/image.npy").is_file());
    assert!(!run.join("checkpoints").exists());
}
