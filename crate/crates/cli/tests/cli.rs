use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use jnd_cli::batch::AttackRecord;
use jnd_core::sweep::{cell_summary, SweepResult};

const BIN: &str = env!("CARGO_BIN_EXE_jnd");
const DATA: &str = "4x200";
const SEED: &str = "3";

fn jnd(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("JND_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = jnd(args);
    assert!(
        out.status.success(),
        "jnd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    model: PathBuf,
}

/// One trained model shared by every test in this file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let model = root.join("m.jndm");
        ok(&["train", "--synthetic", DATA, "--seed", SEED, "--out", model.to_str().unwrap()]);
        Fixture { _dir: dir, root, model }
    })
}

fn attack(out: &Path, extra: &[&str]) -> Output {
    let f = fixture();
    let mut args =
        vec!["attack", "--synthetic", "4x20", "--seed", SEED, "--model", f.model.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    jnd(&args)
}

fn records(dir: &Path) -> Vec<AttackRecord> {
    fs::read_to_string(dir.join("records.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn train_logs_accuracy_and_is_reproducible() {
    let f = fixture();
    let again = f.root.join("again.jndm");
    let out = ok(&["train", "--synthetic", DATA, "--seed", SEED, "--out", again.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&out.stdout);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("test accuracy "))
        .and_then(|l| l.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(acc >= 0.95, "test accuracy {acc}");
    assert_eq!(fs::read(&f.model).unwrap(), fs::read(&again).unwrap());
    let log: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.root.join("again.jndm.log.json")).unwrap()).unwrap();
    assert_eq!(log["manifest"]["command"], "train");
}

#[test]
fn seed_falls_back_to_environment() {
    let f = fixture();
    let path = f.root.join("env.jndm");
    let out = Command::new(BIN)
        .args(["train", "--synthetic", DATA, "--out", path.to_str().unwrap()])
        .env("JND_SEED", SEED)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&f.model).unwrap(), fs::read(&path).unwrap());
}

#[test]
fn missing_dataset_flag_exits_2_and_names_it() {
    let out = jnd(&["train", "--out", "never.jndm"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--synthetic"));
    let out = jnd(&["train", "--cifar", "/definitely/not/here", "--out", "never.jndm"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--cifar"));
}

#[test]
fn zero_epsilon_never_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fgsm0");
    let o = attack(&out, &["--method", "fgsm", "--epsilon", "0", "--max-iters", "15", "--count", "6"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().all(|r| !r.success && r.iterations == 15));
    let (header, rows) = csv_rows(&out.join("summary.csv"));
    let rate = header.iter().position(|h| h == "success_rate").unwrap();
    assert_eq!(rows[0][rate], "0");
}

#[test]
fn target_equal_to_true_label_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = attack(&dir.path().join("t"), &["--method", "jnd", "--target", "0", "--count", "8"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("true label"));
}

#[test]
fn summary_means_match_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("jnd");
    let o = attack(&out, &["--method", "jnd", "--count", "12", "--trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let id = manifest["manifest_id"].as_str().unwrap();
    assert!(recs.iter().all(|r| r.manifest_id == id));

    let ok: Vec<&AttackRecord> = recs.iter().filter(|r| r.success).collect();
    assert!(!ok.is_empty());
    let mean = |f: &dyn Fn(&AttackRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64;
    let (header, rows) = csv_rows(&out.join("summary.csv"));
    assert_eq!(header[0], "schema=1");
    assert_eq!(rows[0][1], id);
    let col = |name: &str| rows[0][header.iter().position(|h| h == name).unwrap()].parse::<f64>().unwrap();
    let q = |r: &AttackRecord| r.quality.unwrap();
    let checks: [(&str, f64); 8] = [
        ("mean_l2", mean(&|r| q(r).l2)),
        ("mean_linf", mean(&|r| q(r).linf)),
        ("mean_l1", mean(&|r| q(r).l1)),
        ("mean_psnr", mean(&|r| q(r).psnr)),
        ("mean_ssim", mean(&|r| q(r).ssim)),
        ("mean_uqi", mean(&|r| q(r).uqi)),
        ("mean_k", mean(&|r| r.k.unwrap() as f64)),
        ("mean_kl", mean(&|r| r.kl_divergence.unwrap())),
    ];
    for (name, want) in checks {
        assert!((col(name) - want).abs() <= 1e-9 * want.abs().max(1.0), "{name}: {} vs {want}", col(name));
    }
    assert!((col("success_rate") - ok.len() as f64 / recs.len() as f64).abs() < 1e-12);

    // one trace per image, one row per recorded iterate
    let r = &recs[0];
    let (theader, trows) = csv_rows(&out.join("traces").join(format!("{}.csv", r.image_id)));
    assert_eq!(theader[2], "iteration");
    assert_eq!(trows.len(), r.confidences.len());
    assert!(out.join("images").join(format!("{}.ppm", r.image_id)).is_file());
}

#[test]
fn worker_count_does_not_change_records() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(attack(&a, &["--method", "fgv", "--count", "8", "--jobs", "1"]).status.success());
    assert!(attack(&b, &["--method", "fgv", "--count", "8", "--jobs", "4"]).status.success());
    for f in ["records.jsonl", "summary.csv", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn compare_with_itself_gives_identical_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("fgsm");
    assert!(attack(&run, &["--method", "fgsm", "--count", "10"]).status.success());
    let out = dir.path().join("cmp");
    let r = run.to_str().unwrap();
    ok(&["compare", r, r, "--out", out.to_str().unwrap()]);
    let (header, rows) = csv_rows(&out.join("comparison.csv"));
    let run_col = header.iter().position(|h| h == "run").unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][run_col], "fgsm");
    assert_eq!(rows[2][run_col], "fgsm#2");
    let strip = |row: &Vec<String>| row.iter().enumerate().filter(|(i, _)| *i != run_col).map(|(_, c)| c.clone()).collect::<Vec<_>>();
    assert_eq!(strip(&rows[0]), strip(&rows[2]));
    assert_eq!(strip(&rows[1]), strip(&rows[3]));
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    let methods = stats["report"]["methods"].as_array().unwrap();
    assert_eq!(methods[0]["l2_samples"], methods[1]["l2_samples"]);
    assert!(out.join("kde.csv").is_file());
}

#[test]
fn compare_rejects_empty_and_mismatched_runs() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = dir.path().join("cmp");
    let o = jnd(&["compare", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("manifest.json"));

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(attack(&a, &["--method", "fgsm", "--count", "4"]).status.success());
    assert!(attack(&b, &["--method", "fgsm", "--count", "6"]).status.success());
    let o = jnd(&["compare", a.to_str().unwrap(), b.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("only in the second") && msg.contains("test-0000"), "{msg}");
}

fn sweep(dir: &Path, grid: &str, count: &str) -> (Output, PathBuf) {
    let f = fixture();
    let grid_path = dir.join("grid.json");
    fs::write(&grid_path, grid).unwrap();
    let out = dir.join("sweep");
    let o = jnd(&[
        "sweep",
        "--synthetic",
        "4x10",
        "--seed",
        SEED,
        "--model",
        f.model.to_str().unwrap(),
        "--grid",
        grid_path.to_str().unwrap(),
        "--count",
        count,
        "--out",
        out.to_str().unwrap(),
    ]);
    (o, out)
}

fn sweep_result(out: &Path) -> SweepResult {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    serde_json::from_value(v["result"].clone()).unwrap()
}

#[test]
fn one_cell_sweep_picks_that_cell() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = sweep(dir.path(), r#"{"method": "fgsm", "epsilon": [0.5], "success_floor": 0.5}"#, "8");
    assert!(o.status.success(), "{}", stderr(&o));
    let r = sweep_result(&out);
    assert_eq!((r.grid_size, r.best), (1, 0));
    let (header, rows) = csv_rows(&out.join("sweep.csv"));
    assert_eq!(header[0], "schema=1");
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][header.iter().position(|h| h == "best").unwrap()], "true");
}

#[test]
fn sweep_prefers_dominant_cell_and_objective_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let grid = r#"{"method": "jnd", "lambda1": [10], "lambda2": [1], "lambda3": [1], "lambda4": [10],
                   "alpha": [0.0, 0.05], "max_iterations": 40, "success_floor": 0.5}"#;
    let (o, out) = sweep(dir.path(), grid, "8");
    assert!(o.status.success(), "{}", stderr(&o));
    let r = sweep_result(&out);
    assert_eq!(r.best, 1, "a zero step size never moves");
    for c in &r.cells {
        let s = cell_summary(&c.records);
        match (s.objective, c.objective) {
            (Some(a), Some(b)) => assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0)),
            (a, b) => assert_eq!(a, b),
        }
    }
}

#[test]
fn unreadable_grid_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = sweep(dir.path(), r#"{"method": "jnd", "bogus": 1}"#, "4");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--grid"));
}
