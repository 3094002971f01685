//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jnd_core::attacks::{Method, StopRule};
use jnd_core::classifier::{load_checkpoint, save_checkpoint, Model, ModelSpec, TrainSchedule};
use jnd_core::data::Split;
use jnd_core::metrics::MetricConfig;
use jnd_core::stats::{compare_samples, Bandwidth, MethodSamples, StatsReport};
use jnd_core::sweep::{run_sweep, SweepSpec};
use jnd_core::{JndError, Result};
use serde_json::json;

use crate::args::{AttackArgs, CompareArgs, StopArg, SweepArgs, TrainArgs};
use crate::batch::{attack_candidates, select_correct, summarize, AttackPlan, AttackRecord, SUMMARY_COLUMNS};
use crate::output::{cell, ensure_dir, sha256_hex, write_json, write_ppm, CsvOut, RunManifest};
use crate::source::{DataSource, IMAGE_SIZE};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";

fn resolve_seed(args: &crate::args::SeedArgs) -> Result<u64> {
    args.resolve().map_err(JndError::Input)
}

fn load_model(path: &Path) -> Result<(Model<f64>, String)> {
    let bytes = fs::read(path).map_err(|e| JndError::Input(format!("--model: cannot read `{}`: {e}", path.display())))?;
    let model = load_checkpoint(path).map_err(|e| JndError::Input(format!("--model: {e}")))?;
    Ok((model, sha256_hex(&bytes)))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let start = Instant::now();
    let seed = resolve_seed(&a.seed)?;
    let source = DataSource::from_args(&a.data, seed)?;
    let train = source.load(Split::Train, None, a.train_count)?;
    let test = source.load(Split::Test, Some(a.test_per_class), a.test_count)?;
    let schedule = TrainSchedule { epochs: a.epochs, batch_size: a.batch_size, learning_rate: a.lr, seed };
    let mut model = Model::initialize(ModelSpec::desk(IMAGE_SIZE, train.data.num_classes()), seed)?;
    let log = model.train(&train.data, &schedule)?;
    let test_accuracy = model.accuracy(&test.data)?;

    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent, "--out")?;
    }
    save_checkpoint(&model, &a.out).map_err(|e| JndError::Input(format!("--out: {e}")))?;
    let model_sha256 = sha256_hex(&fs::read(&a.out)?);
    let config = json!({ "schedule": schedule, "train_images": train.data.len(), "test_images": test.data.len() });
    let dataset = format!("{} + {}", train.dataset_id, test.dataset_id);
    let manifest = RunManifest::new("train", config, Some(seed), Some(model_sha256.clone()), dataset, BTreeMap::new())?;
    let run_log = json!({
        "manifest": manifest,
        "train_log": log,
        "test_accuracy": test_accuracy,
    });
    write_json(&with_suffix(&a.out, ".log.json"), &run_log)?;
    let timing = json!({ "manifest_id": manifest.manifest_id, "wall_clock_seconds": start.elapsed().as_secs_f64() });
    write_json(&with_suffix(&a.out, ".timing.json"), &timing)?;

    for (i, (acc, loss)) in log.epoch_accuracy.iter().zip(&log.epoch_loss).enumerate() {
        println!("epoch {}: train accuracy {acc:.4}, loss {loss:.4}", i + 1);
    }
    println!("test accuracy {test_accuracy:.4} on {} images", test.data.len());
    println!("checkpoint {} sha256 {model_sha256}", a.out.display());
    Ok(())
}

/// Attack plan from the preset of `--method` and the override flags.
pub fn plan_from_args(a: &AttackArgs) -> Result<AttackPlan> {
    let mut plan = AttackPlan::preset(a.method);
    if let Some(t) = a.target {
        plan.target = t;
    }
    if let Some(l) = a.lambda {
        plan.config.lambdas = l;
    }
    if let Some(alpha) = a.alpha {
        plan.config.alpha = alpha;
    }
    if let Some(eps) = a.epsilon {
        plan.config.epsilon = eps;
    }
    plan.config.max_iterations = a.max_iters;
    match (a.stop, a.confidence) {
        (StopArg::FirstFlip, None) => {}
        (_, Some(c)) => plan.config = plan.config.with_confidence_stop(c),
        (StopArg::Confidence, None) => {
            return Err(JndError::Input("--stop confidence needs --confidence <THRESHOLD>".into()));
        }
    }
    Ok(plan)
}

pub fn attack(a: &AttackArgs) -> Result<()> {
    let start = Instant::now();
    let seed = resolve_seed(&a.seed)?;
    let source = DataSource::from_args(&a.data, seed)?;
    let (model, model_sha256) = load_model(&a.model)?;
    let plan = plan_from_args(a)?;
    if a.count == 0 {
        return Err(JndError::Input("--count must be positive".into()));
    }
    let split = source.load(Split::Test, None, a.test_count)?;
    let (candidates, skipped) = select_correct(&model, &split, a.count)?;
    if candidates.is_empty() {
        return Err(JndError::Input("no test image is classified correctly by --model".into()));
    }
    let metrics = MetricConfig::default();
    let outcomes = attack_candidates(&model, &candidates, &plan, &metrics, a.jobs)?;

    let config = json!({ "plan": plan, "count": a.count, "test_count": a.test_count, "trace": a.trace, "metrics": metrics });
    let counts = BTreeMap::from([
        ("requested".to_string(), a.count),
        ("attacked".to_string(), candidates.len()),
        ("skipped_misclassified".to_string(), skipped.len()),
    ]);
    let manifest = RunManifest::new("attack", config, Some(seed), Some(model_sha256), split.dataset_id.clone(), counts)?;
    let id = &manifest.manifest_id;

    ensure_dir(&a.out, "--out")?;
    ensure_dir(&a.out.join("images"), "--out")?;
    if a.trace {
        ensure_dir(&a.out.join("traces"), "--out")?;
    }
    let mut records = Vec::with_capacity(outcomes.len());
    let mut jsonl = std::io::BufWriter::new(fs::File::create(a.out.join(RECORDS_FILE))?);
    for mut o in outcomes {
        o.record.manifest_id = id.clone();
        serde_json::to_writer(&mut jsonl, &o.record)?;
        jsonl.write_all(b"\n")?;
        if let Some(img) = &o.adversarial {
            write_ppm(&a.out.join("images").join(format!("{}.ppm", o.record.image_id)), img, id)?;
        }
        if a.trace {
            let path = a.out.join("traces").join(format!("{}.csv", o.record.image_id));
            let mut csv = CsvOut::create(&path, id, &["iteration", "label", "confidence", "goal_confidence", "cost"])?;
            let r = &o.record;
            for i in 0..r.labels.len() {
                csv.row(&[
                    i.to_string(),
                    r.labels[i].to_string(),
                    r.confidences[i].to_string(),
                    r.goal_confidences[i].to_string(),
                    cell(o.cost_totals.get(i).copied()),
                ])?;
            }
            csv.finish()?;
        }
        records.push(o.record);
    }
    jsonl.flush()?;
    let refs: Vec<&AttackRecord> = records.iter().collect();
    let summary = summarize(plan.method, plan.target, &refs);
    let mut csv = CsvOut::create(&a.out.join(SUMMARY_FILE), id, &SUMMARY_COLUMNS)?;
    csv.row(&summary.cells())?;
    csv.finish()?;
    manifest.write(&a.out, start.elapsed().as_secs_f64())?;

    println!(
        "{}: {}/{} fooled ({} misclassified skipped), mean L2 {}, mean SSIM {}",
        plan.method,
        summary.successes,
        summary.attempted,
        skipped.len(),
        cell(summary.mean_l2),
        cell(summary.mean_ssim)
    );
    Ok(())
}

/// An `attack` output directory read back.
#[derive(Clone, Debug)]
pub struct LoadedRun {
    pub label: String,
    pub manifest: RunManifest,
    pub plan: AttackPlan,
    pub records: Vec<AttackRecord>,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    if !dir.is_dir() {
        return Err(JndError::Input(format!("`{}` is not a directory", dir.display())));
    }
    if !dir.join(crate::output::MANIFEST_FILE).is_file() {
        return Err(JndError::Input(format!("`{}` holds no attack run (manifest.json missing)", dir.display())));
    }
    let manifest = RunManifest::read(dir)?;
    if manifest.command != "attack" {
        return Err(JndError::Input(format!("`{}` holds a `{}` run, not an attack run", dir.display(), manifest.command)));
    }
    let plan: AttackPlan = serde_json::from_value(manifest.config["plan"].clone())
        .map_err(|e| JndError::Input(format!("`{}`: malformed attack plan: {e}", dir.display())))?;
    let path = dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| JndError::Input(format!("cannot read `{}`: {e}", path.display())))?;
    let records = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| JndError::Input(format!("`{}`: {e}", path.display()))))
        .collect::<Result<Vec<AttackRecord>>>()?;
    let label = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| plan.method.to_string());
    Ok(LoadedRun { label, manifest, plan, records })
}

/// Loads the runs, gives repeated labels a `#n` suffix and checks that every
/// run attacked the same image ids.
pub fn load_runs(dirs: &[PathBuf]) -> Result<Vec<LoadedRun>> {
    let mut runs = dirs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>>>()?;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for run in &mut runs {
        let n = seen.entry(run.label.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            run.label = format!("{}#{n}", run.label);
        }
    }
    let ids = |r: &LoadedRun| r.records.iter().map(|x| x.image_id.clone()).collect::<BTreeSet<String>>();
    let first = ids(&runs[0]);
    for run in &runs[1..] {
        let other = ids(run);
        if other != first {
            let list = |s: Vec<&String>| s.into_iter().take(10).cloned().collect::<Vec<_>>().join(", ");
            return Err(JndError::Input(format!(
                "image ids differ between `{}` and `{}`: only in the first [{}], only in the second [{}]",
                runs[0].label,
                run.label,
                list(first.difference(&other).collect()),
                list(other.difference(&first).collect()),
            )));
        }
    }
    Ok(runs)
}

/// Ids fooled by every run.
pub fn matched_ids(runs: &[LoadedRun]) -> BTreeSet<String> {
    let mut ids: BTreeSet<String> = runs[0].records.iter().map(|r| r.image_id.clone()).collect();
    for run in runs {
        for r in &run.records {
            if !r.success {
                ids.remove(&r.image_id);
            }
        }
    }
    ids
}

/// KL and L2 populations over `ids` with their KDEs.
pub fn run_stats(runs: &[LoadedRun], ids: &BTreeSet<String>, bandwidth: Bandwidth, points: usize) -> Result<StatsReport> {
    if ids.is_empty() {
        return Err(JndError::Input("no image was fooled by every run".into()));
    }
    let mut samples = BTreeMap::new();
    for run in runs {
        let mut s = MethodSamples::default();
        for r in run.records.iter().filter(|r| ids.contains(&r.image_id)) {
            let (Some(kl), Some(q)) = (r.kl_divergence, r.quality.as_ref()) else { continue };
            s.push(r.image_id.clone(), kl, q.l2);
        }
        samples.insert(run.label.clone(), s);
    }
    compare_samples(&samples, bandwidth, points)
}

fn write_stats(out: &Path, manifest_id: &str, report: &StatsReport) -> Result<()> {
    write_json(&out.join("stats.json"), &json!({ "manifest_id": manifest_id, "report": report }))?;
    let mut csv = CsvOut::create(&out.join("kde.csv"), manifest_id, &["run", "quantity", "x", "density"])?;
    for m in &report.methods {
        for (quantity, kde) in [("l2", &m.l2_kde), ("kl", &m.kl_kde)] {
            if let Some(k) = kde {
                for (x, d) in k.grid.iter().zip(&k.density) {
                    csv.row(&[m.method.clone(), quantity.into(), x.to_string(), d.to_string()])?;
                }
            }
        }
    }
    csv.finish()
}

fn compare_manifest(command: &str, a: &CompareArgs, runs: &[LoadedRun], bandwidth: Bandwidth) -> Result<RunManifest> {
    let config = json!({
        "runs": runs.iter().map(|r| json!({ "label": r.label, "manifest_id": r.manifest.manifest_id })).collect::<Vec<_>>(),
        "bandwidth": bandwidth,
        "kde_points": a.kde_points,
    });
    let datasets: BTreeSet<&str> = runs.iter().map(|r| r.manifest.dataset.as_str()).collect();
    let models: BTreeSet<Option<&String>> = runs.iter().map(|r| r.manifest.model_sha256.as_ref()).collect();
    let model = if models.len() == 1 { models.into_iter().next().flatten().cloned() } else { None };
    let dataset = datasets.into_iter().collect::<Vec<_>>().join(" + ");
    RunManifest::new(command, config, None, model, dataset, BTreeMap::from([("matched".to_string(), matched_ids(runs).len())]))
}

fn bandwidth_of(a: &CompareArgs) -> Result<Bandwidth> {
    match a.bandwidth {
        None => Ok(Bandwidth::Silverman),
        Some(h) if h.is_finite() && h > 0.0 => Ok(Bandwidth::Fixed(h)),
        Some(h) => Err(JndError::Input(format!("--bandwidth must be positive, got {h}"))),
    }
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let start = Instant::now();
    let bandwidth = bandwidth_of(a)?;
    let runs = load_runs(&a.runs)?;
    let matched = matched_ids(&runs);
    let manifest = compare_manifest("compare", a, &runs, bandwidth)?;
    let id = &manifest.manifest_id;
    ensure_dir(&a.out, "--out")?;

    let mut columns = vec!["run", "scope"];
    columns.extend_from_slice(&SUMMARY_COLUMNS);
    let mut csv = CsvOut::create(&a.out.join("comparison.csv"), id, &columns)?;
    for run in &runs {
        let all: Vec<&AttackRecord> = run.records.iter().collect();
        let both: Vec<&AttackRecord> = run.records.iter().filter(|r| matched.contains(&r.image_id)).collect();
        for (scope, recs) in [("all", all), ("matched", both)] {
            let mut row = vec![run.label.clone(), scope.to_string()];
            row.extend(summarize(run.plan.method, run.plan.target, &recs).cells());
            csv.row(&row)?;
        }
    }
    csv.finish()?;
    let report = run_stats(&runs, &matched, bandwidth, a.kde_points)?;
    write_stats(&a.out, id, &report)?;
    manifest.write(&a.out, start.elapsed().as_secs_f64())?;
    println!("compared {} runs on {} images fooled by all; closest: {}", runs.len(), matched.len(), report.closest_method);
    Ok(())
}

pub fn stats(a: &CompareArgs) -> Result<()> {
    let start = Instant::now();
    let bandwidth = bandwidth_of(a)?;
    let runs = load_runs(&a.runs)?;
    let matched = matched_ids(&runs);
    let manifest = compare_manifest("stats", a, &runs, bandwidth)?;
    ensure_dir(&a.out, "--out")?;
    let report = run_stats(&runs, &matched, bandwidth, a.kde_points)?;
    write_stats(&a.out, &manifest.manifest_id, &report)?;
    manifest.write(&a.out, start.elapsed().as_secs_f64())?;
    for m in &report.methods {
        println!("{}: mean L2 {} (sd {}), mean KL {} (sd {})", m.method, m.l2_mean, m.l2_std, m.kl_mean, m.kl_std);
    }
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<SweepSpec> {
    let text = fs::read_to_string(path).map_err(|e| JndError::Input(format!("--grid: cannot read `{}`: {e}", path.display())))?;
    let spec: SweepSpec = serde_json::from_str(&text).map_err(|e| JndError::Input(format!("--grid: {e}")))?;
    spec.validate().map_err(|e| JndError::Input(format!("--grid: {e}")))?;
    Ok(spec)
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let start = Instant::now();
    let seed = resolve_seed(&a.seed)?;
    let source = DataSource::from_args(&a.data, seed)?;
    let (model, model_sha256) = load_model(&a.model)?;
    let mut spec = read_grid(&a.grid)?;
    if let Some(n) = a.count {
        spec.validation_count = n;
    }
    spec.validate()?;
    let split = source.load(Split::Validation, None, usize::MAX)?;
    let (candidates, skipped) = select_correct(&model, &split, spec.validation_count)?;
    let validation: Vec<_> = candidates.iter().map(|c| (c.image.clone(), c.label)).collect();
    let metrics = MetricConfig::default();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| JndError::Config(format!("--jobs: {e}")))?;
    let result = pool.install(|| run_sweep(&model, &validation, &spec, &metrics))?;

    let counts = BTreeMap::from([
        ("validation_images".to_string(), validation.len()),
        ("skipped_misclassified".to_string(), skipped.len()),
    ]);
    let config = json!({ "spec": spec, "metrics": metrics });
    let manifest = RunManifest::new("sweep", config, Some(seed), Some(model_sha256), split.dataset_id.clone(), counts)?;
    let id = &manifest.manifest_id;
    ensure_dir(&a.out, "--out")?;
    let image_ids: Vec<&String> = candidates.iter().map(|c| &c.id).collect();
    write_json(&a.out.join("sweep.json"), &json!({ "manifest_id": id, "image_ids": image_ids, "result": result }))?;
    let columns = [
        "cell",
        "method",
        "lambda1",
        "lambda2",
        "lambda3",
        "lambda4",
        "alpha",
        "epsilon",
        "stop_rule",
        "confidence_threshold",
        "success_rate",
        "mean_psnr",
        "mean_ssim",
        "mean_iterations",
        "objective",
        "viable",
        "best",
    ];
    let mut csv = CsvOut::create(&a.out.join("sweep.csv"), id, &columns)?;
    for c in &result.cells {
        let [l1, l2, l3, l4] = c.config.lambdas;
        let stop = match c.config.stop_rule {
            StopRule::FirstLabelFlip => "first_label_flip",
            StopRule::ConfidenceReached => "confidence_reached",
        };
        csv.row(&[
            c.index.to_string(),
            spec.method.to_string(),
            l1.to_string(),
            l2.to_string(),
            l3.to_string(),
            l4.to_string(),
            c.config.alpha.to_string(),
            c.config.epsilon.to_string(),
            stop.to_string(),
            cell(c.config.confidence_threshold),
            c.success_rate.to_string(),
            cell(c.mean_psnr),
            cell(c.mean_ssim),
            cell(c.mean_iterations),
            cell(c.objective),
            c.viable.to_string(),
            (c.index == result.best).to_string(),
        ])?;
    }
    csv.finish()?;
    manifest.write(&a.out, start.elapsed().as_secs_f64())?;
    let best = result.best_cell();
    let shown = match spec.method {
        Method::Jnd => format!("lambda {:?}, alpha {}", best.config.lambdas, best.config.alpha),
        Method::Fgsm | Method::Fgv => format!("epsilon {}", best.config.epsilon),
        Method::DeepFool => "preset".to_string(),
    };
    println!(
        "best cell {} of {}: {shown}, success {}, objective {}",
        best.index,
        result.grid_size,
        best.success_rate,
        cell(best.objective)
    );
    Ok(())
}
