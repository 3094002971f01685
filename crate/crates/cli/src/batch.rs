//! Attacks over a set of images, per-image records and their aggregates.

use jnd_core::attacks::{run_attack, AttackConfig, AttackMode, CostBreakdown, Method, TargetPolicy};
use jnd_core::classifier::Model;
use jnd_core::metrics::{MetricConfig, QualityReport};
use jnd_core::stats::pair_samples;
use jnd_core::tensor::Tensor;
use jnd_core::{JndError, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::output::cell;
use crate::source::LoadedSplit;

/// A correctly classified image selected for attack.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub id: String,
    pub index: usize,
    pub image: Tensor<f64>,
    pub label: usize,
}

/// The first `count` images the model classifies correctly, and the ids of
/// the misclassified ones passed over on the way.
pub fn select_correct(model: &Model<f64>, split: &LoadedSplit, count: usize) -> Result<(Vec<Candidate>, Vec<String>)> {
    let mut chosen = Vec::with_capacity(count);
    let mut skipped = Vec::new();
    for (index, (image, &label)) in split.data.images.iter().zip(&split.data.labels).enumerate() {
        if chosen.len() == count {
            break;
        }
        if model.predict(image)?.label == label {
            chosen.push(Candidate { id: split.ids[index].clone(), index, image: image.clone(), label });
        } else {
            skipped.push(split.ids[index].clone());
        }
    }
    Ok((chosen, skipped))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackPlan {
    pub method: Method,
    pub target: TargetPolicy,
    /// Base configuration; the mode is resolved per image from `target`.
    pub config: AttackConfig,
}

impl AttackPlan {
    pub fn preset(method: Method) -> Self {
        Self { method, target: TargetPolicy::default_for(method), config: AttackConfig::preset(method) }
    }
}

/// One attacked image, as written to `records.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub manifest_id: String,
    pub image_id: String,
    pub dataset_index: usize,
    pub method: Method,
    pub true_label: usize,
    pub mode: AttackMode,
    pub success: bool,
    /// First iteration whose image meets the stop rule.
    pub k: Option<usize>,
    pub iterations: usize,
    /// Label and its confidence of the reported image.
    pub final_label: Option<usize>,
    pub final_confidence: Option<f64>,
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
    pub goal_confidences: Vec<f64>,
    /// Distances and quality of the reported image against the original.
    pub quality: Option<QualityReport>,
    pub kl_divergence: Option<f64>,
    pub cost_at_stop: Option<CostBreakdown<f64>>,
    /// Set when the attack aborted with a numerical error.
    pub error: Option<String>,
}

/// A record with the adversarial image and the per-iteration cost.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub record: AttackRecord,
    pub adversarial: Option<Tensor<f64>>,
    pub cost_totals: Vec<f64>,
}

fn attack_one(model: &Model<f64>, c: &Candidate, plan: &AttackPlan, metrics: &MetricConfig) -> Result<Outcome> {
    let clean = model.predict(&c.image)?;
    let mode = plan.target.resolve(&clean);
    let config = AttackConfig { mode, ..plan.config.clone() };
    let mut record = AttackRecord {
        manifest_id: String::new(),
        image_id: c.id.clone(),
        dataset_index: c.index,
        method: plan.method,
        true_label: c.label,
        mode,
        success: false,
        k: None,
        iterations: 0,
        final_label: None,
        final_confidence: None,
        labels: Vec::new(),
        confidences: Vec::new(),
        goal_confidences: Vec::new(),
        quality: None,
        kl_divergence: None,
        cost_at_stop: None,
        error: None,
    };
    let r = match run_attack(plan.method, model, &c.image, c.label, &config) {
        Ok(r) => r,
        Err(JndError::Numerical(msg)) => {
            record.error = Some(msg);
            return Ok(Outcome { record, adversarial: None, cost_totals: Vec::new() });
        }
        Err(e) => return Err(JndError::Input(format!("image {}: {e}", c.id))),
    };
    let at = r.first_fool_iteration.unwrap_or(r.label_trajectory.len() - 1);
    let (kl, _) = pair_samples(&c.image, &r.adversarial_image)?;
    record.success = r.success;
    record.k = r.first_fool_iteration;
    record.iterations = r.iterations;
    record.final_label = Some(r.label_trajectory[at]);
    record.final_confidence = Some(r.confidence_trajectory[at]);
    record.quality = Some(QualityReport::compute(&c.image, &r.adversarial_image, metrics)?);
    record.kl_divergence = Some(kl);
    record.cost_at_stop = Some(*r.cost_at_stop());
    record.labels = r.label_trajectory;
    record.confidences = r.confidence_trajectory;
    record.goal_confidences = r.goal_confidence_trajectory;
    let cost_totals = r.cost_trajectory.iter().map(|c| c.total).collect();
    Ok(Outcome { record, adversarial: Some(r.adversarial_image), cost_totals })
}

/// Attacks every candidate on `jobs` worker threads (0 for all cores).
/// Results come back in candidate order whatever the thread count.
pub fn attack_candidates(
    model: &Model<f64>,
    candidates: &[Candidate],
    plan: &AttackPlan,
    metrics: &MetricConfig,
    jobs: usize,
) -> Result<Vec<Outcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| JndError::Config(format!("--jobs: {e}")))?;
    pool.install(|| candidates.par_iter().map(|c| attack_one(model, c, plan, metrics)).collect())
}

/// Column means over the successful records of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub target: String,
    pub attempted: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_k: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_l1: Option<f64>,
    pub mean_l2: Option<f64>,
    pub mean_linf: Option<f64>,
    pub mean_l1_per_pixel: Option<f64>,
    pub mean_l2_per_pixel: Option<f64>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_uqi: Option<f64>,
    pub mean_scc: Option<f64>,
    pub mean_vifp: Option<f64>,
    pub mean_kl: Option<f64>,
    pub mean_cost: Option<f64>,
    pub mean_final_confidence: Option<f64>,
}

pub const SUMMARY_COLUMNS: [&str; 20] = [
    "method",
    "target",
    "attempted",
    "successes",
    "success_rate",
    "mean_k",
    "mean_iterations",
    "mean_l1",
    "mean_l2",
    "mean_linf",
    "mean_l1_per_pixel",
    "mean_l2_per_pixel",
    "mean_psnr",
    "mean_ssim",
    "mean_uqi",
    "mean_scc",
    "mean_vifp",
    "mean_kl",
    "mean_cost",
    "mean_final_confidence",
];

fn mean_of<'a>(records: &[&'a AttackRecord], f: impl Fn(&'a AttackRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = records.iter().filter_map(|r| f(r)).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Success rate over all records; every mean is over the successful ones.
/// `mean_iterations` counts the steps executed, `mean_k` the first-fool iteration.
pub fn summarize(method: Method, target: TargetPolicy, records: &[&AttackRecord]) -> Summary {
    let ok: Vec<&AttackRecord> = records.iter().copied().filter(|r| r.success).collect();
    let q = |g: fn(&QualityReport) -> f64| move |r: &AttackRecord| r.quality.as_ref().map(g);
    Summary {
        method,
        target: target.to_string(),
        attempted: records.len(),
        successes: ok.len(),
        success_rate: if records.is_empty() { 0.0 } else { ok.len() as f64 / records.len() as f64 },
        mean_k: mean_of(&ok, |r| r.k.map(|k| k as f64)),
        mean_iterations: mean_of(&ok, |r| Some(r.iterations as f64)),
        mean_l1: mean_of(&ok, q(|q| q.l1)),
        mean_l2: mean_of(&ok, q(|q| q.l2)),
        mean_linf: mean_of(&ok, q(|q| q.linf)),
        mean_l1_per_pixel: mean_of(&ok, q(|q| q.l1_per_pixel)),
        mean_l2_per_pixel: mean_of(&ok, q(|q| q.l2_per_pixel)),
        mean_psnr: mean_of(&ok, q(|q| q.psnr)),
        mean_ssim: mean_of(&ok, q(|q| q.ssim)),
        mean_uqi: mean_of(&ok, q(|q| q.uqi)),
        mean_scc: mean_of(&ok, q(|q| q.scc)),
        mean_vifp: mean_of(&ok, q(|q| q.vifp)),
        mean_kl: mean_of(&ok, |r| r.kl_divergence),
        mean_cost: mean_of(&ok, |r| r.cost_at_stop.map(|c| c.total)),
        mean_final_confidence: mean_of(&ok, |r| r.final_confidence),
    }
}

impl Summary {
    /// Cells in [`SUMMARY_COLUMNS`] order.
    pub fn cells(&self) -> Vec<String> {
        let mut out = vec![
            self.method.to_string(),
            self.target.clone(),
            self.attempted.to_string(),
            self.successes.to_string(),
            self.success_rate.to_string(),
        ];
        out.extend(
            [
                self.mean_k,
                self.mean_iterations,
                self.mean_l1,
                self.mean_l2,
                self.mean_linf,
                self.mean_l1_per_pixel,
                self.mean_l2_per_pixel,
                self.mean_psnr,
                self.mean_ssim,
                self.mean_uqi,
                self.mean_scc,
                self.mean_vifp,
                self.mean_kl,
                self.mean_cost,
                self.mean_final_confidence,
            ]
            .map(cell),
        );
        out
    }
}
