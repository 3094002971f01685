//! Grid search over attack hyperparameters, scored by
//! `mean(PSNR) · mean(SSIM) / mean(iterations)` over successful attacks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{run_attack, AttackConfig, Method, StopRule, TargetPolicy};
use crate::error::{JndError, Result};
use crate::metrics::{psnr_with, ssim_with, MetricConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_SUCCESS_FLOOR: f64 = 0.9;
pub const DEFAULT_VALIDATION_COUNT: usize = 100;

/// Candidate values per hyperparameter. Only the lists the method uses are
/// expanded: λ₁..λ₄ and α for JND, ε for FGSM/FGV; DeepFool has one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub method: Method,
    #[serde(default = "one_ten")]
    pub lambda1: Vec<f64>,
    #[serde(default = "one")]
    pub lambda2: Vec<f64>,
    #[serde(default = "one")]
    pub lambda3: Vec<f64>,
    #[serde(default = "one_ten")]
    pub lambda4: Vec<f64>,
    #[serde(default = "alpha")]
    pub alpha: Vec<f64>,
    #[serde(default = "epsilon")]
    pub epsilon: Vec<f64>,
    #[serde(default = "validation_count")]
    pub validation_count: usize,
    #[serde(default = "first_flip")]
    pub stop_rule: StopRule,
    #[serde(default)]
    pub confidence_threshold: Option<f64>,
    #[serde(default = "max_iterations")]
    pub max_iterations: usize,
    /// `None` uses [`TargetPolicy::default_for`] the method.
    #[serde(default)]
    pub target: Option<TargetPolicy>,
    #[serde(default = "floor")]
    pub success_floor: f64,
}

fn one_ten() -> Vec<f64> {
    vec![1.0, 10.0]
}
fn one() -> Vec<f64> {
    vec![1.0]
}
fn alpha() -> Vec<f64> {
    vec![0.05]
}
fn epsilon() -> Vec<f64> {
    vec![0.5]
}
fn validation_count() -> usize {
    DEFAULT_VALIDATION_COUNT
}
fn first_flip() -> StopRule {
    StopRule::FirstLabelFlip
}
fn max_iterations() -> usize {
    1000
}
fn floor() -> f64 {
    DEFAULT_SUCCESS_FLOOR
}

impl SweepSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            lambda1: one_ten(),
            lambda2: one(),
            lambda3: one(),
            lambda4: one_ten(),
            alpha: alpha(),
            epsilon: epsilon(),
            validation_count: DEFAULT_VALIDATION_COUNT,
            stop_rule: StopRule::FirstLabelFlip,
            confidence_threshold: None,
            max_iterations: 1000,
            target: None,
            success_floor: DEFAULT_SUCCESS_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lists: Vec<(&str, &Vec<f64>)> = match self.method {
            Method::Jnd => vec![
                ("lambda1", &self.lambda1),
                ("lambda2", &self.lambda2),
                ("lambda3", &self.lambda3),
                ("lambda4", &self.lambda4),
                ("alpha", &self.alpha),
            ],
            Method::Fgsm | Method::Fgv => vec![("epsilon", &self.epsilon)],
            Method::DeepFool => vec![],
        };
        for (name, list) in lists {
            if list.is_empty() {
                return Err(JndError::Config(format!("sweep list `{name}` is empty")));
            }
            if let Some(v) = list.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(JndError::Config(format!("sweep list `{name}` has invalid value {v}")));
            }
        }
        if self.validation_count == 0 {
            return Err(JndError::Config("validation count must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.success_floor) {
            return Err(JndError::Config(format!("success floor must lie in [0, 1], got {}", self.success_floor)));
        }
        Ok(())
    }

    /// Every cell's configuration, in row-major order of the candidate lists.
    pub fn cells(&self) -> Vec<AttackConfig> {
        let base = AttackConfig {
            max_iterations: self.max_iterations,
            stop_rule: self.stop_rule,
            confidence_threshold: self.confidence_threshold,
            ..AttackConfig::preset(self.method)
        };
        match self.method {
            Method::Jnd => {
                let mut out = Vec::new();
                for &l1 in &self.lambda1 {
                    for &l2 in &self.lambda2 {
                        for &l3 in &self.lambda3 {
                            for &l4 in &self.lambda4 {
                                for &alpha in &self.alpha {
                                    out.push(AttackConfig { lambdas: [l1, l2, l3, l4], alpha, ..base.clone() });
                                }
                            }
                        }
                    }
                }
                out
            }
            Method::Fgsm | Method::Fgv => {
                self.epsilon.iter().map(|&epsilon| AttackConfig { epsilon, ..base.clone() }).collect()
            }
            Method::DeepFool => vec![base],
        }
    }

    pub fn grid_size(&self) -> usize {
        match self.method {
            Method::Jnd => [&self.lambda1, &self.lambda2, &self.lambda3, &self.lambda4, &self.alpha]
                .iter()
                .map(|l| l.len())
                .product(),
            Method::Fgsm | Method::Fgv => self.epsilon.len(),
            Method::DeepFool => 1,
        }
    }
}

/// Outcome of one attack inside a sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_index: usize,
    pub success: bool,
    /// First-fool iteration on success, iterations executed otherwise.
    pub iterations: usize,
    /// Quality of the adversarial image; only measured on success.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Set when the attack aborted with a numerical error.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub config: AttackConfig,
    pub success_rate: f64,
    /// Means over successful attacks; None when there were none.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub objective: Option<f64>,
    pub viable: bool,
    pub records: Vec<ImageRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub grid_size: usize,
    pub cells: Vec<CellResult>,
    pub best: usize,
}

impl SweepResult {
    pub fn best_cell(&self) -> &CellResult {
        &self.cells[self.best]
    }
}

/// Per-cell aggregate of [`ImageRecord`]s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellSummary {
    pub success_rate: f64,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub objective: Option<f64>,
}

/// Success rate, means over the successful records and the resulting objective.
pub fn cell_summary(records: &[ImageRecord]) -> CellSummary {
    let ok: Vec<&ImageRecord> = records.iter().filter(|r| r.success).collect();
    let success_rate = if records.is_empty() { 0.0 } else { ok.len() as f64 / records.len() as f64 };
    if ok.is_empty() {
        return CellSummary { success_rate, mean_psnr: None, mean_ssim: None, mean_iterations: None, objective: None };
    }
    let n = ok.len() as f64;
    let psnr = ok.iter().map(|r| r.psnr.unwrap_or(f64::NAN)).sum::<f64>() / n;
    let ssim = ok.iter().map(|r| r.ssim.unwrap_or(f64::NAN)).sum::<f64>() / n;
    let iters = ok.iter().map(|r| r.iterations as f64).sum::<f64>() / n;
    CellSummary {
        success_rate,
        mean_psnr: Some(psnr),
        mean_ssim: Some(ssim),
        mean_iterations: Some(iters),
        objective: Some(psnr * ssim / iters.max(1.0)),
    }
}

/// Runs every cell on `validation` (images the model classifies correctly).
/// Cells and images run in parallel; results are ordered by cell and image index.
pub fn run_sweep<T: Scalar>(
    model: &crate::classifier::Model<T>,
    validation: &[(Tensor<T>, usize)],
    spec: &SweepSpec,
    metrics: &MetricConfig,
) -> Result<SweepResult> {
    spec.validate()?;
    if validation.is_empty() {
        return Err(JndError::Input("sweep needs at least one validation image".into()));
    }
    let images = &validation[..validation.len().min(spec.validation_count)];
    let cells = spec.cells();
    let policy = spec.target.unwrap_or(TargetPolicy::default_for(spec.method));
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..images.len()).map(move |i| (c, i))).collect();
    let records: Vec<ImageRecord> = jobs
        .par_iter()
        .map(|&(c, i)| {
            let (image, label) = &images[i];
            let clean = model.predict(image)?;
            let config = AttackConfig { mode: policy.resolve(&clean), ..cells[c].clone() };
            match run_attack(spec.method, model, image, *label, &config) {
                Ok(r) => {
                    let (psnr, ssim) = if r.success {
                        (
                            Some(psnr_with(image, &r.adversarial_image, metrics)?),
                            Some(ssim_with(image, &r.adversarial_image, metrics)?),
                        )
                    } else {
                        (None, None)
                    };
                    Ok(ImageRecord {
                        image_index: i,
                        success: r.success,
                        iterations: r.first_fool_iteration.unwrap_or(r.iterations),
                        psnr,
                        ssim,
                        error: None,
                    })
                }
                Err(JndError::Numerical(msg)) => Ok(ImageRecord {
                    image_index: i,
                    success: false,
                    iterations: 0,
                    psnr: None,
                    ssim: None,
                    error: Some(msg),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let per_cell = images.len();
    let mut out = Vec::with_capacity(cells.len());
    for (index, config) in cells.into_iter().enumerate() {
        let recs = records[index * per_cell..(index + 1) * per_cell].to_vec();
        let sum = cell_summary(&recs);
        out.push(CellResult {
            index,
            config,
            success_rate: sum.success_rate,
            mean_psnr: sum.mean_psnr,
            mean_ssim: sum.mean_ssim,
            mean_iterations: sum.mean_iterations,
            objective: sum.objective,
            viable: sum.success_rate >= spec.success_floor && sum.objective.is_some(),
            records: recs,
        });
    }
    let best = out
        .iter()
        .filter(|c| c.viable)
        .max_by(|a, b| a.objective.unwrap().total_cmp(&b.objective.unwrap()).then(b.index.cmp(&a.index)))
        .map(|c| c.index)
        .ok_or(JndError::NoViableConfiguration { floor: spec.success_floor })?;
    Ok(SweepResult { spec: spec.clone(), grid_size: out.len(), cells: out, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{Layer, LayerParams, Model, ModelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const SHAPE: [usize; 3] = [12, 12, 1];

    fn linear_model() -> Model<f64> {
        let n: usize = SHAPE.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = ModelSpec {
            input_shape: SHAPE,
            num_classes: 3,
            layers: vec![Layer::Flatten, Layer::Dense { units: 3, bias: true }, Layer::Softmax],
        };
        let params = vec![LayerParams {
            weight: Tensor::from_vec(&[n, 3], (0..n * 3).map(|_| rng.gen_range(-0.05..0.05)).collect()).unwrap(),
            bias: Some(Tensor::zeros(&[3])),
        }];
        Model::new(spec, params).unwrap()
    }

    fn validation(model: &Model<f64>, count: usize) -> Vec<(Tensor<f64>, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = SHAPE.iter().product();
        (0..count)
            .map(|_| {
                let x = Tensor::from_vec(&SHAPE, (0..n).map(|_| rng.gen_range(60.0..200.0)).collect()).unwrap();
                let y = model.predict(&x).unwrap().label;
                (x, y)
            })
            .collect()
    }

    fn record(success: bool, iterations: usize, psnr: f64, ssim: f64) -> ImageRecord {
        let q = |v: f64| success.then_some(v);
        ImageRecord { image_index: 0, success, iterations, psnr: q(psnr), ssim: q(ssim), error: None }
    }

    #[test]
    fn grid_size_and_cells_agree() {
        let mut spec = SweepSpec::new(Method::Jnd);
        spec.alpha = vec![0.01, 0.05, 0.1];
        assert_eq!(spec.grid_size(), 12);
        assert_eq!(spec.cells().len(), 12);
        assert_eq!(spec.cells()[0].lambdas, [1.0, 1.0, 1.0, 1.0]);
        let fgsm = SweepSpec { epsilon: vec![0.1, 0.5], ..SweepSpec::new(Method::Fgsm) };
        assert_eq!(fgsm.cells().iter().map(|c| c.epsilon).collect::<Vec<_>>(), vec![0.1, 0.5]);
        assert_eq!(SweepSpec::new(Method::DeepFool).grid_size(), 1);
    }

    #[test]
    fn empty_lists_are_rejected() {
        let spec = SweepSpec { lambda2: vec![], ..SweepSpec::new(Method::Jnd) };
        assert!(matches!(spec.validate(), Err(JndError::Config(_))));
        // lists the method ignores may be empty
        let fgsm = SweepSpec { lambda2: vec![], ..SweepSpec::new(Method::Fgsm) };
        assert!(fgsm.validate().is_ok());
    }

    #[test]
    fn summary_uses_successful_records_only() {
        let recs = vec![record(true, 4, 40.0, 0.9), record(false, 1000, f64::NAN, f64::NAN), record(true, 2, 50.0, 0.7)];
        let s = cell_summary(&recs);
        assert!((s.success_rate - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((s.mean_psnr, s.mean_ssim, s.mean_iterations), (Some(45.0), Some(0.8), Some(3.0)));
        assert!((s.objective.unwrap() - 45.0 * 0.8 / 3.0).abs() < 1e-12);
        assert_eq!(cell_summary(&[record(false, 5, 0.0, 0.0)]).objective, None);
    }

    #[test]
    fn dominant_cell_objective_is_larger() {
        let worse = cell_summary(&[record(true, 6, 40.0, 0.90)]).objective.unwrap();
        let better = cell_summary(&[record(true, 3, 45.0, 0.95)]).objective.unwrap();
        assert!(better > worse);
    }

    #[test]
    fn one_cell_grid_picks_that_cell() {
        let model = linear_model();
        let val = validation(&model, 4);
        let spec = SweepSpec { epsilon: vec![0.5], validation_count: 4, ..SweepSpec::new(Method::Fgsm) };
        let r = run_sweep(&model, &val, &spec, &MetricConfig::default()).unwrap();
        assert_eq!((r.best, r.grid_size), (0, 1));
    }

    #[test]
    fn best_cell_has_the_largest_viable_objective() {
        let model = linear_model();
        let val = validation(&model, 5);
        let spec = SweepSpec { epsilon: vec![0.25, 0.5, 1.0, 2.0], validation_count: 5, ..SweepSpec::new(Method::Fgsm) };
        let r = run_sweep(&model, &val, &spec, &MetricConfig::default()).unwrap();
        let best = r.best_cell().objective.unwrap();
        for c in &r.cells {
            let s = cell_summary(&c.records);
            assert_eq!(s.success_rate, c.success_rate);
            if let (Some(a), Some(b)) = (s.objective, c.objective) {
                assert!((a - b).abs() < 1e-9);
            }
            if c.viable {
                assert!(c.objective.unwrap() <= best);
            }
        }
    }

    #[test]
    fn unreachable_floor_is_an_error() {
        let model = linear_model();
        let val = validation(&model, 3);
        let spec = SweepSpec { epsilon: vec![0.0], max_iterations: 5, validation_count: 3, ..SweepSpec::new(Method::Fgv) };
        assert!(matches!(
            run_sweep(&model, &val, &spec, &MetricConfig::default()),
            Err(JndError::NoViableConfiguration { .. })
        ));
    }

    #[test]
    fn exploding_cells_are_recorded_not_fatal() {
        let model = linear_model();
        let val = validation(&model, 3);
        let spec = SweepSpec { epsilon: vec![0.5, 1e9], validation_count: 3, ..SweepSpec::new(Method::Fgv) };
        let r = run_sweep(&model, &val, &spec, &MetricConfig::default()).unwrap();
        assert!(r.cells[1].records.iter().all(|rec| rec.error.is_some() && !rec.success));
        assert_eq!(r.best, 0);
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let model = linear_model();
        let val = validation(&model, 4);
        let spec = SweepSpec { epsilon: vec![0.3, 0.6], validation_count: 4, ..SweepSpec::new(Method::Fgsm) };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_sweep(&model, &val, &spec, &MetricConfig::default()).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn spec_parses_from_json_with_defaults() {
        let spec: SweepSpec = serde_json::from_str(r#"{"method": "jnd", "lambda4": [0, 10], "alpha": [0.05, 0.2]}"#).unwrap();
        assert_eq!(spec.lambda1, vec![1.0, 10.0]);
        assert_eq!(spec.grid_size(), 2 * 2 * 2);
        assert!(serde_json::from_str::<SweepSpec>(r#"{"method": "jnd", "gamma": [1]}"#).is_err());
    }
}
