//! Iterative white-box attacks on a [`Model`]: the regularized JND descent
//! and the FGSM, FGV and DeepFool baselines.
//!
//! Every attack shares one driver loop. At iteration `k` the current image
//! `x(k)` is evaluated once; its prediction, goal confidence and JND cost
//! breakdown are recorded, the stop rule is checked, and only then is the
//! method's update applied to produce `x(k+1)`. Trajectories therefore hold
//! `iterations + 1` entries, and the first-fool iteration `K` is the first
//! recorded `k` that satisfies the goal.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::{LossSpec, Model, Prediction};
use crate::error::{JndError, Result};
use crate::regularizers::{br_loss, clamp_to_range, tv_loss};
use crate::scalar::Scalar;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Jnd,
    Fgsm,
    Fgv,
    DeepFool,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Jnd, Method::Fgsm, Method::Fgv, Method::DeepFool];

    pub fn name(self) -> &'static str {
        match self {
            Method::Jnd => "jnd",
            Method::Fgsm => "fgsm",
            Method::Fgv => "fgv",
            Method::DeepFool => "deepfool",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = JndError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| JndError::Config(format!("unknown attack method `{s}` (expected jnd, fgsm, fgv or deepfool)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackMode {
    /// Drive the model toward `target`.
    Targeted { target: usize },
    /// Drive the model away from the true label.
    NonTargeted,
}

/// How an experiment picks the attack mode for each image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TargetPolicy {
    NonTargeted,
    /// Target the most probable wrong class of the clean image.
    RunnerUp,
    Fixed { target: usize },
}

impl TargetPolicy {
    /// Runner-up for the gradient attacks; DeepFool only runs non-targeted.
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::DeepFool => TargetPolicy::NonTargeted,
            _ => TargetPolicy::RunnerUp,
        }
    }

    pub fn resolve<T: Scalar>(self, clean: &Prediction<T>) -> AttackMode {
        match self {
            TargetPolicy::NonTargeted => AttackMode::NonTargeted,
            TargetPolicy::Fixed { target } => AttackMode::Targeted { target },
            TargetPolicy::RunnerUp => {
                let target = (0..clean.distribution.len())
                    .filter(|&c| c != clean.label)
                    .fold(None, |best: Option<usize>, c| match best {
                        Some(b) if clean.distribution[b] >= clean.distribution[c] => Some(b),
                        _ => Some(c),
                    })
                    .unwrap_or(clean.label);
                AttackMode::Targeted { target }
            }
        }
    }
}

impl fmt::Display for TargetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetPolicy::NonTargeted => f.write_str("nontargeted"),
            TargetPolicy::RunnerUp => f.write_str("runner-up"),
            TargetPolicy::Fixed { target } => write!(f, "{target}"),
        }
    }
}

impl FromStr for TargetPolicy {
    type Err = JndError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nontargeted" | "non-targeted" | "none" => Ok(TargetPolicy::NonTargeted),
            "runner-up" | "runnerup" => Ok(TargetPolicy::RunnerUp),
            other => other
                .parse()
                .map(|target| TargetPolicy::Fixed { target })
                .map_err(|_| JndError::Config(format!("unknown target `{s}` (expected nontargeted, runner-up or a class index)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    FirstLabelFlip,
    /// The adversarial label must also reach `confidence_threshold`.
    ConfidenceReached,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Weights of the loss, squared-L2, bounded-range and total-variation terms.
    pub lambdas: [f64; 4],
    /// JND learning rate.
    pub alpha: f64,
    /// FGSM / FGV step scale, in pixel units.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub confidence_threshold: Option<f64>,
    pub mode: AttackMode,
    pub stop_rule: StopRule,
    /// DeepFool overshoot: the accumulated step is scaled by `1 + overshoot`.
    pub overshoot: f64,
    /// Keep iterating after the first fool; the image at `K` is still reported.
    pub continue_after_success: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            lambdas: [10.0, 1.0, 1.0, 10.0],
            alpha: 0.05,
            epsilon: 0.5,
            max_iterations: 1000,
            confidence_threshold: None,
            mode: AttackMode::NonTargeted,
            stop_rule: StopRule::FirstLabelFlip,
            overshoot: 0.02,
            continue_after_success: false,
        }
    }
}

impl AttackConfig {
    /// λ = (10, 1, 1, 10), α = 0.05.
    pub fn jnd_preset() -> Self {
        Self::default()
    }

    pub fn fgsm_preset() -> Self {
        Self { epsilon: 0.5, ..Self::default() }
    }

    pub fn fgv_preset() -> Self {
        Self { epsilon: 0.4, ..Self::default() }
    }

    pub fn deepfool_preset() -> Self {
        Self { overshoot: 0.02, max_iterations: 50, ..Self::default() }
    }

    pub fn preset(method: Method) -> Self {
        match method {
            Method::Jnd => Self::jnd_preset(),
            Method::Fgsm => Self::fgsm_preset(),
            Method::Fgv => Self::fgv_preset(),
            Method::DeepFool => Self::deepfool_preset(),
        }
    }

    pub fn with_confidence_stop(mut self, threshold: f64) -> Self {
        self.stop_rule = StopRule::ConfidenceReached;
        self.confidence_threshold = Some(threshold);
        self
    }

    pub fn validate(&self, true_label: usize, num_classes: usize) -> Result<()> {
        let bad = |m: String| Err(JndError::Config(m));
        if self.lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return bad(format!("lambdas must be finite and non-negative, got {:?}", self.lambdas));
        }
        for (name, v) in [("alpha", self.alpha), ("epsilon", self.epsilon), ("overshoot", self.overshoot)] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if true_label >= num_classes {
            return bad(format!("true label {true_label} out of range for {num_classes} classes"));
        }
        if let AttackMode::Targeted { target } = self.mode {
            if target >= num_classes {
                return bad(format!("target {target} out of range for {num_classes} classes"));
            }
            if target == true_label {
                return bad(format!("target label {target} equals the true label"));
            }
        }
        if let Some(t) = self.confidence_threshold {
            if !(0.0..1.0).contains(&t) {
                return bad(format!("confidence threshold must lie in [0, 1), got {t}"));
            }
        }
        if self.stop_rule == StopRule::ConfidenceReached && self.confidence_threshold.is_none() {
            return bad("confidence_reached stop rule needs a confidence threshold".into());
        }
        Ok(())
    }

    /// Label whose cross-entropy drives the attack, and the descent sign applied to it.
    fn loss_label(&self, true_label: usize) -> (usize, f64) {
        match self.mode {
            AttackMode::Targeted { target } => (target, 1.0),
            AttackMode::NonTargeted => (true_label, -1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackState<T> {
    pub current: Tensor<T>,
    pub original: Tensor<T>,
    pub iteration: usize,
    pub true_label: usize,
}

impl<T: Scalar> AttackState<T> {
    pub fn start(image: Tensor<T>, true_label: usize) -> Self {
        Self { current: image.clone(), original: image, iteration: 0, true_label }
    }
}

/// λ-weighted terms of the JND cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown<T> {
    pub total: T,
    pub loss_term: T,
    pub l2_term: T,
    pub br_term: T,
    pub tv_term: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackResult<T> {
    pub method: Method,
    /// `x(K)` on success, otherwise the last iterate.
    pub adversarial_image: Tensor<T>,
    /// Last iterate; differs from `adversarial_image` only with `continue_after_success`.
    pub final_image: Tensor<T>,
    pub first_fool_iteration: Option<usize>,
    pub success: bool,
    /// Update steps executed.
    pub iterations: usize,
    /// Confidence of the predicted label at each recorded iterate.
    pub confidence_trajectory: Vec<T>,
    pub label_trajectory: Vec<usize>,
    /// Probability of the adversarial goal (target class, or best wrong class).
    pub goal_confidence_trajectory: Vec<T>,
    pub cost_trajectory: Vec<CostBreakdown<T>>,
    /// `‖x(0) − x(K)‖₂` when successful.
    pub jnd_l2: Option<T>,
}

impl<T: Scalar> AttackResult<T> {
    /// Cost breakdown at `K` (or at the last iterate).
    pub fn cost_at_stop(&self) -> &CostBreakdown<T> {
        &self.cost_trajectory[self.first_fool_iteration.unwrap_or(self.cost_trajectory.len() - 1)]
    }
}

/// JND cost from already-computed logits.
fn cost_from_logits<T: Scalar>(
    logits: &Tensor<T>,
    current: &Tensor<T>,
    original: &Tensor<T>,
    true_label: usize,
    config: &AttackConfig,
) -> Result<CostBreakdown<T>> {
    let [l1, l2, l3, l4] = config.lambdas.map(T::lit);
    let (label, sign) = config.loss_label(true_label);
    let (ce, _) = tensor::cross_entropy(logits, label)?;
    let loss_term = l1 * T::lit(sign) * ce;
    let diff = current.sub(original)?;
    let l2_term = l2 * diff.dot(&diff)?;
    let br_term = if l3 == T::zero() { T::zero() } else { l3 * br_loss(current)?.value };
    let tv_term = if l4 == T::zero() { T::zero() } else { l4 * tv_loss(current)?.value };
    Ok(CostBreakdown { total: loss_term + l2_term + br_term + tv_term, loss_term, l2_term, br_term, tv_term })
}

/// `λ₁·Loss + λ₂·‖x(k) − x(0)‖² + λ₃·BR(x(k)) + λ₄·TV(x(k))`, where Loss is the
/// target cross-entropy (targeted) or the negated true-label cross-entropy.
pub fn jnd_cost<T: Scalar>(state: &AttackState<T>, model: &Model<T>, config: &AttackConfig) -> Result<CostBreakdown<T>> {
    let logits = model.logits(&state.current)?;
    cost_from_logits(&logits, &state.current, &state.original, state.true_label, config)
}

/// Gradient of [`jnd_cost`] with respect to the current image.
pub fn jnd_cost_gradient<T: Scalar>(
    state: &AttackState<T>,
    model: &Model<T>,
    config: &AttackConfig,
) -> Result<Tensor<T>> {
    let (label, _) = config.loss_label(state.true_label);
    let eval = model.evaluate(&state.current, LossSpec::cross_entropy(label))?;
    assemble_jnd_gradient(state, &eval.input_gradient, config)
}

fn assemble_jnd_gradient<T: Scalar>(
    state: &AttackState<T>,
    loss_gradient: &Tensor<T>,
    config: &AttackConfig,
) -> Result<Tensor<T>> {
    let [l1, l2, l3, l4] = config.lambdas.map(T::lit);
    let (_, sign) = config.loss_label(state.true_label);
    let mut g = loss_gradient.scale(l1 * T::lit(sign));
    if l2 != T::zero() {
        g.axpy(l2 + l2, &state.current.sub(&state.original)?)?;
    }
    if l3 != T::zero() {
        g.axpy(l3, &br_loss(&state.current)?.gradient)?;
    }
    if l4 != T::zero() {
        g.axpy(l4, &tv_loss(&state.current)?.gradient)?;
    }
    if !g.all_finite() {
        return Err(JndError::Numerical(format!(
            "non-finite JND gradient at iteration {} (loss gradient finite: {})",
            state.iteration,
            loss_gradient.all_finite()
        )));
    }
    Ok(g)
}

const MAX_STEP: f64 = 255.0;

fn guarded_step<T: Scalar>(x: &Tensor<T>, step: &Tensor<T>, what: &str, iteration: usize) -> Result<Tensor<T>> {
    if !step.all_finite() {
        return Err(JndError::Numerical(format!("{what} step is not finite at iteration {iteration}")));
    }
    let size = step.norm_linf().as_f64();
    if size > MAX_STEP {
        return Err(JndError::Numerical(format!(
            "{what} step has L-inf norm {size:.3e} > {MAX_STEP} at iteration {iteration}; step size is mis-set"
        )));
    }
    Ok(clamp_to_range(&x.add(step)?))
}

fn jnd_update<T: Scalar>(state: &AttackState<T>, loss_gradient: &Tensor<T>, config: &AttackConfig) -> Result<AttackState<T>> {
    let g = assemble_jnd_gradient(state, loss_gradient, config)?;
    let step = g.scale(-T::lit(config.alpha));
    Ok(AttackState {
        current: guarded_step(&state.current, &step, "JND", state.iteration)?,
        original: state.original.clone(),
        iteration: state.iteration + 1,
        true_label: state.true_label,
    })
}

/// One JND update `x(k+1) = clamp(x(k) − α·∂Cost/∂x(k))`.
pub fn jnd_step<T: Scalar>(state: &AttackState<T>, model: &Model<T>, config: &AttackConfig) -> Result<AttackState<T>> {
    if state.iteration >= config.max_iterations {
        return Err(JndError::Precondition(format!(
            "iteration {} already at the cap of {}",
            state.iteration, config.max_iterations
        )));
    }
    let (label, _) = config.loss_label(state.true_label);
    let eval = model.evaluate(&state.current, LossSpec::cross_entropy(label))?;
    jnd_update(state, &eval.input_gradient, config)
}

/// Raw update direction of an FGSM/FGV step before clamping.
pub fn gradient_step<T: Scalar>(method: Method, loss_gradient: &Tensor<T>, config: &AttackConfig) -> Tensor<T> {
    let eps = T::lit(config.epsilon);
    // ascend the true-label loss, or descend the target loss
    let dir = match config.mode {
        AttackMode::NonTargeted => T::one(),
        AttackMode::Targeted { .. } => -T::one(),
    };
    match method {
        Method::Fgsm => loss_gradient.map(|g| {
            let s = if g > T::zero() {
                T::one()
            } else if g < T::zero() {
                -T::one()
            } else {
                T::zero()
            };
            dir * eps * s
        }),
        _ => loss_gradient.scale(dir * eps),
    }
}

/// Raw JND update direction `−α·∂Cost/∂x` before clamping.
pub fn jnd_direction<T: Scalar>(state: &AttackState<T>, model: &Model<T>, config: &AttackConfig) -> Result<Tensor<T>> {
    Ok(jnd_cost_gradient(state, model, config)?.scale(-T::lit(config.alpha)))
}

fn goal_met<T: Scalar>(p: &Prediction<T>, true_label: usize, config: &AttackConfig) -> bool {
    let label_ok = match config.mode {
        AttackMode::Targeted { target } => p.label == target,
        AttackMode::NonTargeted => p.label != true_label,
    };
    label_ok
        && match config.stop_rule {
            StopRule::FirstLabelFlip => true,
            StopRule::ConfidenceReached => p.confidence.as_f64() >= config.confidence_threshold.unwrap_or(0.0),
        }
}

fn goal_confidence<T: Scalar>(p: &Prediction<T>, true_label: usize, config: &AttackConfig) -> T {
    match config.mode {
        AttackMode::Targeted { target } => p.probability(target),
        AttackMode::NonTargeted => p
            .distribution
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != true_label)
            .fold(T::zero(), |m, (_, &v)| m.max(v)),
    }
}

/// What the driver needs at each iterate.
struct Probe<T> {
    logits: Tensor<T>,
    /// Cross-entropy gradient for gradient methods.
    loss_gradient: Option<Tensor<T>>,
    /// Logit Jacobian rows for DeepFool.
    jacobian: Option<Vec<Tensor<T>>>,
}

fn probe<T: Scalar>(method: Method, model: &Model<T>, x: &Tensor<T>, true_label: usize, config: &AttackConfig) -> Result<Probe<T>> {
    match method {
        Method::DeepFool => {
            let (logits, rows) = model.logit_jacobian(x)?;
            Ok(Probe { logits, loss_gradient: None, jacobian: Some(rows) })
        }
        _ => {
            let (label, _) = config.loss_label(true_label);
            let eval = model.evaluate(x, LossSpec::cross_entropy(label))?;
            Ok(Probe { logits: eval.logits, loss_gradient: Some(eval.input_gradient), jacobian: None })
        }
    }
}

/// The linearized-boundary step of DeepFool at the current iterate: towards the class
/// `l ≠ current` minimizing `|f_l − f_current| / ‖∇f_l − ∇f_current‖₂`.
pub fn deepfool_direction<T: Scalar>(logits: &Tensor<T>, jacobian: &[Tensor<T>], current: usize) -> Result<Tensor<T>> {
    let f = logits.data();
    let mut best: Option<(T, T, Tensor<T>)> = None;
    for (c, row) in jacobian.iter().enumerate() {
        if c == current {
            continue;
        }
        let w = row.sub(&jacobian[current])?;
        let norm = w.norm_l2();
        if norm == T::zero() {
            continue;
        }
        let gap = (f[c] - f[current]).abs();
        let dist = gap / norm;
        if best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
            best = Some((dist, gap, w));
        }
    }
    let Some((_, gap, w)) = best else {
        return Err(JndError::Numerical("DeepFool: every class boundary has a zero gradient".into()));
    };
    let norm_sq = w.dot(&w)?;
    Ok(w.scale((gap + T::lit(1e-4)) / norm_sq))
}

/// Runs `method` from `image`, which the model must classify as `true_label`.
pub fn run_attack<T: Scalar>(
    method: Method,
    model: &Model<T>,
    image: &Tensor<T>,
    true_label: usize,
    config: &AttackConfig,
) -> Result<AttackResult<T>> {
    config.validate(true_label, model.num_classes())?;
    if method == Method::DeepFool {
        if model.num_classes() < 2 {
            return Err(JndError::Config("DeepFool needs at least two classes".into()));
        }
        if config.mode != AttackMode::NonTargeted {
            return Err(JndError::Config("DeepFool runs in non-targeted mode only".into()));
        }
        if config.stop_rule != StopRule::FirstLabelFlip {
            return Err(JndError::Config("DeepFool stops at the first label flip only".into()));
        }
    }
    let start = model.predict(image)?;
    if start.label != true_label {
        return Err(JndError::Precondition(format!(
            "image is classified as {} but its true label is {true_label}",
            start.label
        )));
    }

    let mut state = AttackState::start(image.clone(), true_label);
    let mut deepfool_total = Tensor::zeros(image.shape());
    let mut result = AttackResult {
        method,
        adversarial_image: image.clone(),
        final_image: image.clone(),
        first_fool_iteration: None,
        success: false,
        iterations: 0,
        confidence_trajectory: Vec::new(),
        label_trajectory: Vec::new(),
        goal_confidence_trajectory: Vec::new(),
        cost_trajectory: Vec::new(),
        jnd_l2: None,
    };
    loop {
        let pr = probe(method, model, &state.current, true_label, config)?;
        let pred = Prediction::from_logits(&pr.logits);
        result.confidence_trajectory.push(pred.confidence);
        result.label_trajectory.push(pred.label);
        result.goal_confidence_trajectory.push(goal_confidence(&pred, true_label, config));
        result.cost_trajectory.push(cost_from_logits(&pr.logits, &state.current, &state.original, true_label, config)?);

        if result.first_fool_iteration.is_none() && goal_met(&pred, true_label, config) {
            result.first_fool_iteration = Some(state.iteration);
            result.success = true;
            result.adversarial_image = state.current.clone();
            result.jnd_l2 = Some(state.current.sub(&state.original)?.norm_l2());
            if !config.continue_after_success {
                break;
            }
        }
        if state.iteration >= config.max_iterations {
            break;
        }
        state = match method {
            Method::Jnd => jnd_update(&state, pr.loss_gradient.as_ref().expect("gradient probe"), config)?,
            Method::Fgsm | Method::Fgv => {
                let step = gradient_step(method, pr.loss_gradient.as_ref().expect("gradient probe"), config);
                AttackState {
                    current: guarded_step(&state.current, &step, method.name(), state.iteration)?,
                    iteration: state.iteration + 1,
                    ..state
                }
            }
            Method::DeepFool => {
                // once past the boundary the projection is meaningless; hold the image
                let r = if pred.label == true_label {
                    deepfool_direction(&pr.logits, pr.jacobian.as_ref().expect("jacobian probe"), true_label)?
                } else {
                    Tensor::zeros(image.shape())
                };
                deepfool_total.axpy(T::one(), &r)?;
                let candidate = state.original.clone();
                let step = deepfool_total.scale(T::one() + T::lit(config.overshoot));
                let prev = state.current.clone();
                let next = guarded_step(&candidate, &step, "DeepFool", state.iteration)?;
                if next.sub(&prev)?.norm_linf().as_f64() > MAX_STEP {
                    return Err(JndError::Numerical("DeepFool step exceeds the pixel range".into()));
                }
                AttackState { current: next, iteration: state.iteration + 1, ..state }
            }
        };
        result.iterations = state.iteration;
    }
    if !result.success {
        result.adversarial_image = state.current.clone();
    }
    result.final_image = state.current;
    Ok(result)
}

pub fn jnd_attack<T: Scalar>(model: &Model<T>, image: &Tensor<T>, true_label: usize, config: &AttackConfig) -> Result<AttackResult<T>> {
    run_attack(Method::Jnd, model, image, true_label, config)
}

pub fn fgsm_attack<T: Scalar>(model: &Model<T>, image: &Tensor<T>, true_label: usize, config: &AttackConfig) -> Result<AttackResult<T>> {
    run_attack(Method::Fgsm, model, image, true_label, config)
}

pub fn fgv_attack<T: Scalar>(model: &Model<T>, image: &Tensor<T>, true_label: usize, config: &AttackConfig) -> Result<AttackResult<T>> {
    run_attack(Method::Fgv, model, image, true_label, config)
}

pub fn deepfool_attack<T: Scalar>(
    model: &Model<T>,
    image: &Tensor<T>,
    true_label: usize,
    config: &AttackConfig,
) -> Result<AttackResult<T>> {
    run_attack(Method::DeepFool, model, image, true_label, config)
}
