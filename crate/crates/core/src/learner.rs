//! Toy differentiable actor and critic plus every learning rule the loop uses.
//!
//! The actor is softmax-linear: `π(b|s) = softmax(W·x)_b` with one weight
//! row per action over `d` features. The critic is linear, `V(s) = w·x`,
//! with `V(terminal) = 0`. All updates are pure functions from old
//! parameters to new ones and fail instead of producing non-finite entries.

pub mod gradcheck;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("action {action} out of range for {n_actions} actions")]
    ActionOutOfRange { action: usize, n_actions: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("reflection does not match step: {0}")]
    ReflectionMismatch(String),
    #[error("invalid parameter shape: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, LearnerError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub features: Vec<f64>,
    #[serde(default)]
    pub terminal: bool,
}

impl EnvState {
    pub fn new(features: Vec<f64>) -> Self {
        Self {
            features,
            terminal: false,
        }
    }

    pub fn terminal(features: Vec<f64>) -> Self {
        Self {
            features,
            terminal: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

#[derive(Deserialize)]
struct RawPolicyParams {
    n_actions: usize,
    dim: usize,
    weights: Vec<f64>,
}

/// Actor weights, row-major `n_actions × dim`. Gradients share this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicyParams")]
pub struct PolicyParams {
    n_actions: usize,
    dim: usize,
    weights: Vec<f64>,
}

pub type PolicyGradient = PolicyParams;

impl TryFrom<RawPolicyParams> for PolicyParams {
    type Error = LearnerError;

    fn try_from(raw: RawPolicyParams) -> Result<Self> {
        Self::from_weights(raw.n_actions, raw.dim, raw.weights)
    }
}

impl PolicyParams {
    pub fn zeros(n_actions: usize, dim: usize) -> Self {
        Self {
            n_actions,
            dim,
            weights: vec![0.0; n_actions * dim],
        }
    }

    pub fn from_weights(n_actions: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if n_actions == 0 || dim == 0 {
            return Err(LearnerError::Shape("n_actions and dim must be positive".into()));
        }
        if weights.len() != n_actions * dim {
            return Err(LearnerError::Shape(format!(
                "{} weights for {n_actions}×{dim}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LearnerError::NonFinite("policy weights"));
        }
        Ok(Self {
            n_actions,
            dim,
            weights,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn row(&self, action: usize) -> &[f64] {
        &self.weights[action * self.dim..(action + 1) * self.dim]
    }

    fn row_mut(&mut self, action: usize) -> &mut [f64] {
        &mut self.weights[action * self.dim..(action + 1) * self.dim]
    }

    fn check_state(&self, s: &EnvState) -> Result<()> {
        if s.dim() != self.dim {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dim,
                got: s.dim(),
            });
        }
        Ok(())
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions {
            return Err(LearnerError::ActionOutOfRange {
                action: a,
                n_actions: self.n_actions,
            });
        }
        Ok(())
    }

    /// `self + scale · other`, rejecting non-finite results.
    fn axpy(&self, scale: f64, other: &PolicyGradient) -> Result<Self> {
        let weights: Vec<f64> = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(w, g)| w + scale * g)
            .collect();
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(LearnerError::NonFinite("policy update"));
        }
        Ok(Self { weights, ..*self })
    }

    fn logits(&self, s: &EnvState) -> Vec<f64> {
        (0..self.n_actions).map(|b| dot(self.row(b), &s.features)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub weights: Vec<f64>,
}

impl CriticParams {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check_state(&self, s: &EnvState) -> Result<()> {
        if s.dim() != self.dim() {
            return Err(LearnerError::DimensionMismatch {
                expected: self.dim(),
                got: s.dim(),
            });
        }
        Ok(())
    }
}

/// Step sizes and discounts. The discount (TD target) and the reflection
/// weight are separate constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_discount: f64,
    pub gamma_reflect: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            beta: 0.05,
            gamma_discount: 0.9,
            gamma_reflect: 0.5,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(LearnerError::InvalidHyperparams(format!("{name} = {v}")))
            }
        };
        nonneg("alpha", self.alpha)?;
        nonneg("beta", self.beta)?;
        nonneg("gamma_reflect", self.gamma_reflect)?;
        if !(0.0..=1.0).contains(&self.gamma_discount) {
            return Err(LearnerError::InvalidHyperparams(format!(
                "gamma_discount = {} not in [0, 1]",
                self.gamma_discount
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub input: EnvState,
    pub target: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(LearnerError::NonFinite(what))
    }
}

pub fn policy_probs(p: &PolicyParams, s: &EnvState) -> Result<Vec<f64>> {
    p.check_state(s)?;
    Ok(softmax(&p.logits(s)))
}

pub fn log_policy(p: &PolicyParams, s: &EnvState, a: usize) -> Result<f64> {
    p.check_state(s)?;
    p.check_action(a)?;
    Ok(log_softmax(&p.logits(s))[a])
}

/// Greedy action; ties go to the lowest index.
pub fn argmax_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in probs.iter().enumerate() {
        if v > probs[best] {
            best = i;
        }
    }
    best
}

/// Gradient of `Σ_b target_b · (−log π(b|s))` for a distribution `target`.
fn cross_entropy_grad(p: &PolicyParams, s: &EnvState, target: &[f64], out: &mut PolicyGradient, scale: f64) {
    let probs = softmax(&p.logits(s));
    for (b, (&pb, &tb)) in probs.iter().zip(target).enumerate() {
        let coeff = scale * (pb - tb);
        for (g, x) in out.row_mut(b).iter_mut().zip(&s.features) {
            *g += coeff * x;
        }
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Mean cross-entropy `−log π(target|input)` over the batch.
pub fn supervised_loss(p: &PolicyParams, batch: &[LabeledExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        total -= log_policy(p, &ex.input, ex.target)?;
    }
    finite(total / batch.len() as f64, "supervised loss")
}

/// Analytic gradient of [`supervised_loss`]: mean of `(π − onehot(y)) ⊗ x`.
pub fn supervised_grad(p: &PolicyParams, batch: &[LabeledExample]) -> Result<PolicyGradient> {
    if batch.is_empty() {
        return Err(LearnerError::EmptyBatch);
    }
    let mut grad = PolicyParams::zeros(p.n_actions, p.dim);
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        p.check_state(&ex.input)?;
        p.check_action(ex.target)?;
        cross_entropy_grad(p, &ex.input, &one_hot(p.n_actions, ex.target), &mut grad, scale);
    }
    Ok(grad)
}

/// One gradient-descent step on the supervised loss.
pub fn supervised_step(p: &PolicyParams, batch: &[LabeledExample], lr: f64) -> Result<PolicyParams> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(LearnerError::InvalidHyperparams(format!("lr = {lr}")));
    }
    let grad = supervised_grad(p, batch)?;
    p.axpy(-lr, &grad)
}

pub fn value(c: &CriticParams, s: &EnvState) -> Result<f64> {
    c.check_state(s)?;
    if s.terminal {
        return Ok(0.0);
    }
    Ok(dot(&c.weights, &s.features))
}

/// `∇_w V(s)`: the features, or zeros at a terminal state.
pub fn value_grad(c: &CriticParams, s: &EnvState) -> Result<Vec<f64>> {
    c.check_state(s)?;
    if s.terminal {
        return Ok(vec![0.0; c.dim()]);
    }
    Ok(s.features.clone())
}

/// `δ = r + γ·V(s') − V(s)`.
pub fn td_error(c: &CriticParams, s: &EnvState, s_next: &EnvState, r: f64, h: &Hyperparams) -> Result<f64> {
    finite(r, "reward")?;
    let delta = r + h.gamma_discount * value(c, s_next)? - value(c, s)?;
    finite(delta, "TD error")
}

/// `∇_W log π(a|s)`: row `b` is `(1[b=a] − π(b|s))·x`.
pub fn log_policy_grad(p: &PolicyParams, s: &EnvState, a: usize) -> Result<PolicyGradient> {
    p.check_state(s)?;
    p.check_action(a)?;
    let mut grad = PolicyParams::zeros(p.n_actions, p.dim);
    // −∇ cross-entropy toward onehot(a)
    cross_entropy_grad(p, s, &one_hot(p.n_actions, a), &mut grad, -1.0);
    Ok(grad)
}

/// `W' = W + α·δ·∇log π(a|s)`.
///
/// For this policy family a positive `δ` never decreases `π(a|s)`, for any
/// step size: along the update direction the derivative of `log π(a|s)` is
/// `(1−π_a)(1−π_a(t)) + Σ_{b≠a} π_b π_b(t) ≥ 0`. Strict increase can only be
/// lost once `π(a|s)` rounds to 1.
pub fn actor_update(p: &PolicyParams, s: &EnvState, a: usize, delta: f64, h: &Hyperparams) -> Result<PolicyParams> {
    finite(delta, "TD error")?;
    let grad = log_policy_grad(p, s, a)?;
    p.axpy(h.alpha * delta, &grad)
}

/// `w' = w + β·δ·∇V(s)`; unchanged at terminal states.
pub fn critic_update(c: &CriticParams, s: &EnvState, delta: f64, h: &Hyperparams) -> Result<CriticParams> {
    finite(delta, "TD error")?;
    let grad = value_grad(c, s)?;
    let weights: Vec<f64> = c
        .weights
        .iter()
        .zip(&grad)
        .map(|(w, g)| w + h.beta * delta * g)
        .collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(LearnerError::NonFinite("critic update"));
    }
    Ok(CriticParams { weights })
}

/// Pseudo-target for the feedback loss: uniform over every action except
/// the rejected one.
fn away_from(n_actions: usize, rejected: usize) -> Vec<f64> {
    let share = 1.0 / (n_actions - 1) as f64;
    (0..n_actions)
        .map(|b| if b == rejected { 0.0 } else { share })
        .collect()
}

/// Feedback-driven loss `L(f, a)`: cross-entropy of π against the uniform
/// distribution over the alternatives to the rejected action. Zero when
/// there are no alternatives.
pub fn feedback_loss(p: &PolicyParams, s: &EnvState, rejected: usize) -> Result<f64> {
    p.check_state(s)?;
    p.check_action(rejected)?;
    if p.n_actions < 2 {
        return Ok(0.0);
    }
    let logp = log_softmax(&p.logits(s));
    let target = away_from(p.n_actions, rejected);
    Ok(-target.iter().zip(&logp).map(|(t, l)| t * l).sum::<f64>())
}

pub fn feedback_loss_grad(p: &PolicyParams, s: &EnvState, rejected: usize) -> Result<PolicyGradient> {
    p.check_state(s)?;
    p.check_action(rejected)?;
    let mut grad = PolicyParams::zeros(p.n_actions, p.dim);
    if p.n_actions >= 2 {
        cross_entropy_grad(p, s, &away_from(p.n_actions, rejected), &mut grad, 1.0);
    }
    Ok(grad)
}

/// The learner's view of one reflection event.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionEvent {
    pub state: EnvState,
    /// Index of the rejected action.
    pub rejected: usize,
    /// Index of the action the reflection recommends, if it names one.
    pub corrective: Option<usize>,
}

/// `W' = W − α·∇L(f, a) + γ_r·∇G(s)` where `G = log π(corrective|s)`, or
/// zero when the reflection names no corrective action.
pub fn reflection_update(p: &PolicyParams, event: &ReflectionEvent, h: &Hyperparams) -> Result<PolicyParams> {
    if event.corrective == Some(event.rejected) {
        return Err(LearnerError::ReflectionMismatch(
            "corrective action equals the rejected action".into(),
        ));
    }
    let loss_grad = feedback_loss_grad(p, &event.state, event.rejected)?;
    let mut next = p.axpy(-h.alpha, &loss_grad)?;
    if let Some(c) = event.corrective {
        let g = log_policy_grad(p, &event.state, c)?;
        next = next.axpy(h.gamma_reflect, &g)?;
    }
    Ok(next)
}

/// Step used by [`finite_diff_check`].
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared in absolute terms.
pub const FD_ABS_FLOOR: f64 = 1e-3;

/// Compares `analytic` with central differences of `f` at `params`.
///
/// Returns the largest per-coordinate `|analytic − numeric| / max(|numeric|, FD_ABS_FLOOR)`.
pub fn finite_diff_check<F>(f: F, params: &[f64], analytic: &[f64]) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient shape");
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = f(&x);
        x[i] = orig - FD_STEP;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(FD_ABS_FLOOR);
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    worst
}
