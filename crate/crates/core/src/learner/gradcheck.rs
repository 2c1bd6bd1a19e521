//! Randomized finite-difference check of every analytic gradient.
//!
//! The analytic gradients are injected through [`AnalyticGradients`] so a
//! deliberately wrong implementation can be checked against the same suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    feedback_loss, feedback_loss_grad, finite_diff_check, log_policy, log_policy_grad, supervised_grad,
    supervised_loss, value, value_grad, CriticParams, EnvState, LabeledExample, PolicyGradient, PolicyParams, Result,
};

/// Tolerance on the maximum relative error.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;

pub type SupervisedGradFn = fn(&PolicyParams, &[LabeledExample]) -> Result<PolicyGradient>;
pub type LogPolicyGradFn = fn(&PolicyParams, &EnvState, usize) -> Result<PolicyGradient>;
pub type ValueGradFn = fn(&CriticParams, &EnvState) -> Result<Vec<f64>>;
pub type FeedbackGradFn = fn(&PolicyParams, &EnvState, usize) -> Result<PolicyGradient>;

/// The gradient implementations under test.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticGradients {
    pub supervised: SupervisedGradFn,
    pub log_policy: LogPolicyGradFn,
    pub value: ValueGradFn,
    pub feedback: FeedbackGradFn,
}

impl Default for AnalyticGradients {
    fn default() -> Self {
        Self {
            supervised: supervised_grad,
            log_policy: log_policy_grad,
            value: value_grad,
            feedback: feedback_loss_grad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientReport {
    pub seed: u64,
    /// Random instances per gradient.
    pub instances: usize,
    pub max_supervised: f64,
    pub max_log_policy: f64,
    pub max_value: f64,
    pub max_feedback: f64,
}

impl GradientReport {
    pub fn max_error(&self) -> f64 {
        [
            self.max_supervised,
            self.max_log_policy,
            self.max_value,
            self.max_feedback,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < GRADIENT_TOLERANCE
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn worse(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::INFINITY
    } else {
        a.max(b)
    }
}

/// Runs `instances` random instances of each gradient. A gradient that
/// fails outright counts as an infinite error.
pub fn run_gradient_suite(seed: u64, instances: usize, grads: &AnalyticGradients) -> GradientReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradientReport {
        seed,
        instances,
        max_supervised: 0.0,
        max_log_policy: 0.0,
        max_value: 0.0,
        max_feedback: 0.0,
    };
    for _ in 0..instances {
        let k = rng.random_range(2..=5);
        let d = rng.random_range(2..=6);
        let p = PolicyParams::from_weights(k, d, uniform(&mut rng, k * d)).expect("shape");
        let s = EnvState::new(uniform(&mut rng, d));
        let a = rng.random_range(0..k);
        let rebuild = |w: &[f64]| PolicyParams::from_weights(k, d, w.to_vec()).expect("shape");

        let batch: Vec<LabeledExample> = (0..rng.random_range(1..=4))
            .map(|_| LabeledExample {
                input: EnvState::new(uniform(&mut rng, d)),
                target: rng.random_range(0..k),
            })
            .collect();
        let err = match (grads.supervised)(&p, &batch) {
            Ok(g) => finite_diff_check(
                |w| supervised_loss(&rebuild(w), &batch).unwrap_or(f64::NAN),
                p.weights(),
                g.weights(),
            ),
            Err(_) => f64::INFINITY,
        };
        report.max_supervised = worse(report.max_supervised, err);

        let err = match (grads.log_policy)(&p, &s, a) {
            Ok(g) => finite_diff_check(
                |w| log_policy(&rebuild(w), &s, a).unwrap_or(f64::NAN),
                p.weights(),
                g.weights(),
            ),
            Err(_) => f64::INFINITY,
        };
        report.max_log_policy = worse(report.max_log_policy, err);

        let err = match (grads.feedback)(&p, &s, a) {
            Ok(g) => finite_diff_check(
                |w| feedback_loss(&rebuild(w), &s, a).unwrap_or(f64::NAN),
                p.weights(),
                g.weights(),
            ),
            Err(_) => f64::INFINITY,
        };
        report.max_feedback = worse(report.max_feedback, err);

        let c = CriticParams {
            weights: uniform(&mut rng, d),
        };
        let err = match (grads.value)(&c, &s) {
            Ok(g) if g.len() == d => finite_diff_check(
                |w| value(&CriticParams { weights: w.to_vec() }, &s).unwrap_or(f64::NAN),
                &c.weights,
                &g,
            ),
            _ => f64::INFINITY,
        };
        report.max_value = worse(report.max_value, err);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doubled_log_policy_grad(p: &PolicyParams, s: &EnvState, a: usize) -> Result<PolicyGradient> {
        let g = log_policy_grad(p, s, a)?;
        PolicyParams::from_weights(p.n_actions(), p.dim(), g.weights().iter().map(|w| 2.0 * w).collect())
    }

    #[test]
    fn correct_gradients_pass() {
        let r = run_gradient_suite(7, 30, &AnalyticGradients::default());
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn injected_bug_fails() {
        let grads = AnalyticGradients {
            log_policy: doubled_log_policy_grad,
            ..AnalyticGradients::default()
        };
        let r = run_gradient_suite(7, 10, &grads);
        assert!(!r.passed());
        assert!(r.max_log_policy > 0.5);
        assert!(r.max_supervised < GRADIENT_TOLERANCE);
    }
}
