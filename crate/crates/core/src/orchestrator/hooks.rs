//! Actor-critic learner hooks for the toy policy.

use serde::{Deserialize, Serialize};

use super::{LearnerHooks, StepEvent};
use crate::backend::{ActionCatalog, Featurizer};
use crate::learner::{
    actor_update, critic_update, reflection_update, td_error, CriticParams, EnvState, Hyperparams, LearnerError,
    PolicyParams, ReflectionEvent,
};
use crate::memory::Reflection;
use crate::trajectory::Step;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HookStats {
    pub actor_updates: usize,
    pub critic_updates: usize,
    pub reflection_updates: usize,
    /// Steps or reflections whose action is not in the catalog.
    pub skipped: usize,
    pub sum_abs_td_error: f64,
}

/// Applies TD(0) actor and critic updates on executed steps and reflection
/// updates on reflection events. States are featurized observations.
#[derive(Debug, Clone)]
pub struct ActorCriticHooks {
    pub policy: PolicyParams,
    pub critic: CriticParams,
    pub hyper: Hyperparams,
    pub featurizer: Featurizer,
    pub catalog: ActionCatalog,
    pub stats: HookStats,
}

impl ActorCriticHooks {
    pub fn new(
        policy: PolicyParams,
        critic: CriticParams,
        hyper: Hyperparams,
        catalog: ActionCatalog,
    ) -> Result<Self, LearnerError> {
        hyper.validate()?;
        if policy.n_actions() != catalog.len() {
            return Err(LearnerError::DimensionMismatch {
                expected: catalog.len(),
                got: policy.n_actions(),
            });
        }
        if critic.dim() != policy.dim() {
            return Err(LearnerError::DimensionMismatch {
                expected: policy.dim(),
                got: critic.dim(),
            });
        }
        let featurizer = Featurizer::new(policy.dim()).map_err(|e| LearnerError::InvalidHyperparams(e.to_string()))?;
        Ok(Self {
            policy,
            critic,
            hyper,
            featurizer,
            catalog,
            stats: HookStats::default(),
        })
    }
}

impl LearnerHooks for ActorCriticHooks {
    fn on_step(&mut self, event: &StepEvent<'_>) -> Result<(), LearnerError> {
        let s = self.featurizer.features(&event.step.observation.text);
        let next = self.featurizer.features(&event.next_observation.text);
        let s_next = if event.terminal {
            EnvState::terminal(next.features)
        } else {
            next
        };
        let delta = td_error(&self.critic, &s, &s_next, event.step.reward, &self.hyper)?;
        self.stats.sum_abs_td_error += delta.abs();
        match self.catalog.index_of(&event.step.action) {
            Some(a) => {
                self.policy = actor_update(&self.policy, &s, a, delta, &self.hyper)?;
                self.stats.actor_updates += 1;
            }
            None => self.stats.skipped += 1,
        }
        self.critic = critic_update(&self.critic, &s, delta, &self.hyper)?;
        self.stats.critic_updates += 1;
        Ok(())
    }

    fn on_reflection(&mut self, step: &Step, reflection: &Reflection) -> Result<(), LearnerError> {
        if reflection.source_step != step.observation.turn_index {
            return Err(LearnerError::ReflectionMismatch(format!(
                "reflection on turn {} applied to turn {}",
                reflection.source_step, step.observation.turn_index
            )));
        }
        let Some(rejected) = self.catalog.index_of(&step.action) else {
            self.stats.skipped += 1;
            return Ok(());
        };
        let corrective = reflection
            .corrective_action
            .as_ref()
            .and_then(|a| self.catalog.index_of(a))
            .filter(|&c| c != rejected);
        let event = ReflectionEvent {
            state: self.featurizer.features(&step.observation.text),
            rejected,
            corrective,
        };
        self.policy = reflection_update(&self.policy, &event, &self.hyper)?;
        self.stats.reflection_updates += 1;
        Ok(())
    }
}
