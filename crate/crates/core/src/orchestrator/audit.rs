//! Protocol auditing: records every verify and execute call on an environment.

use std::cell::RefCell;

use crate::envs::{ApprovedAction, EnvKind, EnvSnapshot, Environment, GoalError, GoalPredicate};
use crate::trajectory::{Action, Feedback};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditEvent {
    Verified { action: Action, accepted: bool },
    Executed { action: Action },
}

/// Wraps an environment and logs the checker/execution call sequence.
pub struct AuditedEnv<E: Environment> {
    inner: E,
    events: RefCell<Vec<AuditEvent>>,
}

impl<E: Environment> AuditedEnv<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            events: RefCell::new(Vec::new()),
        }
    }

    pub fn events(&self) -> Vec<AuditEvent> {
        self.events.borrow().clone()
    }

    pub fn executions(&self) -> usize {
        self.events
            .borrow()
            .iter()
            .filter(|e| matches!(e, AuditEvent::Executed { .. }))
            .count()
    }

    /// Executions not immediately preceded by an accepting verification of
    /// the same action.
    pub fn violations(&self) -> usize {
        let events = self.events.borrow();
        events
            .iter()
            .enumerate()
            .filter(|(i, e)| match e {
                AuditEvent::Executed { action } => !matches!(
                    i.checked_sub(1).map(|j| &events[j]),
                    Some(AuditEvent::Verified { action: v, accepted: true }) if v == action
                ),
                AuditEvent::Verified { .. } => false,
            })
            .count()
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment> Environment for AuditedEnv<E> {
    fn kind(&self) -> EnvKind {
        self.inner.kind()
    }

    fn snapshot_id(&self) -> u64 {
        self.inner.snapshot_id()
    }

    fn snapshot(&self) -> EnvSnapshot {
        self.inner.snapshot()
    }

    fn is_valid_action(&self, action: &Action) -> bool {
        self.inner.is_valid_action(action)
    }

    fn verify(&self, action: &Action) -> Feedback {
        let feedback = self.inner.verify(action);
        self.events.borrow_mut().push(AuditEvent::Verified {
            action: action.clone(),
            accepted: feedback.is_accept(),
        });
        feedback
    }

    fn execute(&mut self, action: &ApprovedAction) -> Result<String, String> {
        self.events.get_mut().push(AuditEvent::Executed {
            action: action.action().clone(),
        });
        self.inner.execute(action)
    }

    fn goal_check(&self, predicate: &GoalPredicate) -> Result<bool, GoalError> {
        self.inner.goal_check(predicate)
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}
