//! The three-role episode loop.
//!
//! The User role is the task instruction plus environment observations, the
//! Assistant role is a [`Backend`] prompted through [`cot_generate`], and the
//! Checker role is [`checker_verify`], a static verifier that runs before
//! anything reaches the environment. Rejected actions cost a turn and, when
//! enabled, produce a reflection stored in long-term memory.

pub mod audit;
pub mod grammar;
pub mod hooks;
pub mod suite;

use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ChatMessage, Decoding};
use crate::envs::{ApprovedAction, EnvKind, Environment};
use crate::learner::LearnerError;
use crate::memory::{self, LongTermMemory, MemoryError, Reflection, ShortTermMemory};
use crate::trajectory::{
    classify_execution_result, count_tokens, Action, ActionKind, EpisodeProgress, Feedback, FeedbackCategory, Limits,
    Observation, Step, ThoughtTrace, Trajectory, TurnOutcome,
};

pub use audit::{AuditEvent, AuditedEnv};
pub use hooks::{ActorCriticHooks, HookStats};
pub use suite::{SuiteError, TaskSpec, TaskSuite};

fn nz(n: usize) -> NonZeroUsize {
    NonZeroUsize::new(n).expect("nonzero default")
}

/// Rewards assigned to checker feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardMapping {
    pub accept: f64,
    pub reject: f64,
    pub completion_bonus: f64,
}

impl Default for RewardMapping {
    fn default() -> Self {
        Self {
            accept: 1.0,
            reject: -0.1,
            completion_bonus: 1.0,
        }
    }
}

/// Reward for one step. Execution failures after an accept count as rejections.
pub fn feedback_to_reward(f: &Feedback, completed: bool, mapping: &RewardMapping) -> f64 {
    let base = if f.is_accept() { mapping.accept } else { mapping.reject };
    if completed {
        base + mapping.completion_bonus
    } else {
        base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleConfig {
    pub max_turns: NonZeroUsize,
    pub max_context_tokens: NonZeroUsize,
    pub max_checker_retries: usize,
    pub cot_enabled: bool,
    pub reflection_enabled: bool,
    /// Terminate on unparseable output or out-of-space actions.
    pub strict_format: bool,
    /// Token budget for the memory block of each prompt.
    pub context_budget_tokens: NonZeroUsize,
    pub stm_capacity: NonZeroUsize,
    pub decoding: Decoding,
    pub reward: RewardMapping,
}

impl Default for RoleConfig {
    fn default() -> Self {
        let limits = Limits::default();
        Self {
            max_turns: nz(limits.max_turns),
            max_context_tokens: nz(limits.max_context_tokens),
            max_checker_retries: limits.max_checker_retries,
            cot_enabled: true,
            reflection_enabled: true,
            strict_format: limits.strict_format,
            context_budget_tokens: nz(256),
            stm_capacity: nz(4),
            decoding: Decoding::default(),
            reward: RewardMapping::default(),
        }
    }
}

impl RoleConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            max_turns: self.max_turns.get(),
            max_context_tokens: self.max_context_tokens.get(),
            max_checker_retries: self.max_checker_retries,
            strict_format: self.strict_format,
        }
    }
}

/// System prompt of the Assistant role.
pub fn assistant_system_prompt(env: EnvKind, cot_enabled: bool) -> String {
    let kind = match env {
        EnvKind::Db => "sql",
        EnvKind::Os => "os",
    };
    let format = if cot_enabled {
        format!(
            "First reason step by step, starting each step with `{}`. Then give exactly one action as `{} {kind} <command>` or `{} answer <text>`.",
            grammar::THOUGHT_MARKER,
            grammar::ACTION_MARKER,
            grammar::ACTION_MARKER
        )
    } else {
        format!(
            "Reply with exactly one action as `{} {kind} <command>` or `{} answer <text>`.",
            grammar::ACTION_MARKER,
            grammar::ACTION_MARKER
        )
    };
    format!(
        "You are the Assistant working in a {} environment. A Checker verifies every action before it runs. {format}",
        env.label()
    )
}

/// The Assistant prompt: system instructions, then the task, the memory
/// block and the current observation in one user message.
pub fn action_prompt(
    env: EnvKind,
    instruction: &str,
    context: &str,
    obs: &Observation,
    cot_enabled: bool,
) -> Vec<ChatMessage> {
    let mut user = format!("Task: {instruction}\n");
    if !context.is_empty() {
        user.push_str("Memory:\n");
        user.push_str(context);
        user.push('\n');
    }
    user.push_str(crate::backend::toy::OBSERVATION_MARKER);
    user.push(' ');
    user.push_str(&obs.text);
    vec![
        ChatMessage::system(assistant_system_prompt(env, cot_enabled)),
        ChatMessage::user(user),
    ]
}

/// One Assistant generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub thought: ThoughtTrace,
    pub action: Action,
    /// Tokens in the prompt plus the reply.
    pub tokens: usize,
}

pub fn cot_generate<B: Backend + ?Sized>(
    backend: &mut B,
    env: EnvKind,
    instruction: &str,
    obs: &Observation,
    context: &str,
    cfg: &RoleConfig,
) -> Result<Generation, BackendError> {
    let messages = action_prompt(env, instruction, context, obs, cfg.cot_enabled);
    let reply = backend.complete(&messages, &cfg.decoding)?;
    let tokens = messages.iter().map(|m| count_tokens(&m.content)).sum::<usize>() + count_tokens(&reply);
    let (thought, action) = grammar::parse_assistant_output(&reply, cfg.cot_enabled);
    Ok(Generation {
        thought,
        action,
        tokens,
    })
}

/// Static verification of `action` against `env`. Never executes it.
pub fn checker_verify(action: &Action, env: &dyn Environment) -> Feedback {
    if action.kind == ActionKind::Noop {
        return Feedback::reject(FeedbackCategory::ParseError, "no action found after the ACTION: marker");
    }
    env.verify(action)
}

/// Verifies `action` and, on accept, issues the token required for execution.
pub fn checker_approve(action: &Action, env: &dyn Environment) -> Result<(ApprovedAction, Feedback), Feedback> {
    let feedback = checker_verify(action, env);
    if feedback.is_accept() {
        Ok((ApprovedAction::new(action.clone()), feedback))
    } else {
        Err(feedback)
    }
}

/// An executed step handed to the learner.
#[derive(Debug, Clone, Copy)]
pub struct StepEvent<'a> {
    pub step: &'a Step,
    pub next_observation: &'a Observation,
    /// Whether the episode ended with this step.
    pub terminal: bool,
}

/// Learning callbacks fired by [`run_episode`].
pub trait LearnerHooks {
    /// Called for every step whose action was accepted and executed.
    fn on_step(&mut self, _event: &StepEvent<'_>) -> Result<(), LearnerError> {
        Ok(())
    }

    /// Called for every reflection stored during the episode.
    fn on_reflection(&mut self, _step: &Step, _reflection: &Reflection) -> Result<(), LearnerError> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoHooks;

impl LearnerHooks for NoHooks {}

impl<H: LearnerHooks + ?Sized> LearnerHooks for &mut H {
    fn on_step(&mut self, event: &StepEvent<'_>) -> Result<(), LearnerError> {
        (**self).on_step(event)
    }

    fn on_reflection(&mut self, step: &Step, reflection: &Reflection) -> Result<(), LearnerError> {
        (**self).on_reflection(step, reflection)
    }
}

/// Short- and long-term memory used by one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memories {
    pub short_term: ShortTermMemory,
    pub long_term: LongTermMemory,
}

impl Memories {
    pub fn new(stm_capacity: NonZeroUsize, long_term: LongTermMemory) -> Self {
        Self {
            short_term: ShortTermMemory::new(stm_capacity),
            long_term,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortKind {
    Backend,
    Goal,
    Learner,
    Setup,
}

/// An episode stopped by an infrastructure failure. Not an execution result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Error)]
#[error("task {task_id} aborted at turn {turn} ({kind:?}): {message}")]
pub struct EpisodeAbort {
    pub task_id: String,
    pub turn: usize,
    pub kind: AbortKind,
    pub message: String,
    pub steps: Vec<Step>,
}

impl EpisodeAbort {
    fn new(progress: &EpisodeProgress, kind: AbortKind, message: impl Into<String>) -> Self {
        Self {
            task_id: progress.task_id.clone(),
            turn: progress.steps.len(),
            kind,
            message: message.into(),
            steps: progress.steps.clone(),
        }
    }
}

fn observe(text: String, env: &dyn Environment, turn: usize) -> Observation {
    let text = if text.trim().is_empty() {
        "(no output)".to_string()
    } else {
        text
    };
    Observation {
        text,
        env_snapshot_id: env.snapshot_id(),
        turn_index: turn,
    }
}

/// Runs one task to termination.
///
/// Each turn renders the memory context, asks the backend for an action,
/// and passes it through the checker. Accepted actions are executed and fed
/// to [`LearnerHooks::on_step`]; rejections cost a turn and, with reflection
/// enabled, add one reflection to long-term memory. Every step, accepted or
/// not, enters short-term memory. The episode ends when
/// [`classify_execution_result`] assigns a result.
pub fn run_episode<B, H>(
    task: &TaskSpec,
    backend: &mut B,
    env: &mut dyn Environment,
    memories: &mut Memories,
    hooks: &mut H,
    cfg: &RoleConfig,
) -> Result<Trajectory, EpisodeAbort>
where
    B: Backend + ?Sized,
    H: LearnerHooks + ?Sized,
{
    let limits = cfg.limits();
    let mut progress = EpisodeProgress::new(task.id.clone());
    let mut obs = observe(env.describe(), env, 0);

    loop {
        let turn = progress.steps.len();
        let context = memory::render_context(&memories.short_term, &memories.long_term, cfg.context_budget_tokens);
        let generation = cot_generate(backend, env.kind(), &task.instruction, &obs, &context, cfg)
            .map_err(|e| EpisodeAbort::new(&progress, AbortKind::Backend, e.to_string()))?;
        progress.token_count += generation.tokens;
        let action = generation.action;

        let (outcome, feedback, output) = if action.kind == ActionKind::Noop {
            (TurnOutcome::MalformedOutput, checker_verify(&action, env), None)
        } else if !env.is_valid_action(&action) {
            (TurnOutcome::InvalidAction, checker_verify(&action, env), None)
        } else {
            match checker_approve(&action, env) {
                Ok((approved, feedback)) => match env.execute(&approved) {
                    Ok(out) => (TurnOutcome::Executed, feedback, Some(out)),
                    Err(msg) => (
                        TurnOutcome::ExecutionFailed,
                        Feedback::reject(FeedbackCategory::ExecutionError, msg),
                        None,
                    ),
                },
                Err(feedback) => (TurnOutcome::Rejected, feedback, None),
            }
        };
        let executed = matches!(outcome, TurnOutcome::Executed | TurnOutcome::ExecutionFailed);

        if outcome == TurnOutcome::Executed {
            progress.goal_reached = env
                .goal_check(&task.goal)
                .map_err(|e| EpisodeAbort::new(&progress, AbortKind::Goal, e.to_string()))?;
        }
        if feedback.is_accept() {
            progress.consecutive_rejections = 0;
        } else {
            progress.consecutive_rejections += 1;
        }

        let reward = feedback_to_reward(&feedback, progress.goal_reached, &cfg.reward);
        let next_text = match &output {
            Some(out) => out.clone(),
            None if executed => format!("Execution failed: {}", feedback.message),
            None => format!(
                "Checker rejected the action ({}): {}",
                feedback.category, feedback.message
            ),
        };
        let step = Step {
            observation: obs,
            thought: generation.thought,
            action,
            feedback,
            reward,
            executed,
        };

        let reflection = if !step.feedback.is_accept() && cfg.reflection_enabled {
            let r = memory::reflect(&step.action, &step.feedback, &memories.short_term, turn, backend).map_err(
                |e| match e {
                    MemoryError::Backend(e) => EpisodeAbort::new(&progress, AbortKind::Backend, e.to_string()),
                    other => EpisodeAbort::new(&progress, AbortKind::Setup, other.to_string()),
                },
            )?;
            progress.token_count += count_tokens(&r.render());
            memories.long_term.push(r.clone());
            Some(r)
        } else {
            None
        };
        memories.short_term.push(memory::StepSummary::new(
            &step.observation,
            &step.action,
            &step.feedback,
        ));

        progress.steps.push(step);
        progress.last_turn = Some(outcome);
        let result = classify_execution_result(&progress, &limits);
        let next_obs = observe(next_text, env, turn + 1);

        let step = progress.steps.last().expect("step just pushed");
        let hook_result = if let Some(r) = &reflection {
            hooks.on_reflection(step, r)
        } else {
            Ok(())
        }
        .and_then(|()| {
            if step.executed {
                hooks.on_step(&StepEvent {
                    step,
                    next_observation: &next_obs,
                    terminal: result.is_some(),
                })
            } else {
                Ok(())
            }
        });
        hook_result.map_err(|e| EpisodeAbort::new(&progress, AbortKind::Learner, e.to_string()))?;

        if let Some(result) = result {
            return Ok(progress.finish(result));
        }
        obs = next_obs;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Script, ScriptRule, ScriptedBackend};
    use crate::envs::sql::{Column, ColumnType, DbSchema, Value};
    use crate::envs::{EnvFixture, GoalPredicate};
    use crate::trajectory::ExecutionResult;
    use std::collections::BTreeMap;

    fn fixture() -> EnvFixture {
        let mut tables = BTreeMap::new();
        tables.insert(
            "t".to_string(),
            vec![
                Column::new("id", ColumnType::Int),
                Column::new("name", ColumnType::Text),
            ],
        );
        let mut rows = BTreeMap::new();
        rows.insert(
            "t".to_string(),
            vec![
                vec![Value::Int(1), Value::Text("a".into())],
                vec![Value::Int(2), Value::Text("b".into())],
            ],
        );
        EnvFixture::Db {
            schema: DbSchema { tables },
            rows,
        }
    }

    fn count_task() -> TaskSpec {
        TaskSpec {
            id: "count".into(),
            instruction: "How many rows are in t?".into(),
            environment: "db".into(),
            goal: GoalPredicate::OutputEquals {
                expected: "[(2)]".into(),
            },
            group: None,
            script: None,
        }
    }

    fn run(
        backend: &mut ScriptedBackend,
        cfg: &RoleConfig,
        ltm: LongTermMemory,
    ) -> (Result<Trajectory, EpisodeAbort>, Memories) {
        let mut env = fixture().build().unwrap();
        let mut memories = Memories::new(cfg.stm_capacity, ltm);
        let out = run_episode(&count_task(), backend, env.as_mut(), &mut memories, &mut NoHooks, cfg);
        (out, memories)
    }

    fn fail_then_correct_script() -> Script {
        Script::Rules {
            rules: vec![
                ScriptRule {
                    when_contains: Some(memory::REFLECTION_MARKER.into()),
                    responses: vec!["Table t2 does not exist; count rows of t.".into()],
                    repeat_last: true,
                },
                ScriptRule {
                    when_contains: Some(memory::LESSON_PREFIX.into()),
                    responses: vec!["THOUGHT: use t ACTION: sql SELECT COUNT(*) FROM t".into()],
                    repeat_last: true,
                },
                ScriptRule {
                    when_contains: None,
                    responses: vec!["THOUGHT: count t2 ACTION: sql SELECT COUNT(*) FROM t2".into()],
                    repeat_last: true,
                },
            ],
        }
    }

    #[test]
    fn rewards_follow_mapping() {
        let m = RewardMapping::default();
        assert_eq!(feedback_to_reward(&Feedback::accept("ok"), false, &m), 1.0);
        assert_eq!(
            feedback_to_reward(&Feedback::reject(FeedbackCategory::ParseError, "x"), false, &m),
            -0.1
        );
        assert_eq!(feedback_to_reward(&Feedback::accept("ok"), true, &m), 2.0);
    }

    #[test]
    fn checker_cases() {
        let env = fixture().build().unwrap();
        let sql = |q: &str| Action::new(ActionKind::Sql, q, "");
        let f = checker_verify(&sql("SELEC * FROM t"), env.as_ref());
        assert_eq!(f.category, FeedbackCategory::ParseError);
        let f = checker_verify(&sql("SELECT * FROM missing_table"), env.as_ref());
        assert_eq!(f.category, FeedbackCategory::SemanticError);
        let f = checker_verify(&sql("SELECT id FROM t"), env.as_ref());
        assert!(f.is_accept());
        let f = checker_verify(&Action::noop("hello"), env.as_ref());
        assert_eq!(f.category, FeedbackCategory::ParseError);
    }

    #[test]
    fn checker_never_mutates() {
        let env = fixture().build().unwrap();
        let before = env.snapshot();
        for q in [
            "DELETE FROM t",
            "INSERT INTO t VALUES (3, 'c')",
            "SELEC",
            "UPDATE t SET id = 0",
        ] {
            checker_verify(&Action::new(ActionKind::Sql, q, ""), env.as_ref());
        }
        assert_eq!(env.snapshot(), before);
    }

    #[test]
    fn cot_generate_parses_reply() {
        let mut b = ScriptedBackend::sequence(["THOUGHT: need row count ACTION: sql SELECT COUNT(*) FROM t"]);
        let obs = Observation {
            text: "ready".into(),
            env_snapshot_id: 0,
            turn_index: 0,
        };
        let g = cot_generate(&mut b, EnvKind::Db, "count", &obs, "", &RoleConfig::default()).unwrap();
        assert_eq!(g.thought.steps, ["need row count"]);
        assert_eq!(g.action.payload, "SELECT COUNT(*) FROM t");
        assert!(g.tokens > 0);
    }

    #[test]
    fn prompt_mentions_reasoning_only_with_cot() {
        assert!(assistant_system_prompt(EnvKind::Db, true).contains(grammar::THOUGHT_MARKER));
        assert!(!assistant_system_prompt(EnvKind::Db, false).contains(grammar::THOUGHT_MARKER));
    }

    #[test]
    fn always_correct_backend_completes_in_one_turn() {
        let mut b = ScriptedBackend::sequence(["ACTION: sql SELECT COUNT(*) FROM t"]);
        let (out, memories) = run(&mut b, &RoleConfig::default(), LongTermMemory::unbounded());
        let traj = out.unwrap();
        assert_eq!(traj.result, ExecutionResult::Completed);
        assert_eq!(traj.turns(), 1);
        assert!(memories.long_term.is_empty());
        assert_eq!(traj.steps[0].reward, 2.0);
    }

    #[test]
    fn fail_then_correct_with_reflection() {
        let mut b = ScriptedBackend::new(fail_then_correct_script());
        let (out, memories) = run(&mut b, &RoleConfig::default(), LongTermMemory::unbounded());
        let traj = out.unwrap();
        assert_eq!(traj.result, ExecutionResult::Completed);
        assert_eq!(traj.turns(), 2);
        assert_eq!(memories.long_term.len(), 1);
        assert_eq!(traj.steps[0].feedback.category, FeedbackCategory::SemanticError);
        assert!(traj.respects_checker_protocol());
    }

    #[test]
    fn repeated_failure_without_reflection() {
        let cfg = RoleConfig {
            reflection_enabled: false,
            ..RoleConfig::default()
        };
        let mut b = ScriptedBackend::new(fail_then_correct_script());
        let (out, memories) = run(&mut b, &cfg, LongTermMemory::unbounded());
        let traj = out.unwrap();
        assert_eq!(traj.result, ExecutionResult::TaskLimitExceeded);
        assert_eq!(traj.turns(), cfg.max_turns.get());
        assert!(memories.long_term.is_empty());
        let first = &traj.steps[0].action;
        assert!(traj.steps.iter().all(|s| &s.action == first));
    }

    #[test]
    fn retry_budget_ends_episode() {
        let cfg = RoleConfig {
            reflection_enabled: false,
            max_checker_retries: 2,
            ..RoleConfig::default()
        };
        let mut b = ScriptedBackend::new(fail_then_correct_script());
        let traj = run(&mut b, &cfg, LongTermMemory::unbounded()).0.unwrap();
        assert_eq!(traj.result, ExecutionResult::TaskLimitExceeded);
        assert_eq!(traj.turns(), 3);
    }

    #[test]
    fn malformed_output_is_invalid_format() {
        let mut b = ScriptedBackend::sequence(["I am not sure.", "Use the ACTION marker."]);
        let traj = run(&mut b, &RoleConfig::default(), LongTermMemory::unbounded())
            .0
            .unwrap();
        assert_eq!(traj.result, ExecutionResult::InvalidFormat);
        assert_eq!(traj.turns(), 1);
        assert_eq!(traj.steps[0].action.raw, "I am not sure.");
    }

    #[test]
    fn wrong_action_space_is_invalid_action() {
        let mut b = ScriptedBackend::sequence(["ACTION: os ls /", "no reflection"]);
        let traj = run(&mut b, &RoleConfig::default(), LongTermMemory::unbounded())
            .0
            .unwrap();
        assert_eq!(traj.result, ExecutionResult::InvalidAction);
    }

    #[test]
    fn context_limit() {
        let cfg = RoleConfig {
            max_context_tokens: nz(5),
            ..RoleConfig::default()
        };
        let mut b = ScriptedBackend::sequence(["ACTION: sql SELECT id FROM t"]);
        let traj = run(&mut b, &cfg, LongTermMemory::unbounded()).0.unwrap();
        assert_eq!(traj.result, ExecutionResult::ContextLimitExceeded);
    }

    #[test]
    fn backend_failure_aborts() {
        let mut b = ScriptedBackend::sequence(["ACTION: sql SELECT id FROM t"]);
        let abort = run(&mut b, &RoleConfig::default(), LongTermMemory::unbounded())
            .0
            .unwrap_err();
        assert_eq!(abort.kind, AbortKind::Backend);
        assert_eq!(abort.turn, 1);
        assert_eq!(abort.steps.len(), 1);
    }
}
