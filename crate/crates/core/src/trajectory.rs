//! Episode records shared by every other module: observations, thoughts,
//! actions, checker feedback, steps, trajectories and the five-way
//! execution-result taxonomy.

use std::fmt;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

/// Version tag written into every trajectory log line.
pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

/// Whitespace-delimited token count.
///
/// This is the single unit used for context accounting and for memory
/// rendering budgets. It is not a model tokenizer.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub env_snapshot_id: u64,
    pub turn_index: usize,
}

/// Intermediate reasoning emitted before an action. Empty when CoT is off.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThoughtTrace {
    pub steps: Vec<String>,
}

impl ThoughtTrace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Sql,
    OsCommand,
    Answer,
    /// Produced only when no action could be extracted from the backend output.
    Noop,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Sql => "sql",
            ActionKind::OsCommand => "os",
            ActionKind::Answer => "answer",
            ActionKind::Noop => "noop",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    /// The extracted command.
    pub payload: String,
    /// Backend output, unmodified.
    pub raw: String,
}

impl Action {
    pub fn new(kind: ActionKind, payload: impl Into<String>, raw: impl Into<String>) -> Self {
        Self {
            kind,
            payload: payload.into(),
            raw: raw.into(),
        }
    }

    pub fn noop(raw: impl Into<String>) -> Self {
        Self::new(ActionKind::Noop, "", raw)
    }

    /// `"<kind> <payload>"`, the form that follows an `ACTION:` marker.
    pub fn command_line(&self) -> String {
        format!("{} {}", self.kind.as_str(), self.payload)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackCategory {
    ParseError,
    SemanticError,
    ExecutionError,
    Ok,
}

impl FeedbackCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackCategory::ParseError => "parse_error",
            FeedbackCategory::SemanticError => "semantic_error",
            FeedbackCategory::ExecutionError => "execution_error",
            FeedbackCategory::Ok => "ok",
        }
    }
}

impl fmt::Display for FeedbackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checker output. The verdict is derived from the category, so the
/// `accept iff ok` invariant holds for every value built through the
/// constructors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub verdict: Verdict,
    pub category: FeedbackCategory,
    pub message: String,
}

impl Feedback {
    pub fn accept(message: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Accept,
            category: FeedbackCategory::Ok,
            message: message.into(),
        }
    }

    /// Rejection with a failure category. Passing `Ok` is a logic error.
    pub fn reject(category: FeedbackCategory, message: impl Into<String>) -> Self {
        debug_assert_ne!(category, FeedbackCategory::Ok);
        Self {
            verdict: Verdict::Reject,
            category,
            message: message.into(),
        }
    }

    pub fn is_accept(&self) -> bool {
        self.verdict == Verdict::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: Observation,
    pub thought: ThoughtTrace,
    pub action: Action,
    pub feedback: Feedback,
    pub reward: f64,
    /// Whether the action reached the environment. Only possible after a
    /// checker accept; a failure during execution then shows up as an
    /// `execution_error` rejection.
    pub executed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecutionResult {
    Completed,
    ContextLimitExceeded,
    InvalidFormat,
    InvalidAction,
    TaskLimitExceeded,
}

impl ExecutionResult {
    /// Row order of the distribution table.
    pub const ALL: [ExecutionResult; 5] = [
        ExecutionResult::Completed,
        ExecutionResult::ContextLimitExceeded,
        ExecutionResult::InvalidFormat,
        ExecutionResult::InvalidAction,
        ExecutionResult::TaskLimitExceeded,
    ];

    /// Label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            ExecutionResult::Completed => "Completed",
            ExecutionResult::ContextLimitExceeded => "CLE",
            ExecutionResult::InvalidFormat => "Invalid Format",
            ExecutionResult::InvalidAction => "Invalid Action",
            ExecutionResult::TaskLimitExceeded => "TLE",
        }
    }
}

impl fmt::Display for ExecutionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Episode limits consulted by the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub max_turns: usize,
    pub max_context_tokens: usize,
    pub max_checker_retries: usize,
    /// Terminate on unparseable output or invalid actions instead of
    /// treating them as ordinary rejections.
    pub strict_format: bool,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_turns: 10,
            max_context_tokens: 4096,
            max_checker_retries: 10,
            strict_format: true,
        }
    }
}

/// What happened on the most recent turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnOutcome {
    /// Accepted by the checker and executed successfully.
    Executed,
    /// Accepted by the checker, failed during execution.
    ExecutionFailed,
    /// Rejected by the checker.
    Rejected,
    /// No action could be extracted from the backend output.
    MalformedOutput,
    /// The action is outside the environment's action space.
    InvalidAction,
}

/// A trajectory that has not been assigned a result yet.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeProgress {
    pub task_id: String,
    pub steps: Vec<Step>,
    pub token_count: usize,
    pub goal_reached: bool,
    pub last_turn: Option<TurnOutcome>,
    pub consecutive_rejections: usize,
}

impl EpisodeProgress {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            ..Self::default()
        }
    }

    /// Assigns the result. The only way to obtain a [`Trajectory`].
    pub fn finish(self, result: ExecutionResult) -> Trajectory {
        Trajectory {
            task_id: self.task_id,
            steps: self.steps,
            result,
            token_count: self.token_count,
        }
    }
}

/// Classifies the terminating event of an episode.
///
/// Returns `None` while the episode should keep running. When several
/// conditions hold on the same turn, precedence is
/// `Completed > InvalidFormat > InvalidAction > ContextLimitExceeded >
/// TaskLimitExceeded`. Exhausting the checker retry budget counts as a
/// task-limit termination.
pub fn classify_execution_result(progress: &EpisodeProgress, limits: &Limits) -> Option<ExecutionResult> {
    if progress.goal_reached {
        return Some(ExecutionResult::Completed);
    }
    if limits.strict_format {
        match progress.last_turn {
            Some(TurnOutcome::MalformedOutput) => return Some(ExecutionResult::InvalidFormat),
            Some(TurnOutcome::InvalidAction) => return Some(ExecutionResult::InvalidAction),
            _ => {}
        }
    }
    if progress.token_count > limits.max_context_tokens {
        return Some(ExecutionResult::ContextLimitExceeded);
    }
    if progress.steps.len() >= limits.max_turns || progress.consecutive_rejections > limits.max_checker_retries {
        return Some(ExecutionResult::TaskLimitExceeded);
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<Step>,
    pub result: ExecutionResult,
    pub token_count: usize,
}

impl Trajectory {
    pub fn turns(&self) -> usize {
        self.steps.len()
    }

    /// True when every executed step was accepted by the checker first.
    pub fn respects_checker_protocol(&self) -> bool {
        self.steps.iter().all(|s| {
            !s.executed
                || matches!(
                    s.feedback.category,
                    FeedbackCategory::Ok | FeedbackCategory::ExecutionError
                )
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    schema_version: u32,
    #[serde(flatten)]
    trajectory: Trajectory,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: unsupported schema version {found}")]
    Version { line: usize, found: u32 },
}

/// Writes one JSON object per trajectory, one per line.
pub fn write_trajectory_log<W: Write>(mut out: W, trajectories: &[Trajectory]) -> Result<(), LogError> {
    for trajectory in trajectories {
        let record = TrajectoryRecord {
            schema_version: TRAJECTORY_SCHEMA_VERSION,
            trajectory: trajectory.clone(),
        };
        serde_json::to_writer(&mut out, &record).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_log<R: BufRead>(input: R) -> Result<Vec<Trajectory>, LogError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|source| LogError::Json { line: i + 1, source })?;
        if record.schema_version != TRAJECTORY_SCHEMA_VERSION {
            return Err(LogError::Version {
                line: i + 1,
                found: record.schema_version,
            });
        }
        out.push(record.trajectory);
    }
    Ok(out)
}
