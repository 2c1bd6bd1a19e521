//! Short-term context window and long-term reflection store.
//!
//! Both memories evict oldest-first once their capacity is reached. A
//! [`LongTermMemory`] shared across concurrently running episodes must be
//! serialized by the caller; within an episode it has a single writer.

use std::collections::VecDeque;
use std::io::{self, BufRead, Write};
use std::num::NonZeroUsize;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, ChatMessage, Decoding};
use crate::orchestrator::grammar;
use crate::trajectory::{count_tokens, Action, Feedback, Observation, Verdict};

/// Prefix of a rendered long-term memory entry.
pub const LESSON_PREFIX: &str = "Lesson:";

/// Opening line of every reflection request.
pub const REFLECTION_MARKER: &str = "Reflect on the rejected action below.";

const REFLECTION_SYSTEM_PROMPT: &str = "You are the Assistant reviewing one of your own actions that the \
Checker rejected. Reply with one short corrective rule that would have avoided the error. If you know the \
corrected command, append it as `ACTION: <kind> <command>`.";

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("reflection requires a rejected step")]
    NotRejected,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("long-term memory i/o: {0}")]
    Io(#[from] io::Error),
    #[error("long-term memory line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

/// Compact record of one step kept in the short-term window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub turn: usize,
    pub observation: String,
    pub action: String,
    pub verdict: Verdict,
    pub feedback: String,
}

impl StepSummary {
    pub fn new(x: &Observation, a: &Action, f: &Feedback) -> Self {
        Self {
            turn: x.turn_index,
            observation: x.text.clone(),
            action: a.command_line(),
            verdict: f.verdict,
            feedback: format!("{}: {}", f.category, f.message),
        }
    }

    pub fn render(&self) -> String {
        let verdict = match self.verdict {
            Verdict::Accept => "accepted",
            Verdict::Reject => "rejected",
        };
        format!(
            "Step {}: observed {} | action {} | {verdict} ({})",
            self.turn,
            one_line(&self.observation),
            one_line(&self.action),
            one_line(&self.feedback)
        )
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortTermMemory {
    window: VecDeque<StepSummary>,
    capacity: NonZeroUsize,
}

impl ShortTermMemory {
    pub fn new(capacity: NonZeroUsize) -> Self {
        Self {
            window: VecDeque::with_capacity(capacity.get()),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity.get()
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &StepSummary> {
        self.window.iter()
    }

    pub fn push(&mut self, summary: StepSummary) {
        if self.window.len() == self.capacity.get() {
            self.window.pop_front();
        }
        self.window.push_back(summary);
    }

    /// Appends a summary of `(x, a, f)` as the newest entry.
    pub fn update(mut self, x: &Observation, a: &Action, f: &Feedback) -> Self {
        self.push(StepSummary::new(x, a, f));
        self
    }

    pub fn render(&self) -> String {
        self.window
            .iter()
            .map(StepSummary::render)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    /// Turn index of the step reflected on.
    pub source_step: usize,
    pub error_class: String,
    pub corrective_rule: String,
    /// Corrected action, when the reflection names one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrective_action: Option<Action>,
    pub created_at_turn: usize,
}

impl Reflection {
    pub fn render(&self) -> String {
        let mut line = format!(
            "{LESSON_PREFIX} [{}] {}",
            self.error_class,
            one_line(&self.corrective_rule)
        );
        if let Some(a) = &self.corrective_action {
            line.push_str(&format!(" (try: {})", one_line(&a.command_line())));
        }
        line
    }
}

/// Builds the fixed reflection request for a rejected action.
pub fn reflection_prompt(a: &Action, f: &Feedback, mem: &ShortTermMemory) -> Vec<ChatMessage> {
    let recent = mem.render();
    let recent = if recent.is_empty() {
        "(none)".to_string()
    } else {
        recent
    };
    vec![
        ChatMessage::system(REFLECTION_SYSTEM_PROMPT),
        ChatMessage::user(format!(
            "{REFLECTION_MARKER}\nAction: {}\nChecker verdict: {} ({})\nRecent steps:\n{recent}",
            a.command_line(),
            f.category,
            f.message
        )),
    ]
}

/// Self-reflection on a rejected step.
///
/// `error_class` mirrors the feedback category. `corrective_rule` is the
/// backend reply up to any `ACTION:` marker; a parseable action after the
/// marker becomes `corrective_action`.
pub fn reflect<B: Backend + ?Sized>(
    a: &Action,
    f: &Feedback,
    mem: &ShortTermMemory,
    turn: usize,
    backend: &mut B,
) -> Result<Reflection, MemoryError> {
    if f.verdict != Verdict::Reject {
        return Err(MemoryError::NotRejected);
    }
    let reply = backend.complete(&reflection_prompt(a, f, mem), &Decoding::default())?;
    let (rule, corrective_action) = match reply.find(grammar::ACTION_MARKER) {
        Some(i) => {
            let (_, action) = grammar::parse_assistant_output(&reply[i..], false);
            let action = (action.kind != crate::trajectory::ActionKind::Noop).then_some(action);
            (reply[..i].trim().to_string(), action)
        }
        None => (reply.trim().to_string(), None),
    };
    Ok(Reflection {
        source_step: turn,
        error_class: f.category.to_string(),
        corrective_rule: rule,
        corrective_action,
        created_at_turn: turn,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LongTermMemory {
    entries: VecDeque<Reflection>,
    capacity: Option<NonZeroUsize>,
}

impl LongTermMemory {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn bounded(capacity: NonZeroUsize) -> Self {
        Self {
            entries: VecDeque::new(),
            capacity: Some(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Append order, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Reflection> {
        self.entries.iter()
    }

    pub fn push(&mut self, r: Reflection) {
        if let Some(cap) = self.capacity {
            if self.entries.len() == cap.get() {
                self.entries.pop_front();
            }
        }
        self.entries.push_back(r);
    }

    pub fn update(mut self, r: Reflection) -> Self {
        self.push(r);
        self
    }

    /// One JSON reflection per line, oldest first.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), MemoryError> {
        for r in &self.entries {
            serde_json::to_writer(&mut out, r).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a file written by [`save`](Self::save), applying this memory's
    /// capacity as entries are appended.
    pub fn load<R: BufRead>(input: R, capacity: Option<NonZeroUsize>) -> Result<Self, MemoryError> {
        let mut mem = Self {
            entries: VecDeque::new(),
            capacity,
        };
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|source| MemoryError::Json { line: i + 1, source })?;
            mem.push(r);
        }
        Ok(mem)
    }
}

/// Prompt context: reflections newest-first, then the short-term window
/// oldest-first, one entry per line. Whole entries are dropped once the
/// next one would exceed `budget_tokens`.
pub fn render_context(stm: &ShortTermMemory, ltm: &LongTermMemory, budget_tokens: NonZeroUsize) -> String {
    let entries = ltm
        .entries
        .iter()
        .rev()
        .map(Reflection::render)
        .chain(stm.window.iter().map(StepSummary::render));
    let mut used = 0;
    let mut out = Vec::new();
    for entry in entries {
        let cost = count_tokens(&entry);
        if used + cost > budget_tokens.get() {
            break;
        }
        used += cost;
        out.push(entry);
    }
    out.join("\n")
}
