use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatMessage, Decoding};

/// One response channel of a script.
///
/// A rule matches when `when_contains` is absent or occurs somewhere in the
/// request transcript. Each rule keeps its own cursor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub when_contains: Option<String>,
    pub responses: Vec<String>,
    /// Keep returning the last response once the list is used up.
    #[serde(default)]
    pub repeat_last: bool,
}

/// Either a flat list of responses returned in order, or a list of rules
/// tried top to bottom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Script {
    Sequence(Vec<String>),
    Rules { rules: Vec<ScriptRule> },
}

impl Script {
    fn into_rules(self) -> Vec<ScriptRule> {
        match self {
            Script::Sequence(responses) => vec![ScriptRule {
                when_contains: None,
                responses,
                repeat_last: false,
            }],
            Script::Rules { rules } => rules,
        }
    }
}

/// Deterministic canned-response backend. Owns a cursor, so use one
/// instance per episode.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    cursors: Vec<usize>,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let rules = script.into_rules();
        let cursors = vec![0; rules.len()];
        Self {
            rules,
            cursors,
            calls: 0,
        }
    }

    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script::Sequence(responses.into_iter().map(Into::into).collect()))
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl Backend for ScriptedBackend {
    fn complete(&mut self, messages: &[ChatMessage], _decoding: &Decoding) -> Result<String, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        let transcript: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let idx = self
            .rules
            .iter()
            .position(|r| {
                r.when_contains
                    .as_deref()
                    .is_none_or(|needle| transcript.contains(needle))
            })
            .ok_or(BackendError::NoMatchingRule)?;
        let rule = &self.rules[idx];
        let cursor = self.cursors[idx];
        let response = match rule.responses.get(cursor) {
            Some(r) => {
                self.cursors[idx] += 1;
                r.clone()
            }
            None if rule.repeat_last && !rule.responses.is_empty() => rule.responses[rule.responses.len() - 1].clone(),
            None => return Err(BackendError::ScriptExhausted { calls: self.calls }),
        };
        self.calls += 1;
        Ok(response)
    }
}
