//! The model abstraction: anything that turns a chat transcript into text.

pub mod remote;
pub mod scripted;
pub mod toy;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};
pub use scripted::{Script, ScriptRule, ScriptedBackend};
pub use toy::{ActionCatalog, Featurizer, ToyPolicyBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    /// 0 selects greedy decoding where the backend supports it.
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("empty message list")]
    EmptyRequest,
    #[error("script exhausted after {calls} call(s)")]
    ScriptExhausted { calls: usize },
    #[error("no script rule matches the request")]
    NoMatchingRule,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}")]
    Status { status: u16 },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

pub trait Backend {
    /// Returns one completion for `messages`. `messages` must be non-empty.
    fn complete(&mut self, messages: &[ChatMessage], decoding: &Decoding) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn complete(&mut self, messages: &[ChatMessage], decoding: &Decoding) -> Result<String, BackendError> {
        (**self).complete(messages, decoding)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&mut self, messages: &[ChatMessage], decoding: &Decoding) -> Result<String, BackendError> {
        (**self).complete(messages, decoding)
    }
}

/// Backend selection as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    /// Per-task scripts from the tasks file. `script` overrides the task's own script id.
    Scripted {
        #[serde(default)]
        script: Option<String>,
    },
    ToyPolicy {
        /// JSON parameters file; zero-initialised weights when absent.
        #[serde(default)]
        params: Option<String>,
        #[serde(default = "toy::default_dim")]
        dim: usize,
        candidates: Vec<String>,
    },
    Remote(RemoteConfig),
}
