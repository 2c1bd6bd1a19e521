//! Chat-completions client.
//!
//! Request body (field names are fixed):
//!
//! ```json
//! {"model":"m","messages":[{"role":"user","content":"..."}],"temperature":0.0,"max_tokens":512}
//! ```
//!
//! The response must carry `choices[0].message.content`. Transport errors,
//! HTTP 429 and HTTP 5xx are retried with capped exponential backoff; any
//! other status fails immediately.

use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatMessage, Decoding};

pub const ENV_ENDPOINT: &str = "CMAT_REMOTE_ENDPOINT";
pub const ENV_MODEL: &str = "CMAT_REMOTE_MODEL";
pub const ENV_API_KEY: &str = "CMAT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

pub fn render_remote_request(model: &str, messages: &[ChatMessage], decoding: &Decoding) -> ChatRequest {
    ChatRequest {
        model: model.to_string(),
        messages: messages.to_vec(),
        temperature: decoding.temperature,
        max_tokens: decoding.max_tokens,
    }
}

pub fn parse_remote_request(body: &str) -> Result<ChatRequest, serde_json::Error> {
    serde_json::from_str(body)
}

/// Extracts `choices[0].message.content` from a response body.
pub fn parse_remote_response(body: &str) -> Result<String, BackendError> {
    let resp: ChatResponse = serde_json::from_str(body).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
    resp.choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::InvalidResponse("no choices[0].message.content".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay_ms: 250,
            max_delay_ms: 4_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base · 2^retry`, capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

fn default_auth_env() -> String {
    ENV_API_KEY.to_string()
}

fn default_timeout_ms() -> u64 {
    60_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions endpoint.
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl RemoteConfig {
    /// Fills an empty endpoint or model from `CMAT_REMOTE_ENDPOINT` / `CMAT_REMOTE_MODEL`.
    pub fn with_env_defaults(mut self) -> Self {
        if self.endpoint.is_empty() {
            self.endpoint = std::env::var(ENV_ENDPOINT).unwrap_or_default();
        }
        if self.model.is_empty() {
            self.model = std::env::var(ENV_MODEL).unwrap_or_default();
        }
        self
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    attempts: u32,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let config = config.with_env_defaults();
        if config.endpoint.is_empty() {
            return Err(BackendError::Config(format!("no endpoint (set {ENV_ENDPOINT})")));
        }
        if config.model.is_empty() {
            return Err(BackendError::Config(format!("no model (set {ENV_MODEL})")));
        }
        let api_key = std::env::var(&config.auth_env).ok().filter(|k| !k.is_empty());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        Ok(Self {
            config,
            api_key,
            agent,
            attempts: 0,
        })
    }

    /// Attempts made by the most recent call.
    pub fn last_attempts(&self) -> u32 {
        self.attempts
    }

    fn send_once(&self, body: &ChatRequest) -> Result<String, (bool, BackendError)> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let text = resp.body_mut().read_to_string().map_err(|e| {
                    (
                        true,
                        BackendError::Transport {
                            attempts: 0,
                            message: e.to_string(),
                        },
                    )
                })?;
                parse_remote_response(&text).map_err(|e| (false, e))
            }
            Err(ureq::Error::StatusCode(status)) => {
                let retryable = status == 429 || (500..600).contains(&status);
                Err((retryable, BackendError::Status { status }))
            }
            Err(e) => Err((
                true,
                BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                },
            )),
        }
    }
}

impl Backend for RemoteBackend {
    fn complete(&mut self, messages: &[ChatMessage], decoding: &Decoding) -> Result<String, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        let body = render_remote_request(&self.config.model, messages, decoding);
        let policy = self.config.retry;
        self.attempts = 0;
        loop {
            self.attempts += 1;
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err((retryable, err)) => {
                    let retry = self.attempts - 1;
                    if !retryable || retry >= policy.max_retries {
                        return Err(match err {
                            BackendError::Transport { message, .. } => BackendError::Transport {
                                attempts: self.attempts,
                                message,
                            },
                            other => other,
                        });
                    }
                    let delay = policy.delay(retry);
                    warn!(
                        "remote attempt {} failed ({err}); retrying in {} ms",
                        self.attempts,
                        delay.as_millis()
                    );
                    thread::sleep(delay);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    use proptest::prelude::*;

    use crate::backend::Role;

    /// Serves one canned (status, body) per connection and records request bodies.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), seen)
    }

    fn config(endpoint: String, max_retries: u32) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            model: "tiny".into(),
            auth_env: "CMAT_TEST_NO_SUCH_VAR".into(),
            retry: RetryPolicy {
                max_retries,
                base_delay_ms: 1,
                max_delay_ms: 2,
            },
            timeout_ms: 5_000,
        }
    }

    #[test]
    fn request_shape_is_exact() {
        let body = render_remote_request("m", &[ChatMessage::user("hi")], &Decoding::default());
        assert_eq!(
            serde_json::to_string(&body).unwrap(),
            r#"{"model":"m","messages":[{"role":"user","content":"hi"}],"temperature":0.0,"max_tokens":512}"#
        );
        assert_eq!(body.messages.len(), 1);
        assert_eq!(body.temperature, 0.0);
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"ACTION: sql SELECT 1"}}]}"#;
        let (url, seen) = mock_server(vec![(500, "{}".into()), (503, "{}".into()), (200, ok.into())]);
        let mut b = RemoteBackend::new(config(url, 2)).unwrap();
        let out = b.complete(&[ChatMessage::user("go")], &Decoding::default()).unwrap();
        assert_eq!(out, "ACTION: sql SELECT 1");
        assert_eq!(b.last_attempts(), 3);
        let bodies = seen.lock().unwrap();
        assert_eq!(bodies.len(), 3);
        let parsed = parse_remote_request(&bodies[0]).unwrap();
        assert_eq!(parsed.model, "tiny");
        assert_eq!(parsed.messages[0].role, Role::User);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, seen) = mock_server(vec![(400, "{}".into()), (200, "{}".into())]);
        let mut b = RemoteBackend::new(config(url, 3)).unwrap();
        let err = b
            .complete(&[ChatMessage::user("go")], &Decoding::default())
            .unwrap_err();
        assert_eq!(err, BackendError::Status { status: 400 });
        assert_eq!(b.last_attempts(), 1);
        assert_eq!(seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn unreachable_endpoint_respects_retry_budget() {
        // Bind then drop to get a port nobody listens on.
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let mut b = RemoteBackend::new(config(format!("http://127.0.0.1:{port}/v1/chat/completions"), 2)).unwrap();
        let err = b
            .complete(&[ChatMessage::user("go")], &Decoding::default())
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport { attempts: 3, .. }), "{err:?}");
        assert_eq!(b.last_attempts(), 3);
    }

    #[test]
    fn backoff_is_bounded() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay_ms: 100,
            max_delay_ms: 1_000,
        };
        let delays: Vec<u128> = (0..6).map(|r| p.delay(r).as_millis()).collect();
        assert_eq!(delays, [100, 200, 400, 800, 1000, 1000]);
        assert_eq!(p.delay(200).as_millis(), 1000);
    }

    #[test]
    fn response_parsing() {
        assert!(parse_remote_response(r#"{"choices":[]}"#).is_err());
        assert!(parse_remote_response("nope").is_err());
        assert_eq!(
            parse_remote_response(r#"{"choices":[{"message":{"content":"x"}}]}"#).unwrap(),
            "x"
        );
    }

    #[test]
    fn missing_endpoint_is_config_error() {
        let mut c = config(String::new(), 0);
        c.endpoint.clear();
        std::env::remove_var(ENV_ENDPOINT);
        assert!(matches!(RemoteBackend::new(c), Err(BackendError::Config(_))));
    }

    fn arb_message() -> impl Strategy<Value = ChatMessage> {
        (
            prop_oneof![Just(Role::System), Just(Role::User), Just(Role::Assistant)],
            "\\PC{1,40}",
        )
            .prop_map(|(role, content)| ChatMessage { role, content })
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(
            messages in prop::collection::vec(arb_message(), 1..6),
            temperature in 0.0f64..2.0,
            max_tokens in 1u32..4096,
            model in "[a-z0-9.-]{1,20}",
        ) {
            let decoding = Decoding { temperature, max_tokens };
            let req = render_remote_request(&model, &messages, &decoding);
            let text = serde_json::to_string(&req).unwrap();
            prop_assert_eq!(parse_remote_request(&text).unwrap(), req);
        }
    }
}
