//! Exposes the learner's softmax-linear policy as a chat backend.
//!
//! The policy chooses among a fixed catalog of candidate command lines
//! (`"sql SELECT ..."`, `"os ls /"`, ...). Its state features are a hashed
//! bag of words over the observation part of the prompt.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Backend, BackendError, ChatMessage, Decoding, Role};
use crate::learner::{argmax_action, policy_probs, EnvState, PolicyParams};
use crate::trajectory::Action;

pub(crate) fn default_dim() -> usize {
    32
}

/// Marker that precedes the current observation in action prompts.
pub const OBSERVATION_MARKER: &str = "Observation:";

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Hashed bag-of-words features. Index 0 is a constant bias; the remaining
/// `dim − 1` buckets are 1.0 when any token hashes into them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    dim: usize,
}

impl Featurizer {
    pub fn new(dim: usize) -> Result<Self, BackendError> {
        if dim < 2 {
            return Err(BackendError::Config(format!("feature dimension {dim} < 2")));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, text: &str) -> EnvState {
        let mut x = vec![0.0; self.dim];
        x[0] = 1.0;
        let tokens = text
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase);
        for t in tokens {
            let bucket = 1 + (fnv1a(t.as_bytes()) % (self.dim as u64 - 1)) as usize;
            x[bucket] = 1.0;
        }
        EnvState::new(x)
    }

    /// Features of the text after the last observation marker of the last
    /// user message (or of the whole message when there is no marker).
    pub fn features_of_prompt(&self, messages: &[ChatMessage]) -> EnvState {
        let text = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let obs = text
            .rfind(OBSERVATION_MARKER)
            .map(|i| &text[i + OBSERVATION_MARKER.len()..])
            .unwrap_or(text);
        self.features(obs)
    }
}

/// Candidate command lines the toy policy chooses among.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCatalog {
    candidates: Vec<String>,
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ActionCatalog {
    pub fn new(candidates: Vec<String>) -> Result<Self, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::Config("empty action catalog".into()));
        }
        Ok(Self { candidates })
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.candidates.get(i).map(String::as_str)
    }

    /// Index of the candidate equal to `action`'s command line, whitespace-insensitive.
    pub fn index_of(&self, action: &Action) -> Option<usize> {
        let line = squash(&action.command_line());
        self.candidates.iter().position(|c| squash(c) == line)
    }
}

#[derive(Debug, Clone)]
pub struct ToyPolicyBackend {
    params: PolicyParams,
    catalog: ActionCatalog,
    featurizer: Featurizer,
    rng: ChaCha8Rng,
}

impl ToyPolicyBackend {
    pub fn new(params: PolicyParams, catalog: ActionCatalog, seed: u64) -> Result<Self, BackendError> {
        if params.n_actions() != catalog.len() {
            return Err(BackendError::Config(format!(
                "policy has {} actions but the catalog has {} candidates",
                params.n_actions(),
                catalog.len()
            )));
        }
        let featurizer = Featurizer::new(params.dim())?;
        Ok(Self {
            params,
            catalog,
            featurizer,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    /// Chooses an action index: argmax (lowest index on ties) at
    /// temperature 0, otherwise a draw from the tempered distribution.
    pub fn choose(&mut self, state: &EnvState, decoding: &Decoding) -> Result<usize, BackendError> {
        let probs = policy_probs(&self.params, state).map_err(|e| BackendError::Config(e.to_string()))?;
        if decoding.temperature <= 0.0 {
            return Ok(argmax_action(&probs));
        }
        let tempered: Vec<f64> = probs.iter().map(|p| p.powf(1.0 / decoding.temperature)).collect();
        let dist = WeightedIndex::new(&tempered).map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        Ok(dist.sample(&mut self.rng))
    }
}

impl Backend for ToyPolicyBackend {
    fn complete(&mut self, messages: &[ChatMessage], decoding: &Decoding) -> Result<String, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        let state = self.featurizer.features_of_prompt(messages);
        let choice = self.choose(&state, decoding)?;
        let line = self.catalog.get(choice).expect("catalog sized to policy");
        Ok(format!("THOUGHT: policy choice {choice} ACTION: {line}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ActionKind;

    fn catalog() -> ActionCatalog {
        ActionCatalog::new(
            ["sql SELECT 1", "sql SELECT 2", "sql SELECT 3", "sql SELECT 4"]
                .map(String::from)
                .to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn argmax_tie_break_is_lowest_index() {
        // Rows 1 and 3 share the largest bias weight.
        let mut w = vec![0.0; 4 * 4];
        w[4] = 2.0;
        w[12] = 2.0;
        let params = PolicyParams::from_weights(4, 4, w).unwrap();
        let mut b = ToyPolicyBackend::new(params, catalog(), 0).unwrap();
        let out = b
            .complete(&[ChatMessage::user("Observation: hi")], &Decoding::default())
            .unwrap();
        assert_eq!(out, "THOUGHT: policy choice 1 ACTION: sql SELECT 2");
    }

    #[test]
    fn sampling_is_seeded() {
        let params = PolicyParams::zeros(4, 4);
        let decoding = Decoding {
            temperature: 1.0,
            ..Decoding::default()
        };
        let draw = |seed| {
            let mut b = ToyPolicyBackend::new(params.clone(), catalog(), seed).unwrap();
            (0..20)
                .map(|_| b.complete(&[ChatMessage::user("x")], &decoding).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert!(draw(3).iter().any(|r| !r.ends_with("SELECT 1")));
    }

    #[test]
    fn catalog_lookup_and_shape_checks() {
        let c = catalog();
        let a = Action::new(ActionKind::Sql, "SELECT   3", "");
        assert_eq!(c.index_of(&a), Some(2));
        assert!(ToyPolicyBackend::new(PolicyParams::zeros(3, 4), c, 0).is_err());
        assert!(ActionCatalog::new(vec![]).is_err());
    }

    #[test]
    fn features_are_deterministic_binary_presence() {
        let f = Featurizer::new(8).unwrap();
        let a = f.features("no such table t2");
        assert_eq!(a, f.features("No such TABLE t2"));
        assert_eq!(a.features[0], 1.0);
        assert!(a.features.iter().all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(a, f.features("table no such t2 t2"));
        let msgs = [ChatMessage::user("Task: x\nObservation: no such table t2")];
        assert_eq!(f.features_of_prompt(&msgs), a);
    }
}
