//! Simulated task environments.
//!
//! Each environment exposes a static verification surface for the checker
//! ([`Environment::verify`], which only borrows immutably) and an execution
//! surface that accepts nothing but an [`ApprovedAction`]. Approved actions
//! can only be minted by the checker, so an action that was not accepted
//! cannot reach [`Environment::execute`].

pub mod os;
pub mod sql;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{Action, ActionKind, Feedback, FeedbackCategory};
use os::{OsError, OsState};
use sql::{DbError, DbSchema, DbState, Row, Statement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Db,
    Os,
}

impl EnvKind {
    /// Group label used in distribution reports.
    pub fn label(self) -> &'static str {
        match self {
            EnvKind::Db => "DB",
            EnvKind::Os => "OS",
        }
    }
}

/// An action the checker accepted. Not constructible outside this crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApprovedAction {
    action: Action,
}

impl ApprovedAction {
    pub(crate) fn new(action: Action) -> Self {
        Self { action }
    }

    pub fn action(&self) -> &Action {
        &self.action
    }
}

/// Full environment state, for snapshot comparisons.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EnvSnapshot {
    Db {
        state: DbState,
        last_output: Option<String>,
    },
    Os {
        state: OsState,
        last_output: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GoalPredicate {
    /// The query's result rows equal `expected` as a multiset.
    RowSetEquals {
        query: String,
        expected: Vec<Row>,
    },
    FileContentEquals {
        path: String,
        content: String,
    },
    /// The most recent execution output (or submitted answer) equals `expected`.
    OutputEquals {
        expected: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed goal predicate: {0}")]
pub struct GoalError(pub String);

pub trait Environment: Send {
    fn kind(&self) -> EnvKind;

    /// Changes whenever the environment executes an action.
    fn snapshot_id(&self) -> u64;

    fn snapshot(&self) -> EnvSnapshot;

    /// Whether `action` belongs to this environment's action space at all.
    fn is_valid_action(&self, action: &Action) -> bool;

    /// Static parse and name checks. Never executes anything.
    fn verify(&self, action: &Action) -> Feedback;

    /// Executes an approved action, returning its output text or an
    /// execution error message.
    fn execute(&mut self, action: &ApprovedAction) -> Result<String, String>;

    fn goal_check(&self, predicate: &GoalPredicate) -> Result<bool, GoalError>;

    /// One-line description shown as the initial observation.
    fn describe(&self) -> String;
}

fn unsupported(kind: ActionKind, env: EnvKind) -> Feedback {
    Feedback::reject(
        FeedbackCategory::ParseError,
        format!(
            "action kind `{}` is not supported by the {} environment",
            kind.as_str(),
            env.label()
        ),
    )
}

fn verify_answer(action: &Action) -> Feedback {
    if action.payload.trim().is_empty() {
        Feedback::reject(FeedbackCategory::ParseError, "empty answer")
    } else {
        Feedback::accept("answer accepted")
    }
}

fn sorted_rows(mut rows: Vec<Row>) -> Vec<Row> {
    rows.sort();
    rows
}

#[derive(Debug, Clone)]
pub struct DbEnv {
    state: DbState,
    last_output: Option<String>,
    version: u64,
}

impl DbEnv {
    pub fn new(state: DbState) -> Self {
        Self {
            state,
            last_output: None,
            version: 0,
        }
    }

    pub fn state(&self) -> &DbState {
        &self.state
    }

    pub fn schema(&self) -> &DbSchema {
        &self.state.schema
    }
}

impl Environment for DbEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Db
    }

    fn snapshot_id(&self) -> u64 {
        self.version
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Db {
            state: self.state.clone(),
            last_output: self.last_output.clone(),
        }
    }

    fn is_valid_action(&self, action: &Action) -> bool {
        matches!(action.kind, ActionKind::Sql | ActionKind::Answer)
    }

    fn verify(&self, action: &Action) -> Feedback {
        match action.kind {
            ActionKind::Sql => {}
            ActionKind::Answer => return verify_answer(action),
            other => return unsupported(other, EnvKind::Db),
        }
        let stmt = match sql::db_parse(&action.payload) {
            Ok(stmt) => stmt,
            Err(e) => return Feedback::reject(FeedbackCategory::ParseError, e.to_string()),
        };
        match sql::db_check(&self.state.schema, &stmt) {
            Ok(()) => Feedback::accept("query verified"),
            Err(e) => Feedback::reject(FeedbackCategory::SemanticError, e.to_string()),
        }
    }

    fn execute(&mut self, approved: &ApprovedAction) -> Result<String, String> {
        let action = approved.action();
        self.version += 1;
        let output = match action.kind {
            ActionKind::Answer => action.payload.trim().to_string(),
            _ => {
                let (next, out) = sql::db_execute(&self.state, &action.payload).map_err(|e| e.to_string())?;
                self.state = next;
                out.to_string()
            }
        };
        self.last_output = Some(output.clone());
        Ok(output)
    }

    fn describe(&self) -> String {
        let tables: Vec<String> = self
            .state
            .schema
            .tables
            .iter()
            .map(|(name, cols)| {
                let cols: Vec<String> = cols.iter().map(|c| format!("{} {}", c.name, c.ty)).collect();
                format!("{name}({})", cols.join(", "))
            })
            .collect();
        format!("Database tables: {}", tables.join("; "))
    }

    fn goal_check(&self, predicate: &GoalPredicate) -> Result<bool, GoalError> {
        match predicate {
            GoalPredicate::RowSetEquals { query, expected } => {
                let stmt = sql::db_parse(query).map_err(|e| GoalError(e.to_string()))?;
                if !matches!(stmt, Statement::Select { .. }) {
                    return Err(GoalError("row_set_equals needs a SELECT query".into()));
                }
                let (_, out) = sql::db_execute_statement(&self.state, &stmt).map_err(|e| GoalError(e.to_string()))?;
                match out {
                    sql::QueryOutput::Rows { rows, .. } => Ok(sorted_rows(rows) == sorted_rows(expected.clone())),
                    sql::QueryOutput::Affected(_) => unreachable!("SELECT yields rows"),
                }
            }
            GoalPredicate::OutputEquals { expected } => {
                Ok(self.last_output.as_deref().map(str::trim) == Some(expected.trim()))
            }
            GoalPredicate::FileContentEquals { .. } => Err(GoalError(
                "file_content_equals is not defined for the DB environment".into(),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OsEnv {
    state: OsState,
    last_output: Option<String>,
    version: u64,
}

impl OsEnv {
    pub fn new(state: OsState) -> Self {
        Self {
            state,
            last_output: None,
            version: 0,
        }
    }

    pub fn state(&self) -> &OsState {
        &self.state
    }
}

impl Environment for OsEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::Os
    }

    fn snapshot_id(&self) -> u64 {
        self.version
    }

    fn snapshot(&self) -> EnvSnapshot {
        EnvSnapshot::Os {
            state: self.state.clone(),
            last_output: self.last_output.clone(),
        }
    }

    fn is_valid_action(&self, action: &Action) -> bool {
        match action.kind {
            ActionKind::Answer => true,
            ActionKind::OsCommand => !matches!(os::parse_command(&action.payload), Err(OsError::UnknownCommand(_))),
            _ => false,
        }
    }

    fn verify(&self, action: &Action) -> Feedback {
        match action.kind {
            ActionKind::OsCommand => {}
            ActionKind::Answer => return verify_answer(action),
            other => return unsupported(other, EnvKind::Os),
        }
        let cmd = match os::parse_command(&action.payload) {
            Ok(cmd) => cmd,
            Err(e) => return Feedback::reject(FeedbackCategory::ParseError, e.to_string()),
        };
        match os::os_check(&self.state, &cmd) {
            Ok(()) => Feedback::accept("command verified"),
            Err(e) => Feedback::reject(FeedbackCategory::SemanticError, e.to_string()),
        }
    }

    fn execute(&mut self, approved: &ApprovedAction) -> Result<String, String> {
        let action = approved.action();
        self.version += 1;
        let output = match action.kind {
            ActionKind::Answer => action.payload.trim().to_string(),
            _ => {
                let (next, out) = os::os_execute(&self.state, &action.payload).map_err(|e| e.to_string())?;
                self.state = next;
                out
            }
        };
        self.last_output = Some(output.clone());
        Ok(output)
    }

    fn describe(&self) -> String {
        format!(
            "Shell in {} with {} file(s); commands: {}",
            self.state.cwd,
            self.state.files.len(),
            os::COMMANDS.join(", ")
        )
    }

    fn goal_check(&self, predicate: &GoalPredicate) -> Result<bool, GoalError> {
        match predicate {
            GoalPredicate::FileContentEquals { path, content } => {
                if !path.starts_with('/') {
                    return Err(GoalError(format!("path must be absolute: {path}")));
                }
                let path = os::normalize_path("/", path);
                Ok(self.state.files.get(&path) == Some(content))
            }
            GoalPredicate::OutputEquals { expected } => {
                Ok(self.last_output.as_deref().map(str::trim) == Some(expected.trim()))
            }
            GoalPredicate::RowSetEquals { .. } => {
                Err(GoalError("row_set_equals is not defined for the OS environment".into()))
            }
        }
    }
}

/// Initial environment contents, as stored in a tasks file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvFixture {
    Db {
        schema: DbSchema,
        #[serde(default)]
        rows: BTreeMap<String, Vec<Row>>,
    },
    Os {
        #[serde(default)]
        files: BTreeMap<String, String>,
        #[serde(default)]
        dirs: Vec<String>,
        #[serde(default)]
        cwd: Option<String>,
    },
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixture {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid fixture JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid database fixture: {0}")]
    Db(#[from] DbError),
    #[error("invalid OS fixture: {0}")]
    Os(String),
}

impl EnvFixture {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvFixture::Db { .. } => EnvKind::Db,
            EnvFixture::Os { .. } => EnvKind::Os,
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Builds a fresh environment in its initial state.
    pub fn build(&self) -> Result<Box<dyn Environment>, FixtureError> {
        Ok(match self {
            EnvFixture::Db { schema, rows } => Box::new(DbEnv::new(DbState::new(schema.clone(), rows.clone())?)),
            EnvFixture::Os { files, dirs, cwd } => {
                let mut state = OsState::with_files(files.iter().map(|(k, v)| (k.as_str(), v.clone())));
                for d in dirs {
                    let (next, _) = os::os_execute(&state, &format!("mkdir -p {}", shlex_quote(d)))
                        .map_err(|e| FixtureError::Os(e.to_string()))?;
                    state = next;
                }
                if let Some(cwd) = cwd {
                    let abs = os::normalize_path("/", cwd);
                    if !state.is_dir(&abs) {
                        return Err(FixtureError::Os(format!("cwd {cwd} is not a directory")));
                    }
                    state.cwd = abs;
                }
                Box::new(OsEnv::new(state))
            }
        })
    }
}

fn shlex_quote(s: &str) -> String {
    shlex::try_quote(s)
        .map(|c| c.into_owned())
        .unwrap_or_else(|_| s.to_string())
}
