//! Task suites: tasks, their initial environments and per-task scripts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Script;
use crate::envs::{EnvFixture, Environment, FixtureError, GoalError, GoalPredicate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    /// Key into the suite's `environments` table.
    pub environment: String,
    pub goal: GoalPredicate,
    /// Report column; defaults to the environment kind label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Key into the suite's `scripts` table, for the scripted backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    #[serde(default)]
    pub environments: BTreeMap<String, EnvFixture>,
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub scripts: BTreeMap<String, Script>,
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read tasks file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid tasks file {path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("task suite has no tasks")]
    Empty,
    #[error("duplicate task id {0}")]
    DuplicateTask(String),
    #[error("task {task}: unknown environment {environment}")]
    UnknownEnvironment { task: String, environment: String },
    #[error("task {task}: unknown script {script}")]
    UnknownScript { task: String, script: String },
    #[error("task {task}: no script configured")]
    MissingScript { task: String },
    #[error("environment {environment}: {source}")]
    Fixture { environment: String, source: FixtureError },
    #[error("task {task}: {source}")]
    Goal { task: String, source: GoalError },
}

impl TaskSuite {
    /// Reads and validates a suite file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: shown.clone(),
            source,
        })?;
        let suite: Self = serde_json::from_str(&text).map_err(|source| SuiteError::Json { path: shown, source })?;
        suite.validate()?;
        Ok(suite)
    }

    /// Checks that ids are unique, every reference resolves, every fixture
    /// builds and every goal predicate can be evaluated.
    pub fn validate(&self) -> Result<(), SuiteError> {
        if self.tasks.is_empty() {
            return Err(SuiteError::Empty);
        }
        let mut seen = BTreeSet::new();
        for task in &self.tasks {
            if !seen.insert(task.id.as_str()) {
                return Err(SuiteError::DuplicateTask(task.id.clone()));
            }
            if let Some(script) = &task.script {
                if !self.scripts.contains_key(script) {
                    return Err(SuiteError::UnknownScript {
                        task: task.id.clone(),
                        script: script.clone(),
                    });
                }
            }
            let env = self.build_env(task)?;
            env.goal_check(&task.goal).map_err(|source| SuiteError::Goal {
                task: task.id.clone(),
                source,
            })?;
        }
        Ok(())
    }

    /// A fresh environment in the task's initial state.
    pub fn build_env(&self, task: &TaskSpec) -> Result<Box<dyn Environment>, SuiteError> {
        let fixture = self
            .environments
            .get(&task.environment)
            .ok_or_else(|| SuiteError::UnknownEnvironment {
                task: task.id.clone(),
                environment: task.environment.clone(),
            })?;
        fixture.build().map_err(|source| SuiteError::Fixture {
            environment: task.environment.clone(),
            source,
        })
    }

    /// The script for `task`; `override_id` takes precedence over the task's own.
    pub fn script_for(&self, task: &TaskSpec, override_id: Option<&str>) -> Result<&Script, SuiteError> {
        let id = override_id
            .or(task.script.as_deref())
            .ok_or_else(|| SuiteError::MissingScript { task: task.id.clone() })?;
        self.scripts.get(id).ok_or_else(|| SuiteError::UnknownScript {
            task: task.id.clone(),
            script: id.to_string(),
        })
    }

    /// Report column of `task`.
    pub fn group_of(&self, task: &TaskSpec) -> String {
        task.group.clone().unwrap_or_else(|| {
            self.environments
                .get(&task.environment)
                .map(|f| f.kind().label().to_string())
                .unwrap_or_else(|| task.environment.clone())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SUITE: &str = r#"{
        "environments": {
            "db": {"kind": "db", "schema": {"t": [{"name": "id", "type": "int"}]}, "rows": {"t": [[1], [2]]}},
            "fs": {"kind": "os", "files": {"/a.txt": "hi\n"}}
        },
        "tasks": [
            {"id": "q1", "instruction": "count", "environment": "db",
             "goal": {"type": "output_equals", "expected": "[(2)]"}, "script": "s"},
            {"id": "f1", "instruction": "write", "environment": "fs",
             "goal": {"type": "file_content_equals", "path": "/b.txt", "content": "x\n"}}
        ],
        "scripts": {"s": ["ACTION: sql SELECT COUNT(*) FROM t"]}
    }"#;

    fn suite() -> TaskSuite {
        serde_json::from_str(SUITE).unwrap()
    }

    #[test]
    fn valid_suite() {
        let s = suite();
        s.validate().unwrap();
        assert_eq!(s.group_of(&s.tasks[0]), "DB");
        assert_eq!(s.group_of(&s.tasks[1]), "OS");
        assert!(s.script_for(&s.tasks[0], None).is_ok());
        assert!(matches!(
            s.script_for(&s.tasks[1], None),
            Err(SuiteError::MissingScript { .. })
        ));
    }

    #[test]
    fn unresolvable_references() {
        let mut s = suite();
        s.tasks[0].environment = "nope".into();
        assert!(matches!(s.validate(), Err(SuiteError::UnknownEnvironment { .. })));
        let mut s = suite();
        s.tasks[1].id = "q1".into();
        assert!(matches!(s.validate(), Err(SuiteError::DuplicateTask(_))));
        let mut s = suite();
        s.tasks[0].script = Some("zz".into());
        assert!(matches!(s.validate(), Err(SuiteError::UnknownScript { .. })));
    }

    #[test]
    fn malformed_goal_is_rejected() {
        let mut s = suite();
        s.tasks[0].goal = GoalPredicate::RowSetEquals {
            query: "SELECT * FROM missing".into(),
            expected: vec![],
        };
        assert!(matches!(s.validate(), Err(SuiteError::Goal { .. })));
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = TaskSuite::load("/no/such/tasks.json").unwrap_err();
        assert!(err.to_string().contains("/no/such/tasks.json"));
    }
}
