//! Virtual file-map shell for the OS task.
//!
//! The state is a plain map of absolute paths; nothing here can reach the
//! host filesystem. Supported commands:
//!
//! | command                 | effect                                   |
//! |-------------------------|------------------------------------------|
//! | `ls [path]`             | directory entries, one per line, sorted  |
//! | `cat path`              | file contents                            |
//! | `echo words...`         | prints the words                         |
//! | `echo words... > path`  | writes `words\n` (`>>` appends)          |
//! | `wc -l path`            | number of lines                          |
//! | `grep pattern path`     | lines containing the fixed string        |
//! | `cd path`               | changes the working directory            |
//! | `mkdir [-p] path`       | creates a directory                      |
//! | `rm [-r] path`          | removes a file (or a directory with -r)  |
//!
//! Arguments are split with POSIX shell quoting rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const COMMANDS: &[&str] = &["ls", "cat", "echo", "wc", "grep", "cd", "mkdir", "rm"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OsError {
    #[error("unknown command: {0}")]
    UnknownCommand(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Execution(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OsState {
    pub files: BTreeMap<String, String>,
    #[serde(default)]
    pub dirs: BTreeSet<String>,
    pub cwd: String,
}

impl Default for OsState {
    fn default() -> Self {
        Self {
            files: BTreeMap::new(),
            dirs: BTreeSet::from(["/".to_string()]),
            cwd: "/".into(),
        }
    }
}

/// Resolves `path` against `cwd`, collapsing `.` and `..`.
pub fn normalize_path(cwd: &str, path: &str) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let joined;
    let full = if path.starts_with('/') {
        path
    } else {
        joined = format!("{cwd}/{path}");
        &joined
    };
    for seg in full.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop();
            }
            s => parts.push(s),
        }
    }
    format!("/{}", parts.join("/"))
}

fn parent_of(path: &str) -> String {
    match path.rfind('/') {
        Some(0) | None => "/".into(),
        Some(i) => path[..i].to_string(),
    }
}

impl OsState {
    /// Builds a state from a file map, creating every parent directory.
    pub fn with_files<I, P, C>(files: I) -> Self
    where
        I: IntoIterator<Item = (P, C)>,
        P: AsRef<str>,
        C: Into<String>,
    {
        let mut state = Self::default();
        for (path, content) in files {
            let path = normalize_path("/", path.as_ref());
            state.add_parents(&path);
            state.files.insert(path, content.into());
        }
        state
    }

    fn add_parents(&mut self, path: &str) {
        let mut p = parent_of(path);
        while self.dirs.insert(p.clone()) {
            p = parent_of(&p);
        }
    }

    pub fn resolve(&self, path: &str) -> String {
        normalize_path(&self.cwd, path)
    }

    pub fn is_dir(&self, path: &str) -> bool {
        self.dirs.contains(path)
    }

    pub fn is_file(&self, path: &str) -> bool {
        self.files.contains_key(path)
    }

    fn exists(&self, path: &str) -> bool {
        self.is_dir(path) || self.is_file(path)
    }

    fn children(&self, dir: &str) -> Vec<String> {
        let prefix = if dir == "/" { "/".to_string() } else { format!("{dir}/") };
        let direct = |p: &String| -> Option<String> {
            let rest = p.strip_prefix(&prefix)?;
            (!rest.is_empty() && !rest.contains('/')).then(|| rest.to_string())
        };
        let mut out: Vec<String> = self.files.keys().filter_map(direct).collect();
        out.extend(self.dirs.iter().filter_map(direct));
        out.sort();
        out
    }

    fn read(&self, raw: &str) -> Result<&str, OsError> {
        let path = self.resolve(raw);
        if self.is_dir(&path) {
            return Err(OsError::Execution(format!("{raw}: is a directory")));
        }
        self.files
            .get(&path)
            .map(String::as_str)
            .ok_or_else(|| OsError::Execution(format!("{raw}: no such file or directory")))
    }
}

/// A command that passed argument parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OsCommand {
    Ls(Option<String>),
    Cat(String),
    Echo {
        text: String,
        redirect: Option<(String, bool)>,
    },
    WcLines(String),
    Grep {
        pattern: String,
        path: String,
    },
    Cd(String),
    Mkdir {
        path: String,
        parents: bool,
    },
    Rm {
        path: String,
        recursive: bool,
    },
}

impl OsCommand {
    /// Paths that must already exist for the command to succeed.
    pub fn required_paths(&self) -> Vec<&str> {
        match self {
            OsCommand::Ls(Some(p))
            | OsCommand::Cat(p)
            | OsCommand::WcLines(p)
            | OsCommand::Grep { path: p, .. }
            | OsCommand::Cd(p)
            | OsCommand::Rm { path: p, .. } => vec![p],
            OsCommand::Ls(None) | OsCommand::Echo { .. } | OsCommand::Mkdir { .. } => vec![],
        }
    }
}

fn usage(text: &str) -> OsError {
    OsError::Usage(text.into())
}

/// Splits and validates a command line without looking at any state.
pub fn parse_command(line: &str) -> Result<OsCommand, OsError> {
    let words = shlex::split(line).ok_or_else(|| usage("unbalanced quotes"))?;
    let (name, args) = words.split_first().ok_or_else(|| usage("empty command"))?;
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let cmd = match (name.as_str(), args.as_slice()) {
        ("ls", []) => OsCommand::Ls(None),
        ("ls", [p]) => OsCommand::Ls(Some(p.to_string())),
        ("ls", _) => return Err(usage("ls [path]")),
        ("cat", [p]) => OsCommand::Cat(p.to_string()),
        ("cat", _) => return Err(usage("cat path")),
        ("echo", rest) => {
            let redirect_at = rest.iter().position(|w| *w == ">" || *w == ">>");
            match redirect_at {
                None => OsCommand::Echo {
                    text: rest.join(" "),
                    redirect: None,
                },
                Some(i) if i + 2 == rest.len() => OsCommand::Echo {
                    text: rest[..i].join(" "),
                    redirect: Some((rest[i + 1].to_string(), rest[i] == ">>")),
                },
                Some(_) => return Err(usage("echo text [> path | >> path]")),
            }
        }
        ("wc", ["-l", p]) => OsCommand::WcLines(p.to_string()),
        ("wc", _) => return Err(usage("wc -l path")),
        ("grep", [pat, p]) => OsCommand::Grep {
            pattern: pat.to_string(),
            path: p.to_string(),
        },
        ("grep", _) => return Err(usage("grep pattern path")),
        ("cd", [p]) => OsCommand::Cd(p.to_string()),
        ("cd", _) => return Err(usage("cd path")),
        ("mkdir", [p]) => OsCommand::Mkdir {
            path: p.to_string(),
            parents: false,
        },
        ("mkdir", ["-p", p]) => OsCommand::Mkdir {
            path: p.to_string(),
            parents: true,
        },
        ("mkdir", _) => return Err(usage("mkdir [-p] path")),
        ("rm", [p]) => OsCommand::Rm {
            path: p.to_string(),
            recursive: false,
        },
        ("rm", ["-r", p]) => OsCommand::Rm {
            path: p.to_string(),
            recursive: true,
        },
        ("rm", _) => return Err(usage("rm [-r] path")),
        (other, _) => return Err(OsError::UnknownCommand(other.to_string())),
    };
    Ok(cmd)
}

/// Checks a parsed command against the state without changing it.
pub fn os_check(state: &OsState, cmd: &OsCommand) -> Result<(), OsError> {
    for raw in cmd.required_paths() {
        if !state.exists(&state.resolve(raw)) {
            return Err(OsError::Execution(format!("{raw}: no such file or directory")));
        }
    }
    match cmd {
        OsCommand::Echo {
            redirect: Some((p, _)), ..
        } => {
            let path = state.resolve(p);
            if state.is_dir(&path) {
                return Err(OsError::Execution(format!("{p}: is a directory")));
            }
            if !state.is_dir(&parent_of(&path)) {
                return Err(OsError::Execution(format!("{p}: parent directory does not exist")));
            }
        }
        OsCommand::Mkdir { path, parents: false } => {
            let abs = state.resolve(path);
            if state.exists(&abs) {
                return Err(OsError::Execution(format!("{path}: already exists")));
            }
            if !state.is_dir(&parent_of(&abs)) {
                return Err(OsError::Execution(format!("{path}: parent directory does not exist")));
            }
        }
        OsCommand::Mkdir { path, parents: true } => {
            if state.is_file(&state.resolve(path)) {
                return Err(OsError::Execution(format!("{path}: is a file")));
            }
        }
        OsCommand::Cd(p) if !state.is_dir(&state.resolve(p)) => {
            return Err(OsError::Execution(format!("{p}: not a directory")));
        }
        OsCommand::Rm { path, recursive } => {
            let abs = state.resolve(path);
            if abs == "/" {
                return Err(OsError::Execution("refusing to remove /".into()));
            }
            if state.is_dir(&abs) && !recursive {
                return Err(OsError::Execution(format!("{path}: is a directory")));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Runs `cmd` against the virtual state. Output has any single trailing
/// newline removed.
pub fn os_execute(state: &OsState, cmd: &str) -> Result<(OsState, String), OsError> {
    let parsed = parse_command(cmd)?;
    os_check(state, &parsed)?;
    let mut next = state.clone();
    let output = match parsed {
        OsCommand::Ls(path) => {
            let abs = state.resolve(path.as_deref().unwrap_or("."));
            if state.is_file(&abs) {
                abs.rsplit('/').next().unwrap_or_default().to_string()
            } else {
                state.children(&abs).join("\n")
            }
        }
        OsCommand::Cat(p) => state.read(&p)?.to_string(),
        OsCommand::Echo { text, redirect: None } => text,
        OsCommand::Echo {
            text,
            redirect: Some((p, append)),
        } => {
            let path = state.resolve(&p);
            let entry = next.files.entry(path).or_default();
            if !append {
                entry.clear();
            }
            entry.push_str(&text);
            entry.push('\n');
            String::new()
        }
        OsCommand::WcLines(p) => state.read(&p)?.lines().count().to_string(),
        OsCommand::Grep { pattern, path } => state
            .read(&path)?
            .lines()
            .filter(|l| l.contains(pattern.as_str()))
            .collect::<Vec<_>>()
            .join("\n"),
        OsCommand::Cd(p) => {
            next.cwd = state.resolve(&p);
            String::new()
        }
        OsCommand::Mkdir { path, .. } => {
            let abs = state.resolve(&path);
            next.add_parents(&abs);
            next.dirs.insert(abs);
            String::new()
        }
        OsCommand::Rm { path, .. } => {
            let abs = state.resolve(&path);
            let prefix = format!("{abs}/");
            next.files.retain(|k, _| *k != abs && !k.starts_with(&prefix));
            next.dirs.retain(|k| *k != abs && !k.starts_with(&prefix));
            if !next.is_dir(&next.cwd) {
                next.cwd = "/".into();
            }
            String::new()
        }
    };
    let output = output.strip_suffix('\n').map(str::to_string).unwrap_or(output);
    Ok((next, output))
}
