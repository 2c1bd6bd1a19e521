//! The `cmat` command line: run episodes, train the toy policy, check
//! gradients and score text pairs.
//!
//! Every command writes its outputs under `--out` with fixed file names and
//! returns exit status 0 exactly when it printed no error diagnostic.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    ActionCatalog, Backend, BackendError, BackendKind, RemoteBackend, RemoteConfig, ScriptedBackend, ToyPolicyBackend,
};
use crate::learner::gradcheck::{run_gradient_suite, AnalyticGradients, GradientReport};
use crate::learner::{CriticParams, Hyperparams, LearnerError, PolicyParams};
use crate::memory::{LongTermMemory, MemoryError, Reflection};
use crate::metrics::{self, DistributionReport, MetricError, MetricReport, PairScores};
use crate::orchestrator::{
    run_episode, ActorCriticHooks, EpisodeAbort, HookStats, LearnerHooks, Memories, NoHooks, RoleConfig, StepEvent,
    SuiteError, TaskSpec, TaskSuite,
};
use crate::trajectory::{write_trajectory_log, ExecutionResult, LogError, Step, Trajectory};

pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const ABORTS_FILE: &str = "aborts.jsonl";
pub const REFLECTIONS_FILE: &str = "reflections.jsonl";
pub const DISTRIBUTION_JSON: &str = "distribution.json";
pub const DISTRIBUTION_CSV: &str = "distribution.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const TRAINING_FILE: &str = "training.jsonl";
pub const GRADIENTS_FILE: &str = "gradients.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(
    name = "cmat",
    version,
    about = "Checker-in-the-loop multi-agent episodes, toy learner and reports"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every task of the configured suite once.
    Run(RunArgs),
    /// Train the toy policy with actor-critic and reflection updates.
    Train(TrainArgs),
    /// Compare analytic gradients with finite differences.
    CheckGradients(GradientArgs),
    /// Score candidate lines against reference lines.
    EvalMetrics(MetricArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn enabled(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Scripted,
    Toy,
    Remote,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum concurrent episodes (0 = one per core).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum)]
    pub reflection: Option<Toggle>,
    #[arg(long, value_enum)]
    pub cot: Option<Toggle>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Output directory; overrides the configured one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Overrides the configured number of passes over the suite.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct GradientArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per gradient.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    /// One candidate per line.
    #[arg(long)]
    pub candidates: PathBuf,
    /// One reference per line, aligned with the candidates.
    #[arg(long)]
    pub references: PathBuf,
    /// Row label in the CSV report.
    #[arg(long, default_value = "run")]
    pub label: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn default_backend() -> BackendKind {
    BackendKind::Scripted { script: None }
}

fn default_epochs() -> usize {
    10
}

/// Contents of a `--config` file. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub tasks: PathBuf,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default)]
    pub role: RoleConfig,
    #[serde(default)]
    pub hyperparams: Hyperparams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Reflections every episode starts from (JSON lines).
    #[serde(default)]
    pub long_term_memory: Option<PathBuf>,
    #[serde(default)]
    pub ltm_capacity: Option<NonZeroUsize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    ConfigJson { path: String, source: serde_json::Error },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("learner: {0}")]
    Learner(#[from] LearnerError),
    #[error("metrics: {0}")]
    Metric(#[from] MetricError),
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("trajectory log: {0}")]
    Log(#[from] LogError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)
        .and_then(|()| out.flush())
        .map_err(|source| CliError::Write {
            path: dir.join(name).display().to_string(),
            source,
        })
}

fn write_lines<T: Serialize>(dir: &Path, name: &str, values: &[T]) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    let write_err = |source| CliError::Write {
        path: dir.join(name).display().to_string(),
        source,
    };
    for v in values {
        serde_json::to_writer(&mut out, v)?;
        out.write_all(b"\n").map_err(write_err)?;
    }
    out.flush().map_err(write_err)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Loads a config file and resolves its relative paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| CliError::ConfigJson {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.tasks = resolve(base, &cfg.tasks);
        cfg.out = cfg.out.map(|o| resolve(base, &o));
        cfg.long_term_memory = cfg.long_term_memory.map(|m| resolve(base, &m));
        if let BackendKind::ToyPolicy { params: Some(p), .. } = &mut cfg.backend {
            *p = resolve(base, Path::new(p)).display().to_string();
        }
        Ok(cfg)
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, args: &RunArgs) -> Result<Self, CliError> {
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(r) = args.reflection {
            self.role.reflection_enabled = r.enabled();
        }
        if let Some(c) = args.cot {
            self.role.cot_enabled = c.enabled();
        }
        if let Some(out) = &args.out {
            self.out = Some(out.clone());
        }
        if let Some(choice) = args.backend {
            self.backend = match (choice, self.backend) {
                (BackendChoice::Scripted, b @ BackendKind::Scripted { .. }) => b,
                (BackendChoice::Scripted, _) => default_backend(),
                (BackendChoice::Toy, b @ BackendKind::ToyPolicy { .. }) => b,
                (BackendChoice::Toy, _) => {
                    return Err(CliError::Config(
                        "--backend toy needs a toy_policy backend section with candidates in the config".into(),
                    ))
                }
                (BackendChoice::Remote, b @ BackendKind::Remote(_)) => b,
                (BackendChoice::Remote, _) => BackendKind::Remote(serde_json::from_str::<RemoteConfig>("{}")?),
            };
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory (use --out)".into()))
    }

    fn initial_ltm(&self) -> Result<LongTermMemory, CliError> {
        match &self.long_term_memory {
            None => Ok(match self.ltm_capacity {
                Some(c) => LongTermMemory::bounded(c),
                None => LongTermMemory::unbounded(),
            }),
            Some(path) => {
                let f = File::open(path).map_err(|source| CliError::Read {
                    path: path.display().to_string(),
                    source,
                })?;
                Ok(LongTermMemory::load(BufReader::new(f), self.ltm_capacity)?)
            }
        }
    }
}

/// Toy policy parameters and candidates from a `toy_policy` backend section.
fn toy_setup(kind: &BackendKind) -> Result<(PolicyParams, ActionCatalog), CliError> {
    let BackendKind::ToyPolicy {
        params,
        dim,
        candidates,
    } = kind
    else {
        return Err(CliError::Config(
            "the toy policy needs a toy_policy backend section".into(),
        ));
    };
    let catalog = ActionCatalog::new(candidates.clone())?;
    let policy = match params {
        Some(path) => {
            let text = read_text(Path::new(path))?;
            let saved: PolicySnapshot = serde_json::from_str(&text).map_err(|source| CliError::ConfigJson {
                path: path.clone(),
                source,
            })?;
            saved.policy
        }
        None => PolicyParams::zeros(catalog.len(), *dim),
    };
    Ok((policy, catalog))
}

fn build_backend(
    kind: &BackendKind,
    suite: &TaskSuite,
    task: &TaskSpec,
    toy: Option<&(PolicyParams, ActionCatalog)>,
    seed: u64,
) -> Result<Box<dyn Backend + Send>, CliError> {
    Ok(match kind {
        BackendKind::Scripted { script } => {
            Box::new(ScriptedBackend::new(suite.script_for(task, script.as_deref())?.clone()))
        }
        BackendKind::ToyPolicy { .. } => {
            let (policy, catalog) = toy.ok_or_else(|| CliError::Config("toy policy not loaded".into()))?;
            Box::new(ToyPolicyBackend::new(policy.clone(), catalog.clone(), seed)?)
        }
        BackendKind::Remote(cfg) => Box::new(RemoteBackend::new(cfg.clone())?),
    })
}

/// A reflection tagged with the task that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub task_id: String,
    #[serde(flatten)]
    pub reflection: Reflection,
}

/// Outcome of one episode within a run.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub task_id: String,
    pub group: String,
    pub outcome: Result<Trajectory, EpisodeAbort>,
    pub reflections: Vec<Reflection>,
}

/// Records the reflections of an episode on their way to the learner.
struct Recording<'a, H: ?Sized> {
    inner: &'a mut H,
    reflections: Vec<Reflection>,
}

impl<H: LearnerHooks + ?Sized> LearnerHooks for Recording<'_, H> {
    fn on_step(&mut self, event: &StepEvent<'_>) -> Result<(), LearnerError> {
        self.inner.on_step(event)
    }

    fn on_reflection(&mut self, step: &Step, reflection: &Reflection) -> Result<(), LearnerError> {
        self.reflections.push(reflection.clone());
        self.inner.on_reflection(step, reflection)
    }
}

fn run_one<H: LearnerHooks + ?Sized>(
    cfg: &RunConfig,
    suite: &TaskSuite,
    task: &TaskSpec,
    backend: &mut (dyn Backend + Send),
    ltm: LongTermMemory,
    hooks: &mut H,
) -> Result<(EpisodeRecord, LongTermMemory), CliError> {
    let mut env = suite.build_env(task)?;
    let mut memories = Memories::new(cfg.role.stm_capacity, ltm);
    let mut recording = Recording {
        inner: hooks,
        reflections: Vec::new(),
    };
    let outcome = run_episode(task, backend, env.as_mut(), &mut memories, &mut recording, &cfg.role);
    Ok((
        EpisodeRecord {
            task_id: task.id.clone(),
            group: suite.group_of(task),
            outcome,
            reflections: recording.reflections,
        },
        memories.long_term,
    ))
}

/// Aggregated results of a run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    /// Episodes sorted by task id.
    pub episodes: Vec<EpisodeRecord>,
    pub distribution: Option<DistributionReport>,
}

impl RunSummary {
    pub fn trajectories(&self) -> Vec<&Trajectory> {
        self.episodes.iter().filter_map(|e| e.outcome.as_ref().ok()).collect()
    }

    pub fn aborts(&self) -> Vec<&EpisodeAbort> {
        self.episodes.iter().filter_map(|e| e.outcome.as_ref().err()).collect()
    }
}

fn distribution_of(episodes: &[EpisodeRecord]) -> Result<Option<DistributionReport>, CliError> {
    let mut groups: BTreeMap<String, Vec<ExecutionResult>> = BTreeMap::new();
    for e in episodes {
        if let Ok(t) = &e.outcome {
            groups.entry(e.group.clone()).or_default().push(t.result);
        }
    }
    if groups.is_empty() {
        return Ok(None);
    }
    Ok(Some(metrics::distribution_report(&groups)?))
}

fn write_run_outputs(
    out: &Path,
    episodes: &[EpisodeRecord],
    distribution: Option<&DistributionReport>,
) -> Result<(), CliError> {
    let trajectories: Vec<Trajectory> = episodes.iter().filter_map(|e| e.outcome.clone().ok()).collect();
    let mut log = create(out, TRAJECTORIES_FILE)?;
    write_trajectory_log(&mut log, &trajectories)?;
    log.flush().map_err(|source| CliError::Write {
        path: out.join(TRAJECTORIES_FILE).display().to_string(),
        source,
    })?;
    let aborts: Vec<&EpisodeAbort> = episodes.iter().filter_map(|e| e.outcome.as_ref().err()).collect();
    write_lines(out, ABORTS_FILE, &aborts)?;
    let reflections: Vec<ReflectionRecord> = episodes
        .iter()
        .flat_map(|e| {
            e.reflections.iter().map(|r| ReflectionRecord {
                task_id: e.task_id.clone(),
                reflection: r.clone(),
            })
        })
        .collect();
    write_lines(out, REFLECTIONS_FILE, &reflections)?;
    if let Some(d) = distribution {
        write_json(out, DISTRIBUTION_JSON, d)?;
        let mut csv_out = create(out, DISTRIBUTION_CSV)?;
        metrics::write_distribution_csv(d, &mut csv_out)?;
    }
    Ok(())
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))
}

/// Runs every task once. Each episode gets its own environment, backend and
/// memories, so episodes may run in parallel; results are sorted by task id.
pub fn cmd_run(args: &RunArgs) -> Result<RunSummary, CliError> {
    let cfg = RunConfig::load(&args.config)?.with_overrides(args)?;
    let out = cfg.out_dir()?.to_path_buf();
    let suite = TaskSuite::load(&cfg.tasks)?;
    let toy = match cfg.backend {
        BackendKind::ToyPolicy { .. } => Some(toy_setup(&cfg.backend)?),
        _ => None,
    };
    let ltm = cfg.initial_ltm()?;
    let results: Vec<Result<EpisodeRecord, CliError>> = pool(args.jobs)?.install(|| {
        suite
            .tasks
            .par_iter()
            .enumerate()
            .map(|(i, task)| {
                let seed = cfg.seed.wrapping_add(i as u64);
                let mut backend = build_backend(&cfg.backend, &suite, task, toy.as_ref(), seed)?;
                run_one(&cfg, &suite, task, backend.as_mut(), ltm.clone(), &mut NoHooks).map(|(r, _)| r)
            })
            .collect()
    });
    let mut episodes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    episodes.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let distribution = distribution_of(&episodes)?;
    write_run_outputs(&out, &episodes, distribution.as_ref())?;
    Ok(RunSummary {
        out_dir: out,
        episodes,
        distribution,
    })
}

/// Saved toy policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub policy: PolicyParams,
    pub critic: CriticParams,
    pub candidates: Vec<String>,
    pub stats: HookStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub completed: usize,
    pub episodes: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub epochs: Vec<EpochRecord>,
    pub snapshot: PolicySnapshot,
}

/// Trains the toy policy by running the suite `epochs` times in task order.
/// Learning is sequential: each episode starts from the parameters left by
/// the previous one, and long-term memory carries over between episodes.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let mut cfg = RunConfig::load(&args.run.config)?.with_overrides(&args.run)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let out = cfg.out_dir()?.to_path_buf();
    let suite = TaskSuite::load(&cfg.tasks)?;
    let (policy, catalog) = toy_setup(&cfg.backend)?;
    let candidates: Vec<String> = (0..catalog.len())
        .filter_map(|i| catalog.get(i).map(str::to_string))
        .collect();
    let critic = CriticParams::zeros(policy.dim());
    let mut hooks = ActorCriticHooks::new(policy, critic, cfg.hyperparams, catalog.clone())?;
    let mut ltm = cfg.initial_ltm()?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut record = EpochRecord {
            epoch,
            completed: 0,
            episodes: suite.tasks.len(),
            aborted: 0,
        };
        for (i, task) in suite.tasks.iter().enumerate() {
            let seed = cfg.seed.wrapping_add((epoch * suite.tasks.len() + i) as u64);
            let mut backend = ToyPolicyBackend::new(hooks.policy.clone(), catalog.clone(), seed)?;
            let (episode, next_ltm) = run_one(&cfg, &suite, task, &mut backend, ltm, &mut hooks)?;
            ltm = next_ltm;
            match episode.outcome {
                Ok(t) if t.result == ExecutionResult::Completed => record.completed += 1,
                Ok(_) => {}
                Err(_) => record.aborted += 1,
            }
        }
        epochs.push(record);
    }
    let snapshot = PolicySnapshot {
        policy: hooks.policy,
        critic: hooks.critic,
        candidates,
        stats: hooks.stats,
    };
    write_json(&out, POLICY_FILE, &snapshot)?;
    write_lines(&out, TRAINING_FILE, &epochs)?;
    Ok(TrainSummary {
        out_dir: out,
        epochs,
        snapshot,
    })
}

/// Runs the gradient suite with the given implementations.
pub fn cmd_check_gradients(args: &GradientArgs, grads: &AnalyticGradients) -> Result<GradientReport, CliError> {
    let report = run_gradient_suite(args.seed, args.instances, grads);
    if let Some(out) = &args.out {
        write_json(out, GRADIENTS_FILE, &report)?;
    }
    Ok(report)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let f = File::open(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })?;
    BufReader::new(f)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| CliError::Read {
            path: path.display().to_string(),
            source,
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsOutput {
    pub label: String,
    pub report: MetricReport,
    pub pairs: Vec<PairScores>,
}

/// Mean BLEU-4 and ROUGE F1 over aligned lines.
pub fn cmd_eval_metrics(args: &MetricArgs) -> Result<MetricsOutput, CliError> {
    let candidates = read_lines(&args.candidates)?;
    let references = read_lines(&args.references)?;
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        }
        .into());
    }
    let pairs: Vec<PairScores> = candidates
        .iter()
        .zip(&references)
        .map(|(c, r)| metrics::score_pair(c, r))
        .collect();
    let report = MetricReport::from_scores(&pairs)?;
    let output = MetricsOutput {
        label: args.label.clone(),
        report,
        pairs,
    };
    if let Some(out) = &args.out {
        write_json(out, METRICS_JSON, &output)?;
        let mut csv_out = create(out, METRICS_CSV)?;
        metrics::write_metrics_csv(&[(args.label.as_str(), &report)], &mut csv_out)?;
    }
    Ok(output)
}

/// Runs a parsed command line, printing results to stdout and diagnostics
/// to stderr. Returns the process exit status.
pub fn execute(cli: &Cli) -> i32 {
    match dispatch(cli) {
        Ok(diagnostics) if diagnostics.is_empty() => 0,
        Ok(diagnostics) => {
            for d in diagnostics {
                eprintln!("error: {d}");
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Vec<String>, CliError> {
    let mut diagnostics = Vec::new();
    match &cli.command {
        Command::Run(args) => {
            let summary = cmd_run(args)?;
            for e in &summary.episodes {
                match &e.outcome {
                    Ok(t) => println!(
                        "{}\t{}\t{} turn(s)\t{} reflection(s)",
                        t.task_id,
                        t.result,
                        t.turns(),
                        e.reflections.len()
                    ),
                    Err(a) => {
                        println!("{}\taborted", a.task_id);
                        diagnostics.push(a.to_string());
                    }
                }
            }
            println!("outputs in {}", summary.out_dir.display());
        }
        Command::Train(args) => {
            let summary = cmd_train(args)?;
            for e in &summary.epochs {
                println!("epoch {}\t{}/{} completed", e.epoch, e.completed, e.episodes);
                if e.aborted > 0 {
                    diagnostics.push(format!("epoch {}: {} episode(s) aborted", e.epoch, e.aborted));
                }
            }
            println!("policy written to {}", summary.out_dir.join(POLICY_FILE).display());
        }
        Command::CheckGradients(args) => {
            let r = cmd_check_gradients(args, &AnalyticGradients::default())?;
            println!("instances per gradient: {}", r.instances);
            println!("supervised loss:   {:.3e}", r.max_supervised);
            println!("log-policy:        {:.3e}", r.max_log_policy);
            println!("value:             {:.3e}", r.max_value);
            println!("feedback loss:     {:.3e}", r.max_feedback);
            if !r.passed() {
                diagnostics.push(format!(
                    "max relative gradient error {:.3e} exceeds tolerance",
                    r.max_error()
                ));
            }
        }
        Command::EvalMetrics(args) => {
            let m = cmd_eval_metrics(args)?;
            let r = m.report;
            println!(
                "n={} BLEU-4={:.2} ROUGE-1={:.2} ROUGE-2={:.2} ROUGE-L={:.2}",
                r.n,
                r.bleu4 * 100.0,
                r.rouge1 * 100.0,
                r.rouge2 * 100.0,
                r.rouge_l * 100.0
            );
        }
    }
    Ok(diagnostics)
}
