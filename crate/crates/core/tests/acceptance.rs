//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cmat::backend::{Script, ScriptRule, ScriptedBackend};
use cmat::cli::{cmd_run, RunArgs, Toggle, DISTRIBUTION_JSON, REFLECTIONS_FILE, TRAJECTORIES_FILE};
use cmat::envs::os::OsState;
use cmat::envs::sql::{db_execute, Column, ColumnType, DbSchema, DbState, QueryOutput, Row, Value};
use cmat::envs::{DbEnv, GoalPredicate, OsEnv};
use cmat::learner::gradcheck::{run_gradient_suite, AnalyticGradients, GRADIENT_TOLERANCE};
use cmat::learner::{
    actor_update, critic_update, policy_probs, td_error, value, CriticParams, EnvState, Hyperparams, PolicyParams,
};
use cmat::memory::{render_context, LongTermMemory, Reflection, ShortTermMemory, StepSummary, REFLECTION_MARKER};
use cmat::metrics::{bleu4, distribution_report, lcs_len, rouge_l, rouge_n, Prf};
use cmat::orchestrator::{run_episode, AuditedEnv, Memories, NoHooks, RoleConfig, TaskSpec};
use cmat::trajectory::{count_tokens, Action, ActionKind, ExecutionResult, Feedback, FeedbackCategory, Observation};
use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(elapsed < Duration::from_secs(limit_secs), || {
        format!("took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64())
    })
}

fn run_args(config: PathBuf, out: &Path) -> RunArgs {
    RunArgs {
        config,
        seed: None,
        jobs: 1,
        reflection: None,
        cot: None,
        backend: None,
        out: Some(out.to_path_buf()),
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = run_gradient_suite(2024, 100, &AnalyticGradients::default());
    let elapsed = start.elapsed();
    ensure(report.passed(), || {
        format!("max relative error {:e} >= {GRADIENT_TOLERANCE:e}", report.max_error())
    })?;
    within(elapsed, 5)?;
    Ok(format!(
        "{} instances per gradient, max relative error {:.2e}, {:.2}s",
        report.instances,
        report.max_error(),
        elapsed.as_secs_f64()
    ))
}

/// Random absorbing chain over `n` transient states: `p[s][s']` is the
/// transition probability and the remaining row mass goes to the absorbing
/// state. Leaving `s` pays `r[s]`.
struct Chain {
    p: Vec<Vec<f64>>,
    r: Vec<f64>,
}

impl Chain {
    fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        let p = (0..n)
            .map(|_| {
                let stay = 1.0 - rng.random_range(0.2..0.5);
                let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|x| stay * x / total).collect()
            })
            .collect();
        let r = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { p, r }
    }

    fn exact_values(&self, gamma: f64) -> DVector<f64> {
        let n = self.r.len();
        let p = DMatrix::from_fn(n, n, |i, j| self.p[i][j]);
        let a = DMatrix::identity(n, n) - p * gamma;
        a.lu()
            .solve(&DVector::from_vec(self.r.clone()))
            .expect("I - gamma P is invertible")
    }

    fn next(&self, rng: &mut ChaCha8Rng, s: usize) -> Option<usize> {
        let mut u = rng.random_range(0.0..1.0);
        for (j, &pj) in self.p[s].iter().enumerate() {
            if u < pj {
                return Some(j);
            }
            u -= pj;
        }
        None
    }
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[i] = 1.0;
    x
}

fn criterion_2() -> Outcome {
    const N: usize = 5;
    const CHAINS: usize = 5;
    const EPISODES: usize = 200_000;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gamma = 0.9;
    let mut worst: f64 = 0.0;
    for _ in 0..CHAINS {
        let chain = Chain::random(&mut rng, N);
        let exact = chain.exact_values(gamma);
        let mut critic = CriticParams::zeros(N);
        let mut visits = [0usize; N];
        let mut averaged = [0.0; N];
        let mut averaged_updates = 0usize;
        for episode in 0..EPISODES {
            let mut s = rng.random_range(0..N);
            loop {
                let next = chain.next(&mut rng, s);
                let state = EnvState::new(one_hot(N, s));
                let state_next = match next {
                    Some(j) => EnvState::new(one_hot(N, j)),
                    None => EnvState::terminal(vec![0.0; N]),
                };
                visits[s] += 1;
                let hyper = Hyperparams {
                    beta: (visits[s] as f64).powf(-0.7),
                    gamma_discount: gamma,
                    ..Hyperparams::default()
                };
                let delta = td_error(&critic, &state, &state_next, chain.r[s], &hyper).map_err(|e| e.to_string())?;
                critic = critic_update(&critic, &state, delta, &hyper).map_err(|e| e.to_string())?;
                if episode >= EPISODES / 2 {
                    averaged_updates += 1;
                    for (avg, w) in averaged.iter_mut().zip(&critic.weights) {
                        *avg += (w - *avg) / averaged_updates as f64;
                    }
                }
                match next {
                    Some(j) => s = j,
                    None => break,
                }
            }
        }
        let critic = CriticParams {
            weights: averaged.to_vec(),
        };
        for s in 0..N {
            let v = value(&critic, &EnvState::new(one_hot(N, s))).map_err(|e| e.to_string())?;
            worst = worst.max((v - exact[s]).abs());
        }
    }
    ensure(worst < 1e-2, || format!("TD(0) error {worst:.4} >= 1e-2"))?;

    let mut increases = 0;
    for _ in 0..500 {
        let k = rng.random_range(2..=6);
        let d = rng.random_range(2..=8);
        let weights = (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = PolicyParams::from_weights(k, d, weights).map_err(|e| e.to_string())?;
        let s = EnvState::new((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
        if s.features.iter().all(|&x| x == 0.0) {
            continue;
        }
        let a = rng.random_range(0..k);
        let delta = rng.random_range(0.1..2.0);
        let hyper = Hyperparams {
            alpha: 1e-3,
            ..Hyperparams::default()
        };
        let before = policy_probs(&p, &s).map_err(|e| e.to_string())?[a];
        let updated = actor_update(&p, &s, a, delta, &hyper).map_err(|e| e.to_string())?;
        let after = policy_probs(&updated, &s).map_err(|e| e.to_string())?[a];
        ensure(after > before, || {
            format!("pi(a|s) fell from {before} to {after} with delta {delta}")
        })?;
        increases += 1;
    }
    let elapsed = start.elapsed();
    within(elapsed, 30)?;
    Ok(format!(
        "{CHAINS} chains, max |V - V*| = {worst:.4} (iterate-averaged TD(0)); {increases} actor steps all increased pi(a|s); {:.2}s",
        elapsed.as_secs_f64()
    ))
}

struct ReflectionAbRun {
    result: ExecutionResult,
    turns: usize,
    reflections: usize,
    trajectory_log: Vec<u8>,
    reflection_log: Vec<u8>,
}

fn reflection_ab_outputs(reflection: Toggle) -> Result<ReflectionAbRun, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut args = run_args(fixture("reflection_ab/config.json"), dir.path());
    args.reflection = Some(reflection);
    let summary = cmd_run(&args).map_err(|e| e.to_string())?;
    let episode = summary.episodes.first().ok_or("no episodes")?;
    let trajectory = episode.outcome.as_ref().map_err(|e| e.to_string())?;
    let trajectories = fs::read(dir.path().join(TRAJECTORIES_FILE)).map_err(|e| e.to_string())?;
    let reflections = fs::read(dir.path().join(REFLECTIONS_FILE)).map_err(|e| e.to_string())?;
    Ok(ReflectionAbRun {
        result: trajectory.result,
        turns: trajectory.turns(),
        reflections: episode.reflections.len(),
        trajectory_log: trajectories,
        reflection_log: reflections,
    })
}

fn criterion_3() -> Outcome {
    let on = reflection_ab_outputs(Toggle::On)?;
    ensure(
        on.result == ExecutionResult::Completed && on.turns == 2 && on.reflections == 1,
        || {
            format!(
                "reflection on: {:?} in {} turns with {} reflections",
                on.result, on.turns, on.reflections
            )
        },
    )?;
    let off = reflection_ab_outputs(Toggle::Off)?;
    ensure(
        off.result == ExecutionResult::TaskLimitExceeded && off.reflections == 0,
        || format!("reflection off: {:?} with {} reflections", off.result, off.reflections),
    )?;
    let on_again = reflection_ab_outputs(Toggle::On)?;
    let off_again = reflection_ab_outputs(Toggle::Off)?;
    ensure(
        on.trajectory_log == on_again.trajectory_log && on.reflection_log == on_again.reflection_log,
        || "reflection-on logs differ between runs".into(),
    )?;
    ensure(
        off.trajectory_log == off_again.trajectory_log && off.reflection_log == off_again.reflection_log,
        || "reflection-off logs differ between runs".into(),
    )?;
    Ok(format!(
        "on: Completed in {} turns, {} reflection; off: TLE in {} turns, 0 reflections; logs byte-stable",
        on.turns, on.reflections, off.turns
    ))
}

const FUZZ_RESPONSES: &[&str] = &[
    "THOUGHT: list rows ACTION: sql SELECT * FROM t",
    "THOUGHT: count ACTION: sql SELECT COUNT(*) FROM t WHERE id > 1",
    "ACTION: sql SELECT name FROM t WHERE id = 2",
    "THOUGHT: add ACTION: sql INSERT INTO t VALUES (9, 'z')",
    "THOUGHT: remove ACTION: sql DELETE FROM t WHERE id = 1",
    "THOUGHT: rename ACTION: sql UPDATE t SET name = 'q' WHERE id < 3",
    "THOUGHT: wrong table ACTION: sql SELECT * FROM missing",
    "THOUGHT: typo ACTION: sql SELEC * FRM t",
    "THOUGHT: bad types ACTION: sql INSERT INTO t VALUES ('x', 1)",
    "THOUGHT: bad column ACTION: sql SELECT nope FROM t",
    "THOUGHT: look ACTION: os ls /",
    "THOUGHT: read ACTION: os cat /notes.txt",
    "THOUGHT: read missing ACTION: os cat /absent.txt",
    "THOUGHT: write ACTION: os echo hi > /notes.txt",
    "THOUGHT: delete ACTION: os rm /notes.txt",
    "THOUGHT: bogus ACTION: os sudo reboot",
    "THOUGHT: done ACTION: answer [(2)]",
    "I am not sure what to do.",
    "ACTION:",
    "```\nTHOUGHT: fenced\nACTION: sql SELECT COUNT(*) FROM t\n```",
];

fn fuzz_backend(rng: &mut ChaCha8Rng) -> ScriptedBackend {
    let n = rng.random_range(1..=8);
    let responses: Vec<String> = (0..n)
        .map(|_| FUZZ_RESPONSES.choose(rng).expect("non-empty").to_string())
        .collect();
    let mut rules = Vec::new();
    if rng.random_bool(0.5) {
        let reflect = FUZZ_RESPONSES.choose(rng).expect("non-empty").to_string();
        rules.push(ScriptRule {
            when_contains: Some(REFLECTION_MARKER.into()),
            responses: vec![format!("Avoid that. {reflect}")],
            repeat_last: true,
        });
    }
    rules.push(ScriptRule {
        when_contains: None,
        responses,
        repeat_last: true,
    });
    ScriptedBackend::new(Script::Rules { rules })
}

fn fuzz_db(rng: &mut ChaCha8Rng) -> DbEnv {
    let mut tables = BTreeMap::new();
    tables.insert(
        "t".to_string(),
        vec![
            Column::new("id", ColumnType::Int),
            Column::new("name", ColumnType::Text),
        ],
    );
    let rows: Vec<Row> = (0..rng.random_range(0..5))
        .map(|i| vec![Value::Int(i), Value::Text(format!("n{i}"))])
        .collect();
    let state = DbState::new(DbSchema { tables }, BTreeMap::from([("t".to_string(), rows)])).expect("valid fixture");
    DbEnv::new(state)
}

fn fuzz_os(rng: &mut ChaCha8Rng) -> OsEnv {
    let mut files = vec![("/readme.md", "hello")];
    if rng.random_bool(0.5) {
        files.push(("/notes.txt", "a\nb\n"));
    }
    OsEnv::new(OsState::with_files(files))
}

fn fuzz_cfg(rng: &mut ChaCha8Rng) -> RoleConfig {
    RoleConfig {
        max_turns: NonZeroUsize::new(rng.random_range(1..=6)).expect("positive"),
        max_context_tokens: NonZeroUsize::new(rng.random_range(200..=3000)).expect("positive"),
        max_checker_retries: rng.random_range(0..=4),
        cot_enabled: rng.random_bool(0.5),
        reflection_enabled: rng.random_bool(0.5),
        strict_format: rng.random_bool(0.5),
        context_budget_tokens: NonZeroUsize::new(rng.random_range(8..=256)).expect("positive"),
        stm_capacity: NonZeroUsize::new(rng.random_range(1..=4)).expect("positive"),
        ..RoleConfig::default()
    }
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut executions = 0;
    let mut rejections = 0;
    let mut aborts = 0;
    for episode in 0..1000 {
        let cfg = fuzz_cfg(&mut rng);
        let mut backend = fuzz_backend(&mut rng);
        let use_db = rng.random_bool(0.5);
        let goal = if use_db && rng.random_bool(0.5) {
            GoalPredicate::RowSetEquals {
                query: "SELECT COUNT(*) FROM t".into(),
                expected: vec![vec![Value::Int(2)]],
            }
        } else {
            GoalPredicate::OutputEquals {
                expected: "[(2)]".into(),
            }
        };
        let task = TaskSpec {
            id: format!("fuzz-{episode}"),
            instruction: "Count the rows of t.".into(),
            environment: if use_db { "db" } else { "os" }.into(),
            goal,
            group: None,
            script: None,
        };
        let mut memories = Memories::new(cfg.stm_capacity, LongTermMemory::unbounded());
        let (outcome, violations, executed_in_env) = if use_db {
            let mut env = AuditedEnv::new(fuzz_db(&mut rng));
            let out = run_episode(&task, &mut backend, &mut env, &mut memories, &mut NoHooks, &cfg);
            (out, env.violations(), env.executions())
        } else {
            let mut env = AuditedEnv::new(fuzz_os(&mut rng));
            let out = run_episode(&task, &mut backend, &mut env, &mut memories, &mut NoHooks, &cfg);
            (out, env.violations(), env.executions())
        };
        ensure(violations == 0, || {
            format!("episode {episode}: {violations} unverified executions")
        })?;
        executions += executed_in_env;
        match outcome {
            Ok(t) => {
                ensure(t.respects_checker_protocol(), || {
                    format!("episode {episode}: protocol flag false")
                })?;
                let logged = t.steps.iter().filter(|s| s.executed).count();
                ensure(logged == executed_in_env, || {
                    format!("episode {episode}: {logged} executed steps logged, {executed_in_env} executions")
                })?;
                rejections += t.steps.iter().filter(|s| !s.feedback.is_accept()).count();
            }
            Err(_) => aborts += 1,
        }
    }
    ensure(executions > 0 && rejections > 0, || {
        "fuzz did not exercise both paths".into()
    })?;
    Ok(format!(
        "1000 episodes, {executions} executions, {rejections} rejected steps, {aborts} aborts, 0 violations"
    ))
}

fn all_ngrams(seq: &[u8], n: usize) -> Vec<Vec<u8>> {
    if seq.len() < n {
        return Vec::new();
    }
    (0..=seq.len() - n).map(|i| seq[i..i + n].to_vec()).collect()
}

fn occurrences(list: &[Vec<u8>], g: &[u8]) -> usize {
    list.iter().filter(|x| x.as_slice() == g).count()
}

fn distinct(list: &[Vec<u8>]) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = Vec::new();
    for g in list {
        if !out.contains(g) {
            out.push(g.clone());
        }
    }
    out
}

fn oracle_bleu(c: &[u8], refs: &[Vec<u8>]) -> f64 {
    if c.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = all_ngrams(c, n);
        let mut clipped = 0;
        for g in distinct(&cand) {
            let max_ref = refs
                .iter()
                .map(|r| occurrences(&all_ngrams(r, n), &g))
                .max()
                .unwrap_or(0);
            clipped += occurrences(&cand, &g).min(max_ref);
        }
        let total = cand.len();
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n >= 2 {
            1.0 / (total as f64 + 1.0)
        } else {
            return 0.0;
        };
        log_sum += p.ln();
    }
    let mut best = refs[0].len();
    for r in refs {
        let (d, bd) = (r.len().abs_diff(c.len()), best.abs_diff(c.len()));
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c.len() > best {
        1.0
    } else {
        (1.0 - best as f64 / c.len() as f64).exp()
    };
    bp * (log_sum / 4.0).exp()
}

fn oracle_prf(overlap: usize, ref_total: usize, cand_total: usize) -> Prf {
    let recall = if ref_total == 0 {
        0.0
    } else {
        overlap as f64 / ref_total as f64
    };
    let precision = if cand_total == 0 {
        0.0
    } else {
        overlap as f64 / cand_total as f64
    };
    let f1 = if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    };
    Prf { recall, precision, f1 }
}

fn oracle_rouge_n(c: &[u8], r: &[u8], n: usize) -> Prf {
    let cand = all_ngrams(c, n);
    let refs = all_ngrams(r, n);
    let overlap = distinct(&cand)
        .iter()
        .map(|g| occurrences(&cand, g).min(occurrences(&refs, g)))
        .sum();
    oracle_prf(overlap, refs.len(), cand.len())
}

fn is_subsequence(needle: &[u8], hay: &[u8]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

fn exhaustive_lcs(a: &[u8], b: &[u8]) -> usize {
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            is_subsequence(&sub, b).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn random_tokens(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<u8> {
    let alphabet = rng.random_range(2..=5);
    (0..rng.random_range(0..=max_len))
        .map(|_| rng.random_range(0..alphabet))
        .collect()
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    const PAIRS: usize = 300;
    for i in 0..PAIRS {
        let c = random_tokens(&mut rng, 12);
        let refs: Vec<Vec<u8>> = (0..rng.random_range(1..=3))
            .map(|_| random_tokens(&mut rng, 12))
            .collect();
        let got = bleu4(&c, &refs).map_err(|e| e.to_string())?;
        let want = oracle_bleu(&c, &refs);
        ensure(got == want, || {
            format!("pair {i}: bleu4 {got} vs oracle {want} for {c:?} / {refs:?}")
        })?;
        let r = &refs[0];
        for n in 1..=2 {
            let got = rouge_n(&c, r, n).map_err(|e| e.to_string())?;
            let want = oracle_rouge_n(&c, r, n);
            ensure(got == want, || {
                format!("pair {i}: rouge-{n} {got:?} vs oracle {want:?}")
            })?;
        }
        let got = rouge_l(&c, r);
        let want = oracle_prf(exhaustive_lcs(&c, r), r.len(), c.len());
        ensure(got == want, || format!("pair {i}: rouge-L {got:?} vs oracle {want:?}"))?;
    }
    let mut lcs_cases = 0;
    for _ in 0..2000 {
        let a = random_tokens(&mut rng, 8);
        let b = random_tokens(&mut rng, 8);
        let (dp, brute) = (lcs_len(&a, &b), exhaustive_lcs(&a, &b));
        ensure(dp == brute, || {
            format!("lcs {a:?} {b:?}: dp {dp} vs exhaustive {brute}")
        })?;
        lcs_cases += 1;
    }
    let elapsed = start.elapsed();
    within(elapsed, 10)?;
    Ok(format!(
        "{PAIRS} pairs match BLEU-4/ROUGE-1/2/L oracles exactly, {lcs_cases} LCS cases; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

const SQL_COLUMNS: [(&str, ColumnType); 3] = [("a", ColumnType::Int), ("b", ColumnType::Int), ("c", ColumnType::Text)];
const WORDS: [&str; 4] = ["ant", "bee", "cat", "dog"];

fn random_value(rng: &mut ChaCha8Rng, col: usize) -> Value {
    match SQL_COLUMNS[col].1 {
        ColumnType::Int => Value::Int(rng.random_range(-3..=3)),
        ColumnType::Text => Value::Text(WORDS.choose(rng).expect("non-empty").to_string()),
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> DbState {
    let mut tables = BTreeMap::new();
    tables.insert(
        "r".to_string(),
        SQL_COLUMNS.iter().map(|(n, t)| Column::new(*n, *t)).collect(),
    );
    let rows: Vec<Row> = (0..rng.random_range(0..=10))
        .map(|_| (0..SQL_COLUMNS.len()).map(|c| random_value(rng, c)).collect())
        .collect();
    DbState::new(DbSchema { tables }, BTreeMap::from([("r".to_string(), rows)])).expect("valid state")
}

#[derive(Clone, Copy)]
enum Op {
    Eq,
    Lt,
    Gt,
}

fn random_where(rng: &mut ChaCha8Rng) -> Vec<(usize, Op, Value)> {
    (0..rng.random_range(0..=3))
        .map(|_| {
            let col = rng.random_range(0..SQL_COLUMNS.len());
            let op = *[Op::Eq, Op::Lt, Op::Gt].choose(rng).expect("non-empty");
            (col, op, random_value(rng, col))
        })
        .collect()
}

fn where_sql(conds: &[(usize, Op, Value)]) -> String {
    if conds.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = conds
        .iter()
        .map(|(c, op, v)| {
            let sym = match op {
                Op::Eq => "=",
                Op::Lt => "<",
                Op::Gt => ">",
            };
            format!("{} {sym} {v}", SQL_COLUMNS[*c].0)
        })
        .collect();
    format!(" WHERE {}", parts.join(" AND "))
}

fn brute_matches(row: &Row, conds: &[(usize, Op, Value)]) -> bool {
    conds.iter().all(|(c, op, v)| {
        let ord = match (&row[*c], v) {
            (Value::Int(x), Value::Int(y)) => x.cmp(y),
            (Value::Text(x), Value::Text(y)) => x.as_str().cmp(y.as_str()),
            _ => return false,
        };
        match op {
            Op::Eq => ord.is_eq(),
            Op::Lt => ord.is_lt(),
            Op::Gt => ord.is_gt(),
        }
    })
}

fn sorted(mut rows: Vec<Row>) -> Vec<Row> {
    rows.sort();
    rows
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    const QUERIES: usize = 600;
    for i in 0..QUERIES {
        let state = random_state(&mut rng);
        let conds = random_where(&mut rng);
        let rows = state.table_rows("r");
        let kept: Vec<&Row> = rows.iter().filter(|r| brute_matches(r, &conds)).collect();
        let (sql, expected) = match rng.random_range(0..3) {
            0 => (
                format!("SELECT * FROM r{}", where_sql(&conds)),
                kept.iter().map(|r| (*r).clone()).collect::<Vec<Row>>(),
            ),
            1 => (
                format!("select count(*) from r{}", where_sql(&conds)),
                vec![vec![Value::Int(kept.len() as i64)]],
            ),
            _ => {
                let cols: Vec<usize> = (0..rng.random_range(1..=3))
                    .map(|_| rng.random_range(0..SQL_COLUMNS.len()))
                    .collect();
                let names: Vec<&str> = cols.iter().map(|&c| SQL_COLUMNS[c].0).collect();
                (
                    format!("SELECT {} FROM r{}", names.join(", "), where_sql(&conds)),
                    kept.iter()
                        .map(|r| cols.iter().map(|&c| r[c].clone()).collect())
                        .collect(),
                )
            }
        };
        let (next, out) = db_execute(&state, &sql).map_err(|e| format!("query {i} `{sql}`: {e}"))?;
        ensure(next == state, || format!("query {i}: SELECT changed the state"))?;
        match out {
            QueryOutput::Rows { rows, .. } => ensure(rows == expected, || {
                format!("query {i} `{sql}`: {rows:?} vs oracle {expected:?}")
            })?,
            other => return Err(format!("query {i}: unexpected output {other:?}")),
        }
    }

    let mut mutations = 0;
    for i in 0..QUERIES {
        let state = random_state(&mut rng);
        let fresh: Row = vec![
            Value::Int(100 + i as i64),
            Value::Int(rng.random_range(-3..=3)),
            Value::Text(WORDS.choose(&mut rng).expect("non-empty").to_string()),
        ];
        let values: Vec<String> = fresh.iter().map(ToString::to_string).collect();
        let (inserted, _) =
            db_execute(&state, &format!("INSERT INTO r VALUES ({})", values.join(", "))).map_err(|e| e.to_string())?;
        ensure(
            inserted.table_rows("r").len() == state.table_rows("r").len() + 1,
            || format!("case {i}: insert did not add a row"),
        )?;
        let delete = format!(
            "DELETE FROM r WHERE a = {} AND b = {} AND c = {}",
            fresh[0], fresh[1], fresh[2]
        );
        let (restored, _) = db_execute(&inserted, &delete).map_err(|e| e.to_string())?;
        ensure(
            sorted(restored.table_rows("r").to_vec()) == sorted(state.table_rows("r").to_vec()),
            || format!("case {i}: insert then delete did not restore the rows"),
        )?;

        let conds = random_where(&mut rng);
        let removed: Vec<Row> = state
            .table_rows("r")
            .iter()
            .filter(|r| brute_matches(r, &conds))
            .cloned()
            .collect();
        let (mut current, out) =
            db_execute(&state, &format!("DELETE FROM r{}", where_sql(&conds))).map_err(|e| e.to_string())?;
        ensure(out == QueryOutput::Affected(removed.len()), || {
            format!("case {i}: delete reported {out:?}, oracle removed {}", removed.len())
        })?;
        for row in &removed {
            let values: Vec<String> = row.iter().map(ToString::to_string).collect();
            current = db_execute(&current, &format!("INSERT INTO r VALUES ({})", values.join(", ")))
                .map_err(|e| e.to_string())?
                .0;
        }
        ensure(
            sorted(current.table_rows("r").to_vec()) == sorted(state.table_rows("r").to_vec()),
            || format!("case {i}: delete then re-insert did not restore the rows"),
        )?;
        mutations += 2;
    }
    Ok(format!(
        "{QUERIES} SELECTs match brute-force filtering, {mutations} insert/delete inversions hold"
    ))
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let summary = cmd_run(&run_args(fixture("db_suite/config.json"), dir.path())).map_err(|e| e.to_string())?;
    let report = summary.distribution.ok_or("no distribution report")?;
    ensure(report.groups.len() == 1, || {
        format!("expected one group, got {}", report.groups.len())
    })?;
    let (group, dist) = report.groups.iter().next().expect("one group");
    for result in ExecutionResult::ALL {
        let want = match result {
            ExecutionResult::Completed => 80.0,
            ExecutionResult::TaskLimitExceeded => 20.0,
            _ => 0.0,
        };
        ensure(dist.percent(result) == want, || {
            format!("{group} {}: {} != {want}", result.label(), dist.percent(result))
        })?;
    }
    ensure(dir.path().join(DISTRIBUTION_JSON).is_file(), || {
        "distribution.json missing".into()
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let mut groups = BTreeMap::new();
        for g in 0..rng.random_range(1..=4) {
            let results: Vec<ExecutionResult> = (0..rng.random_range(1..=97))
                .map(|_| *ExecutionResult::ALL.choose(&mut rng).expect("non-empty"))
                .collect();
            groups.insert(format!("g{g}"), results);
        }
        let report = distribution_report(&groups).map_err(|e| e.to_string())?;
        for d in report.groups.values() {
            worst = worst.max((d.row_sum() - 100.0).abs());
        }
    }
    ensure(worst <= 0.1, || format!("row sum off by {worst}"))?;
    Ok(format!(
        "{group}: Completed 80.0, TLE 20.0, others 0.0; 500 random reports, max |row sum - 100| = {worst:.2e}"
    ))
}

fn criterion_8() -> Outcome {
    let config = fixture("db_suite/config.json");
    let mut logs = Vec::new();
    for jobs in [1, 1, 4] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut args = run_args(config.clone(), dir.path());
        args.jobs = jobs;
        cmd_run(&args).map_err(|e| e.to_string())?;
        logs.push(fs::read(dir.path().join(TRAJECTORIES_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(!logs[0].is_empty(), || "empty trajectory log".into())?;
    ensure(logs[0] == logs[1], || "two identical runs wrote different logs".into())?;
    ensure(logs[0] == logs[2], || "--jobs 4 changed the log".into())?;
    Ok(format!(
        "{} bytes identical across two runs and with --jobs 4",
        logs[0].len()
    ))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ops = 0;
    let mut renders = 0;
    while ops < 12_000 {
        let capacity = NonZeroUsize::new(rng.random_range(1..=6)).expect("positive");
        let ltm_capacity = NonZeroUsize::new(rng.random_range(1..=6)).expect("positive");
        let bounded = rng.random_bool(0.5);
        let mut stm = ShortTermMemory::new(capacity);
        let mut ltm = if bounded {
            LongTermMemory::bounded(ltm_capacity)
        } else {
            LongTermMemory::unbounded()
        };
        let mut pushed_steps: Vec<StepSummary> = Vec::new();
        let mut pushed_reflections: Vec<Reflection> = Vec::new();
        for turn in 0..rng.random_range(5..60) {
            ops += 1;
            match rng.random_range(0..3) {
                0 => {
                    let obs = Observation {
                        text: format!("obs {turn} {}", "word ".repeat(rng.random_range(0..6))),
                        env_snapshot_id: turn as u64,
                        turn_index: turn,
                    };
                    let action = Action::new(ActionKind::Sql, format!("SELECT {turn}"), "");
                    let feedback = if rng.random_bool(0.5) {
                        Feedback::accept("ok")
                    } else {
                        Feedback::reject(FeedbackCategory::SemanticError, "no such table")
                    };
                    pushed_steps.push(StepSummary::new(&obs, &action, &feedback));
                    stm = stm.update(&obs, &action, &feedback);
                    ensure(stm.len() <= capacity.get(), || {
                        format!("STM holds {} > {capacity}", stm.len())
                    })?;
                    let keep = pushed_steps.len().saturating_sub(capacity.get());
                    ensure(stm.iter().eq(pushed_steps[keep..].iter()), || {
                        "STM window is not the newest steps".into()
                    })?;
                }
                1 => {
                    let r = Reflection {
                        source_step: turn,
                        error_class: "semantic_error".into(),
                        corrective_rule: format!("rule {turn} {}", "x ".repeat(rng.random_range(0..5))),
                        corrective_action: None,
                        created_at_turn: turn,
                    };
                    pushed_reflections.push(r.clone());
                    ltm = ltm.update(r);
                    let keep = if bounded {
                        pushed_reflections.len().saturating_sub(ltm_capacity.get())
                    } else {
                        0
                    };
                    ensure(ltm.iter().eq(pushed_reflections[keep..].iter()), || {
                        "LTM is not in append order".into()
                    })?;
                }
                _ => {
                    let budget = NonZeroUsize::new(rng.random_range(1..=80)).expect("positive");
                    let text = render_context(&stm, &ltm, budget);
                    ensure(count_tokens(&text) <= budget.get(), || {
                        format!("rendered {} tokens over budget {budget}", count_tokens(&text))
                    })?;
                    let full: Vec<String> = ltm
                        .iter()
                        .collect::<Vec<_>>()
                        .into_iter()
                        .rev()
                        .map(Reflection::render)
                        .chain(stm.iter().map(StepSummary::render))
                        .collect();
                    let lines: Vec<&str> = if text.is_empty() {
                        Vec::new()
                    } else {
                        text.lines().collect()
                    };
                    ensure(
                        lines.len() <= full.len() && lines.iter().zip(&full).all(|(a, b)| *a == b.as_str()),
                        || "render is not a whole-entry prefix of LTM newest-first then STM".into(),
                    )?;
                    renders += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, 5)?;
    Ok(format!(
        "{ops} ops, {renders} renders within budget; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("gradient correctness", criterion_1),
        ("actor-critic fidelity", criterion_2),
        ("reflection A/B", criterion_3),
        ("checker-in-the-loop safety", criterion_4),
        ("metric oracle equivalence", criterion_5),
        ("SQL engine oracle equivalence", criterion_6),
        ("execution-result distribution", criterion_7),
        ("determinism", criterion_8),
        ("memory invariants", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
