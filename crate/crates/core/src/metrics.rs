//! Text-overlap metrics and execution-result reports.
//!
//! Metric functions work on token sequences of any `Eq + Hash` type.
//! [`tokenize`] is the tokenizer used for text inputs: lowercase, split on
//! whitespace, and every punctuation character becomes its own token.
//!
//! BLEU-4 uses uniform weights, clipped n-gram counts, and a brevity penalty
//! against the reference whose length is closest to the candidate (the
//! shorter one on ties). For orders 2 to 4 a zero clipped count is smoothed
//! to `1 / (total + 1)`. Scores are kept in `[0, 1]`; report exports render
//! them ×100.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hash;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::ExecutionResult;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("at least one reference is required")]
    NoReferences,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("no candidate/reference pairs")]
    NoPairs,
    #[error("{candidates} candidate line(s) but {references} reference line(s)")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("group {0} has no trajectories")]
    EmptyGroup(String),
    #[error("reports cover different task sets ({only_a} only in A, {only_b} only in B)")]
    TaskSetMismatch { only_a: usize, only_b: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercases, splits on whitespace and separates punctuation characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() || c == '_' {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    tokens.push(std::mem::take(&mut word));
                }
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !word.is_empty() {
            tokens.push(word);
        }
    }
    tokens
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn ngram_total(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// BLEU-4 of `candidate` against `references`. An empty candidate scores 0.
pub fn bleu4<T: Eq + Hash, R: AsRef<[T]>>(candidate: &[T], references: &[R]) -> Result<f64, MetricError> {
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r.as_ref(), n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = ngram_total(candidate.len(), n);
        let p = if clipped > 0 {
            clipped as f64 / total as f64
        } else if n >= 2 {
            1.0 / (total as f64 + 1.0)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
    }
    let c = candidate.len();
    let r = references
        .iter()
        .map(|r| r.as_ref().len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / 4.0).exp())
}

/// Recall, precision and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    /// Builds the triple from an overlap count; zero denominators give 0.
    pub fn from_overlap(overlap: usize, reference_total: usize, candidate_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let recall = ratio(overlap, reference_total);
        let precision = ratio(overlap, candidate_total);
        let f1 = if recall + precision == 0.0 {
            0.0
        } else {
            2.0 * recall * precision / (recall + precision)
        };
        Self { recall, precision, f1 }
    }
}

/// ROUGE-N from multiset n-gram overlap.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Result<Prf, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    let cand = ngram_counts(candidate, n);
    let refs = ngram_counts(reference, n);
    let overlap = cand
        .iter()
        .map(|(g, c)| (*c).min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(Prf::from_overlap(
        overlap,
        ngram_total(reference.len(), n),
        ngram_total(candidate.len(), n),
    ))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: recall = LCS/|reference|, precision = LCS/|candidate|.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_overlap(lcs_len(candidate, reference), reference.len(), candidate.len())
}

/// Mean scores over candidate/reference pairs. ROUGE values are F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub n: usize,
}

/// Scores for one pair, with all ROUGE components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub bleu4: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
}

pub fn score_pair(candidate: &str, reference: &str) -> PairScores {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    PairScores {
        bleu4: bleu4(&c, &[&r[..]]).expect("one reference"),
        rouge1: rouge_n(&c, &r, 1).expect("order 1"),
        rouge2: rouge_n(&c, &r, 2).expect("order 2"),
        rouge_l: rouge_l(&c, &r),
    }
}

impl MetricReport {
    pub fn from_scores(scores: &[PairScores]) -> Result<Self, MetricError> {
        if scores.is_empty() {
            return Err(MetricError::NoPairs);
        }
        let n = scores.len();
        let mean = |f: &dyn Fn(&PairScores) -> f64| scores.iter().map(f).sum::<f64>() / n as f64;
        Ok(Self {
            bleu4: mean(&|s| s.bleu4),
            rouge1: mean(&|s| s.rouge1.f1),
            rouge2: mean(&|s| s.rouge2.f1),
            rouge_l: mean(&|s| s.rouge_l.f1),
            n,
        })
    }

    /// Scores aligned candidate and reference lines.
    pub fn from_lines<S: AsRef<str>>(candidates: &[S], references: &[S]) -> Result<Self, MetricError> {
        if candidates.len() != references.len() {
            return Err(MetricError::LengthMismatch {
                candidates: candidates.len(),
                references: references.len(),
            });
        }
        let scores: Vec<PairScores> = candidates
            .iter()
            .zip(references)
            .map(|(c, r)| score_pair(c.as_ref(), r.as_ref()))
            .collect();
        Self::from_scores(&scores)
    }

    fn values(&self) -> [(&'static str, f64); 4] {
        [
            ("BLEU-4", self.bleu4),
            ("ROUGE-1", self.rouge1),
            ("ROUGE-2", self.rouge2),
            ("ROUGE-L", self.rouge_l),
        ]
    }
}

/// Writes `label,n,BLEU-4,ROUGE-1,ROUGE-2,ROUGE-L` rows with scores ×100.
pub fn write_metrics_csv<W: Write>(rows: &[(&str, &MetricReport)], out: W) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "n", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L"])?;
    for (label, report) in rows {
        let mut record = vec![label.to_string(), report.n.to_string()];
        record.extend(report.values().iter().map(|(_, v)| format!("{:.2}", v * 100.0)));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// A metric report over a named set of tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tasks: BTreeSet<String>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Leader {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    /// `a − b`.
    pub delta: f64,
    pub leader: Leader,
}

/// Per-metric deltas between two runs over the same tasks.
pub fn prompt_quality_compare(a: &RunReport, b: &RunReport) -> Result<Vec<MetricComparison>, MetricError> {
    if a.tasks != b.tasks {
        return Err(MetricError::TaskSetMismatch {
            only_a: a.tasks.difference(&b.tasks).count(),
            only_b: b.tasks.difference(&a.tasks).count(),
        });
    }
    Ok(a.metrics
        .values()
        .iter()
        .zip(b.metrics.values())
        .map(|(&(metric, va), (_, vb))| MetricComparison {
            metric,
            a: va,
            b: vb,
            delta: va - vb,
            leader: match va.partial_cmp(&vb) {
                Some(Ordering::Greater) => Leader::A,
                Some(Ordering::Less) => Leader::B,
                _ => Leader::Tie,
            },
        })
        .collect())
}

/// Share of each execution result within one group, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistribution {
    pub total: usize,
    pub percentages: BTreeMap<ExecutionResult, f64>,
}

impl GroupDistribution {
    pub fn percent(&self, result: ExecutionResult) -> f64 {
        self.percentages.get(&result).copied().unwrap_or(0.0)
    }

    pub fn row_sum(&self) -> f64 {
        self.percentages.values().sum()
    }
}

/// Execution-result distribution per task group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub groups: BTreeMap<String, GroupDistribution>,
}

pub fn distribution_report(groups: &BTreeMap<String, Vec<ExecutionResult>>) -> Result<DistributionReport, MetricError> {
    let mut out = BTreeMap::new();
    for (name, results) in groups {
        if results.is_empty() {
            return Err(MetricError::EmptyGroup(name.clone()));
        }
        let total = results.len();
        let percentages = ExecutionResult::ALL
            .iter()
            .map(|r| {
                let count = results.iter().filter(|x| *x == r).count();
                (*r, 100.0 * count as f64 / total as f64)
            })
            .collect();
        out.insert(name.clone(), GroupDistribution { total, percentages });
    }
    Ok(DistributionReport { groups: out })
}

/// Writes one row per execution result and one column per group, in percent.
pub fn write_distribution_csv<W: Write>(report: &DistributionReport, out: W) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["result".to_string()];
    header.extend(report.groups.keys().cloned());
    w.write_record(&header)?;
    for r in ExecutionResult::ALL {
        let mut record = vec![r.label().to_string()];
        record.extend(report.groups.values().map(|g| format!("{:.1}", g.percent(r))));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
