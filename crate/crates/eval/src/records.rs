//! Questions in, per-cell evaluation records and per-config aggregates out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dualfuse_core::FusionConfig;
use serde::{Deserialize, Serialize};

use crate::grid::GridConfig;
use crate::{io_err, EvalError};

/// One question with its two reference answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Question {
    pub question_id: String,
    pub question: String,
    pub references: [String; 2],
}

/// A question plus the text fed to each branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepItem {
    pub question: Question,
    pub llm_prompt: String,
    pub lvlm_prompt: String,
}

impl SweepItem {
    /// Both branches see the bare question.
    pub fn bare(question: Question) -> Self {
        Self {
            llm_prompt: question.question.clone(),
            lvlm_prompt: question.question.clone(),
            question,
        }
    }
}

pub fn parse_questions(text: &str) -> Result<Vec<Question>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            path: format!("line {}", i + 1),
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn read_questions(path: impl AsRef<Path>) -> Result<Vec<Question>, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_questions(&text).map_err(|e| match e {
        EvalError::Parse {
            path: line,
            message,
        } => EvalError::Parse {
            path: format!("{}: {line}", path.display()),
            message,
        },
        other => other,
    })
}

/// One config x question cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub config_id: usize,
    pub question_id: String,
    pub question: String,
    pub answer: String,
    pub references: [String; 2],
    pub rouge: f64,
    #[serde(default)]
    pub judge_scores: Vec<f64>,
    #[serde(default)]
    pub judge_max: Option<f64>,
    /// Decode failure for this cell; the answer is empty.
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub judge_error: Option<String>,
}

impl EvalRecord {
    pub fn set_judge_scores(&mut self, scores: Vec<f64>) {
        self.judge_max = scores.iter().copied().reduce(f64::max);
        self.judge_scores = scores;
        self.judge_error = None;
    }

    pub fn clear_judge(&mut self) {
        self.judge_scores.clear();
        self.judge_max = None;
    }
}

pub fn write_records(records: &[EvalRecord], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                path: format!("{}: line {}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JudgeAggregate {
    /// Mean of per-question maxima, `None` when nothing was scored.
    pub mean: Option<f64>,
    pub scored: usize,
    pub skipped: usize,
}

/// Mean over questions of the best judge score per question. Records
/// without scores are skipped and counted.
pub fn judge_aggregate(records: &[EvalRecord]) -> JudgeAggregate {
    let mut maxima: Vec<(usize, &str, f64)> = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        match r.judge_scores.iter().copied().reduce(f64::max) {
            Some(m) => maxima.push((r.config_id, &r.question_id, m)),
            None => skipped += 1,
        }
    }
    maxima.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
    let mean =
        (!maxima.is_empty()).then(|| maxima.iter().map(|m| m.2).sum::<f64>() / maxima.len() as f64);
    JudgeAggregate {
        mean,
        scored: maxima.len(),
        skipped,
    }
}

/// Per-config means, one row per config in id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config_id: usize,
    pub label: String,
    pub config: FusionConfig,
    /// Cells that decoded successfully.
    pub count: usize,
    pub failed: usize,
    pub mean_rouge: Option<f64>,
    /// Cells with at least one judge score.
    pub judged: usize,
    /// Mean of per-question judge maxima.
    pub lingo_mean: Option<f64>,
}

pub fn summarize(configs: &[GridConfig], records: &[EvalRecord]) -> Vec<SweepResult> {
    let mut by_config: BTreeMap<usize, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        by_config.entry(r.config_id).or_default().push(r);
    }
    configs
        .iter()
        .map(|c| {
            let mut rs: Vec<EvalRecord> = by_config
                .get(&c.id)
                .map(|v| v.iter().map(|r| (*r).clone()).collect())
                .unwrap_or_default();
            rs.sort_by(|a, b| a.question_id.cmp(&b.question_id));
            let ok: Vec<&EvalRecord> = rs.iter().filter(|r| r.error.is_none()).collect();
            let mean_rouge =
                (!ok.is_empty()).then(|| ok.iter().map(|r| r.rouge).sum::<f64>() / ok.len() as f64);
            let judge = judge_aggregate(&rs);
            SweepResult {
                config_id: c.id,
                label: c.label(),
                config: c.config.clone(),
                count: ok.len(),
                failed: rs.len() - ok.len(),
                mean_rouge,
                judged: judge.scored,
                lingo_mean: judge.mean,
            }
        })
        .collect()
}
