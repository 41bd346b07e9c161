//! Runs every config over every question on a bounded worker pool.
//!
//! Finished configs are appended to a JSON-lines journal, one line per
//! config. A rerun with the same journal skips those configs and reuses
//! their records verbatim.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use dualfuse_core::fusion::check_compatible;
use dualfuse_core::{ByteTokenizer, DecoderStack, FusionEngine, TokenSequence};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::GridConfig;
use crate::records::{summarize, EvalRecord, SweepItem, SweepResult};
use crate::rouge::rouge_l;
use crate::{io_err, EvalError};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    /// Stop once this many configs have started in this run, leaving the
    /// rest for a later resume.
    pub stop_after: Option<usize>,
    pub end_token: Option<u32>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            checkpoint: None,
            stop_after: None,
            end_token: Some(ByteTokenizer::END_TOKEN),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// All records known after this run, ordered by config id then
    /// question order.
    pub records: Vec<EvalRecord>,
    pub results: Vec<SweepResult>,
    pub resumed: usize,
    pub computed: usize,
    /// Some configs were left pending by `stop_after`.
    pub interrupted: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalEntry {
    config_id: usize,
    label: String,
    records: Vec<EvalRecord>,
}

/// Reads complete journal lines. A torn final line is cut off the file so
/// later appends start on a fresh line.
fn load_journal(
    path: &Path,
    configs: &[GridConfig],
    items: &[SweepItem],
) -> Result<BTreeMap<usize, Vec<EvalRecord>>, EvalError> {
    let mut done = BTreeMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mismatch = |message: String| EvalError::CheckpointMismatch {
        path: path.display().to_string(),
        message,
    };
    let question_ids: Vec<&str> = items
        .iter()
        .map(|i| i.question.question_id.as_str())
        .collect();
    let mut good_len = 0;
    for chunk in text.split_inclusive('\n') {
        if !chunk.ends_with('\n') {
            break;
        }
        let line = chunk.trim();
        if !line.is_empty() {
            let entry: JournalEntry = serde_json::from_str(line)
                .map_err(|e| mismatch(format!("unreadable entry: {e}")))?;
            let cfg = configs
                .get(entry.config_id)
                .ok_or_else(|| mismatch(format!("unknown config id {}", entry.config_id)))?;
            if cfg.label() != entry.label {
                return Err(mismatch(format!(
                    "config {} is {} here but {} in the journal",
                    entry.config_id,
                    cfg.label(),
                    entry.label
                )));
            }
            let ids: Vec<&str> = entry
                .records
                .iter()
                .map(|r| r.question_id.as_str())
                .collect();
            if ids != question_ids {
                return Err(mismatch(format!(
                    "question set differs for config {}",
                    entry.config_id
                )));
            }
            done.insert(entry.config_id, entry.records);
        }
        good_len += chunk.len();
    }
    if good_len < text.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(io_err(path))?;
        f.set_len(good_len as u64).map_err(io_err(path))?;
    }
    Ok(done)
}

fn run_config(
    cfg: &GridConfig,
    llm: &DecoderStack,
    lvlm: &DecoderStack,
    items: &[SweepItem],
    end_token: Option<u32>,
) -> Vec<EvalRecord> {
    let tok = ByteTokenizer;
    let engine = FusionEngine::new(llm, lvlm, cfg.config.clone());
    items
        .iter()
        .map(|item| {
            let q = &item.question;
            let mut rec = EvalRecord {
                config_id: cfg.id,
                question_id: q.question_id.clone(),
                question: q.question.clone(),
                answer: String::new(),
                references: q.references.clone(),
                rouge: 0.0,
                judge_scores: Vec::new(),
                judge_max: None,
                error: None,
                judge_error: None,
            };
            let decoded = engine
                .as_ref()
                .map_err(|e| e.to_string())
                .and_then(|engine| {
                    engine
                        .decode(
                            &TokenSequence::new(tok.encode(&item.llm_prompt)),
                            &TokenSequence::new(tok.encode(&item.lvlm_prompt)),
                            end_token,
                        )
                        .map_err(|e| e.to_string())
                });
            match decoded {
                Ok(out) => {
                    rec.answer = tok.decode(&out.tokens);
                    rec.rouge = rouge_l(&rec.answer, &q.references);
                }
                Err(e) => rec.error = Some(e),
            }
            rec
        })
        .collect()
}

pub fn run_sweep(
    configs: &[GridConfig],
    llm: &DecoderStack,
    lvlm: &DecoderStack,
    items: &[SweepItem],
    opts: &SweepOptions,
) -> Result<SweepOutcome, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoQuestions);
    }
    check_compatible(llm, lvlm)?;

    let mut done = match &opts.checkpoint {
        Some(path) => load_journal(path, configs, items)?,
        None => BTreeMap::new(),
    };
    let resumed = done.len();
    let journal: Option<Mutex<File>> = match &opts.checkpoint {
        Some(path) => Some(Mutex::new(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(io_err(path))?,
        )),
        None => None,
    };

    let pending: Vec<&GridConfig> = configs
        .iter()
        .filter(|c| !done.contains_key(&c.id))
        .collect();
    let started = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;

    let fresh: Vec<(usize, Vec<EvalRecord>)> = pool.install(|| {
        pending
            .par_iter()
            .map(
                |cfg| -> Result<Option<(usize, Vec<EvalRecord>)>, EvalError> {
                    if let Some(limit) = opts.stop_after {
                        if started.fetch_add(1, Ordering::SeqCst) >= limit {
                            return Ok(None);
                        }
                    }
                    let records = run_config(cfg, llm, lvlm, items, opts.end_token);
                    if let (Some(j), Some(path)) = (&journal, &opts.checkpoint) {
                        let entry = JournalEntry {
                            config_id: cfg.id,
                            label: cfg.label(),
                            records,
                        };
                        let mut line = serde_json::to_string(&entry).expect("records serialize");
                        line.push('\n');
                        let mut f = j.lock().unwrap_or_else(|p| p.into_inner());
                        f.write_all(line.as_bytes())
                            .and_then(|_| f.flush())
                            .map_err(io_err(path))?;
                        return Ok(Some((cfg.id, entry.records)));
                    }
                    Ok(Some((cfg.id, records)))
                },
            )
            .filter_map(Result::transpose)
            .collect::<Result<Vec<_>, EvalError>>()
    })?;

    let computed = fresh.len();
    done.extend(fresh);
    let interrupted = done.len() < configs.len();
    let records: Vec<EvalRecord> = done.into_values().flatten().collect();
    let finished: Vec<GridConfig> = configs
        .iter()
        .filter(|c| records.iter().any(|r| r.config_id == c.id))
        .cloned()
        .collect();
    let results = summarize(&finished, &records);
    Ok(SweepOutcome {
        records,
        results,
        resumed,
        computed,
        interrupted,
    })
}
