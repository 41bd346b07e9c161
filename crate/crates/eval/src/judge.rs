//! Judge scores from an offline CSV or an HTTP scoring endpoint.
//!
//! Offline CSV columns: `question_id,reference_index,score[,config_id]`
//! with `reference_index` 1 or 2. A row without `config_id` applies to
//! every config; a row with one overrides it for that config.
//!
//! HTTP: `POST {"items":[{"config_id","question_id","reference_index",
//! "question","answer","reference"}]}`, answered by `{"scores":[...]}`
//! in item order.

use std::collections::HashMap;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::records::EvalRecord;
use crate::EvalError;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge endpoint {url} unreachable after {attempts} attempts: {last_error}")]
    Unreachable {
        url: String,
        attempts: u32,
        last_error: String,
    },
    #[error("judge endpoint rejected the batch with status {status}")]
    Rejected { status: u16 },
    #[error("malformed judge response: {0}")]
    Malformed(String),
}

/// Counts from one scoring pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct JudgeReport {
    pub scored: usize,
    /// No score available (missing key, failed decode, unreachable endpoint).
    pub unscored: usize,
    /// A score was present but out of range or not a number.
    pub invalid: usize,
    pub unreachable_batches: usize,
    pub last_network_error: Option<String>,
}

fn check_score(v: f64) -> Result<f64, String> {
    if v.is_finite() && (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("judge score {v} outside [0, 1]"))
    }
}

type ScoreKey = (Option<usize>, String, u8);

#[derive(Debug, Clone, Default)]
pub struct OfflineScores {
    scores: HashMap<ScoreKey, Result<f64, String>>,
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    question_id: String,
    reference_index: u8,
    score: String,
    #[serde(default)]
    config_id: Option<usize>,
}

impl OfflineScores {
    pub fn from_reader(reader: impl std::io::Read, origin: &str) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut scores = HashMap::new();
        for (i, row) in rdr.deserialize::<ScoreRow>().enumerate() {
            let row = row.map_err(|e| EvalError::Parse {
                path: format!("{origin}: row {}", i + 2),
                message: e.to_string(),
            })?;
            if !(1..=2).contains(&row.reference_index) {
                return Err(EvalError::Parse {
                    path: format!("{origin}: row {}", i + 2),
                    message: format!("reference_index {} is not 1 or 2", row.reference_index),
                });
            }
            let score = row
                .score
                .parse::<f64>()
                .map_err(|_| format!("judge score {:?} is not a number", row.score))
                .and_then(check_score);
            scores.insert((row.config_id, row.question_id, row.reference_index), score);
        }
        Ok(Self { scores })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(crate::io_err(path))?;
        Self::from_reader(f, &path.display().to_string())
    }

    fn lookup(&self, config_id: usize, question_id: &str, idx: u8) -> Option<&Result<f64, String>> {
        self.scores
            .get(&(Some(config_id), question_id.to_string(), idx))
            .or_else(|| self.scores.get(&(None, question_id.to_string(), idx)))
    }

    pub fn apply(&self, records: &mut [EvalRecord]) -> JudgeReport {
        let mut report = JudgeReport::default();
        for r in records.iter_mut() {
            r.clear_judge();
            r.judge_error = None;
            if r.error.is_some() {
                report.unscored += 1;
                continue;
            }
            let found: Vec<&Result<f64, String>> = (1..=2)
                .filter_map(|i| self.lookup(r.config_id, &r.question_id, i))
                .collect();
            if let Some(Err(e)) = found.iter().find(|s| s.is_err()) {
                r.judge_error = Some(e.clone());
                report.invalid += 1;
            } else if found.is_empty() {
                report.unscored += 1;
            } else {
                r.set_judge_scores(
                    found
                        .into_iter()
                        .map(|s| *s.as_ref().expect("checked"))
                        .collect(),
                );
                report.scored += 1;
            }
        }
        report
    }
}

#[derive(Debug, Clone)]
pub struct HttpJudge {
    pub url: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles per attempt.
    pub backoff: Duration,
    pub batch_size: usize,
}

#[derive(Debug, Serialize)]
struct JudgeItem<'a> {
    config_id: usize,
    question_id: &'a str,
    reference_index: u8,
    question: &'a str,
    answer: &'a str,
    reference: &'a str,
}

#[derive(Debug, Serialize)]
struct JudgeRequest<'a> {
    items: Vec<JudgeItem<'a>>,
}

#[derive(Debug, Deserialize)]
struct JudgeResponse {
    scores: Vec<serde_json::Value>,
}

impl HttpJudge {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            batch_size: 32,
        }
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    fn post(
        &self,
        agent: &ureq::Agent,
        req: &JudgeRequest<'_>,
    ) -> Result<Vec<serde_json::Value>, JudgeError> {
        let mut last_error = String::new();
        let attempts = self.max_retries + 1;
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match agent.post(&self.url).send_json(req) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status == 429 || status >= 500 {
                        last_error = format!("status {status}");
                        continue;
                    }
                    if status >= 400 {
                        return Err(JudgeError::Rejected { status });
                    }
                    let body: JudgeResponse = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| JudgeError::Malformed(e.to_string()))?;
                    if body.scores.len() != req.items.len() {
                        return Err(JudgeError::Malformed(format!(
                            "{} scores for {} items",
                            body.scores.len(),
                            req.items.len()
                        )));
                    }
                    return Ok(body.scores);
                }
                Err(e) => last_error = e.to_string(),
            }
        }
        Err(JudgeError::Unreachable {
            url: self.url.clone(),
            attempts,
            last_error,
        })
    }

    /// Scores every decoded record against both references. Batches that
    /// cannot be delivered leave their records unscored.
    pub fn score(&self, records: &mut [EvalRecord]) -> JudgeReport {
        let agent = self.agent();
        let mut report = JudgeReport::default();
        for r in records.iter_mut() {
            r.clear_judge();
            r.judge_error = None;
        }
        let targets: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].error.is_none())
            .collect();
        report.unscored += records.len() - targets.len();

        for chunk in targets.chunks(self.batch_size.max(1)) {
            let req = JudgeRequest {
                items: chunk
                    .iter()
                    .flat_map(|&i| {
                        let r = &records[i];
                        r.references
                            .iter()
                            .enumerate()
                            .map(move |(k, reference)| JudgeItem {
                                config_id: r.config_id,
                                question_id: &r.question_id,
                                reference_index: k as u8 + 1,
                                question: &r.question,
                                answer: &r.answer,
                                reference,
                            })
                    })
                    .collect(),
            };
            let outcome = self.post(&agent, &req);
            drop(req);
            match outcome {
                Ok(scores) => {
                    for (&i, pair) in chunk.iter().zip(scores.chunks(2)) {
                        let parsed: Result<Vec<f64>, String> = pair
                            .iter()
                            .map(|v| {
                                v.as_f64()
                                    .ok_or_else(|| format!("judge score {v} is not a number"))
                                    .and_then(check_score)
                            })
                            .collect();
                        match parsed {
                            Ok(s) => {
                                records[i].set_judge_scores(s);
                                report.scored += 1;
                            }
                            Err(e) => {
                                records[i].judge_error = Some(e);
                                report.invalid += 1;
                            }
                        }
                    }
                }
                Err(e @ (JudgeError::Rejected { .. } | JudgeError::Malformed(_))) => {
                    for &i in chunk {
                        records[i].judge_error = Some(e.to_string());
                    }
                    report.invalid += chunk.len();
                }
                Err(e @ JudgeError::Unreachable { .. }) => {
                    report.unscored += chunk.len();
                    report.unreachable_batches += 1;
                    report.last_network_error = Some(e.to_string());
                }
            }
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(config_id: usize, qid: &str) -> EvalRecord {
        EvalRecord {
            config_id,
            question_id: qid.into(),
            question: "q".into(),
            answer: "a".into(),
            references: ["x".into(), "y".into()],
            rouge: 0.0,
            judge_scores: vec![],
            judge_max: None,
            error: None,
            judge_error: None,
        }
    }

    #[test]
    fn constant_file_gives_constant_max() {
        let csv = "question_id,reference_index,score\nq1,1,0.5\nq1,2,0.5\nq2,1,0.5\nq2,2,0.5\n";
        let scores = OfflineScores::from_reader(csv.as_bytes(), "t").unwrap();
        let mut rs = vec![rec(0, "q1"), rec(3, "q2")];
        let report = scores.apply(&mut rs);
        assert_eq!(report.scored, 2);
        assert!(rs.iter().all(|r| r.judge_max == Some(0.5)));
    }

    #[test]
    fn missing_invalid_and_config_override() {
        let csv = "question_id,reference_index,score,config_id\n\
                   q1,1,0.2,\nq1,2,0.8,\nq1,2,0.1,7\nq2,1,1.3,\nq3,1,abc,\n";
        let scores = OfflineScores::from_reader(csv.as_bytes(), "t").unwrap();
        let mut rs = vec![
            rec(0, "q1"),
            rec(7, "q1"),
            rec(0, "q2"),
            rec(0, "q3"),
            rec(0, "q4"),
        ];
        let report = scores.apply(&mut rs);
        assert_eq!(rs[0].judge_max, Some(0.8));
        assert_eq!(rs[1].judge_max, Some(0.2));
        assert!(rs[2].judge_error.is_some() && rs[3].judge_error.is_some());
        assert_eq!(rs[4].judge_max, None);
        assert_eq!((report.scored, report.invalid, report.unscored), (2, 2, 1));
    }

    #[test]
    fn bad_reference_index_rejected() {
        let csv = "question_id,reference_index,score\nq1,3,0.5\n";
        assert!(OfflineScores::from_reader(csv.as_bytes(), "t").is_err());
    }
}
