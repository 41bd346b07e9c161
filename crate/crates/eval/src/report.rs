//! Results CSV and per-parameter marginal tables.

use std::path::{Path, PathBuf};

use crate::records::SweepResult;
use crate::rouge::ROUGE_BETA;
use crate::EvalError;

pub fn rouge_column() -> String {
    format!("rouge_l_fbeta_{ROUGE_BETA}")
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn fmt_layers(layers: &[i32]) -> String {
    let inner: Vec<String> = layers.iter().map(i32::to_string).collect();
    format!("[{}]", inner.join(", "))
}

/// One row per config, in config-id order.
pub fn write_results_csv(results: &[SweepResult], path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut sorted: Vec<&SweepResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.config_id);
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let rouge = rouge_column();
    w.write_record([
        "config_id",
        "label",
        "head_llm",
        "head_lvlm",
        "feature_llm",
        "feature_lvlm",
        "merge_layers",
        "isolate_lvlm",
        "sum_all",
        "merge_mode",
        "count",
        "failed",
        rouge.as_str(),
        "judged",
        "lingo_mean",
    ])?;
    for r in sorted {
        let c = &r.config;
        w.write_record([
            r.config_id.to_string(),
            r.label.clone(),
            c.head_weights.llm.to_string(),
            c.head_weights.lvlm.to_string(),
            c.feature_weights.llm.to_string(),
            c.feature_weights.lvlm.to_string(),
            fmt_layers(&c.merge_layers),
            c.isolate_lvlm.to_string(),
            c.sum_all.to_string(),
            c.merge_mode.to_string(),
            r.count.to_string(),
            r.failed.to_string(),
            fmt_mean(r.mean_rouge),
            r.judged.to_string(),
            fmt_mean(r.lingo_mean),
        ])?;
    }
    w.flush().map_err(crate::io_err(path.as_ref()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalRow {
    pub value: String,
    pub configs: usize,
    pub samples: usize,
    pub mean_rouge: Option<f64>,
    pub judged: usize,
    pub lingo_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub parameter: &'static str,
    pub rows: Vec<MarginalRow>,
}

pub const MARGINAL_PARAMETERS: [&str; 5] = [
    "head_weights",
    "feature_weights",
    "merge_layers",
    "isolate_lvlm",
    "sum_all",
];

fn parameter_value(r: &SweepResult, parameter: &str) -> String {
    let c = &r.config;
    match parameter {
        "head_weights" => c.head_weights.to_string(),
        "feature_weights" => c.feature_weights.to_string(),
        "merge_layers" => fmt_layers(&c.merge_layers),
        "isolate_lvlm" => c.isolate_lvlm.to_string(),
        "sum_all" => c.sum_all.to_string(),
        other => unreachable!("unknown parameter {other}"),
    }
}

/// Mean metrics per value of each parameter, pooled over every other
/// parameter. Config means are weighted by their sample counts, so each
/// row is the mean over all underlying cells. Values appear in config-id
/// order of first occurrence.
pub fn marginal_tables(results: &[SweepResult]) -> Vec<MarginalTable> {
    let mut sorted: Vec<&SweepResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.config_id);
    MARGINAL_PARAMETERS
        .iter()
        .map(|&parameter| {
            let mut rows: Vec<(MarginalRow, f64, f64)> = Vec::new();
            for r in &sorted {
                let value = parameter_value(r, parameter);
                let idx = match rows.iter().position(|(row, _, _)| row.value == value) {
                    Some(i) => i,
                    None => {
                        rows.push((
                            MarginalRow {
                                value,
                                configs: 0,
                                samples: 0,
                                mean_rouge: None,
                                judged: 0,
                                lingo_mean: None,
                            },
                            0.0,
                            0.0,
                        ));
                        rows.len() - 1
                    }
                };
                let (row, rouge_sum, lingo_sum) = &mut rows[idx];
                row.configs += 1;
                if let Some(m) = r.mean_rouge {
                    row.samples += r.count;
                    *rouge_sum += m * r.count as f64;
                }
                if let Some(m) = r.lingo_mean {
                    row.judged += r.judged;
                    *lingo_sum += m * r.judged as f64;
                }
            }
            let rows = rows
                .into_iter()
                .map(|(mut row, rouge_sum, lingo_sum)| {
                    row.mean_rouge = (row.samples > 0).then(|| rouge_sum / row.samples as f64);
                    row.lingo_mean = (row.judged > 0).then(|| lingo_sum / row.judged as f64);
                    row
                })
                .collect();
            MarginalTable { parameter, rows }
        })
        .collect()
}

/// Writes `marginal_<parameter>.csv` for each parameter into `dir`.
pub fn write_marginals(
    results: &[SweepResult],
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>, EvalError> {
    let dir = dir.as_ref();
    let rouge = rouge_column();
    let mut paths = Vec::new();
    for table in marginal_tables(results) {
        let path = dir.join(format!("marginal_{}.csv", table.parameter));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            table.parameter,
            "configs",
            "samples",
            rouge.as_str(),
            "judged",
            "lingo_mean",
        ])?;
        for row in &table.rows {
            w.write_record([
                row.value.clone(),
                row.configs.to_string(),
                row.samples.to_string(),
                fmt_mean(row.mean_rouge),
                row.judged.to_string(),
                fmt_mean(row.lingo_mean),
            ])?;
        }
        w.flush().map_err(crate::io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}
