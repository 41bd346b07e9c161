use std::collections::HashSet;
use std::time::Duration;

use dualfuse_core::decoder::load_stack;
use dualfuse_eval::{
    enumerate_configs, read_questions, read_records, run_sweep, sample_subset, summarize,
    write_marginals, write_records, write_results_csv, HttpJudge, OfflineScores, SweepGrid,
    SweepItem, SweepOptions,
};
use serde_json::json;

use super::{create_dir, file_stem_for, read_text, write_text};
use crate::error::CliError;
use crate::manifest::{beside, RunManifest};
use crate::{ReportArgs, ScoreArgs, SweepArgs};

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let grid = SweepGrid::load(&a.grid)?;
    let configs = enumerate_configs(&grid)?;
    let llm = load_stack(&a.llm_weights)?;
    let lvlm = load_stack(&a.lvlm_weights)?;
    let mut questions = read_questions(&a.questions)?;
    if let Some(n) = a.subset {
        questions = sample_subset(&questions, n, a.subset_seed);
    }
    let items = questions
        .into_iter()
        .map(|q| match &a.prompts_dir {
            Some(dir) => {
                let llm_prompt =
                    read_text(&dir.join(format!("{}.txt", file_stem_for(&q.question_id))))?;
                Ok(SweepItem {
                    lvlm_prompt: q.question.clone(),
                    llm_prompt,
                    question: q,
                })
            }
            None => Ok(SweepItem::bare(q)),
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    create_dir(&a.out_dir)?;
    let opts = SweepOptions {
        workers: a.workers,
        checkpoint: Some(a.out_dir.join("checkpoint.jsonl")),
        stop_after: a.stop_after,
        ..SweepOptions::default()
    };
    let outcome = run_sweep(&configs, &llm, &lvlm, &items, &opts)?;

    let grid_copy = a.out_dir.join("grid.toml");
    let records = a.out_dir.join("records.jsonl");
    let results = a.out_dir.join("results.csv");
    let ids: Vec<String> = items
        .iter()
        .map(|i| i.question.question_id.clone())
        .collect();
    write_text(&grid_copy, &grid.to_toml_string())?;
    write_text(&a.out_dir.join("questions.txt"), &(ids.join("\n") + "\n"))?;
    write_records(&outcome.records, &records)?;
    write_results_csv(&outcome.results, &results)?;
    let marginals = write_marginals(&outcome.results, &a.out_dir)?;

    let mut m = RunManifest::new(
        "sweep",
        json!({
            "grid": grid,
            "configs": configs.len(),
            "questions": ids,
            "subset": a.subset,
            "subset_seed": a.subset_seed,
            "workers": a.workers,
            "resumed_configs": outcome.resumed,
            "computed_configs": outcome.computed,
            "complete": !outcome.interrupted,
        }),
    );
    for p in [&a.grid, &a.llm_weights, &a.lvlm_weights, &a.questions] {
        m.input(p)?;
    }
    if let Some(dir) = &a.prompts_dir {
        m.input(dir)?;
    }
    for p in [&grid_copy, &records, &results] {
        m.output(p);
    }
    for p in &marginals {
        m.output(p);
    }
    m.write(&a.out_dir.join("manifest.json"))?;
    let failed: usize = outcome.results.iter().map(|r| r.failed).sum();
    eprintln!(
        "{} of {} configs done ({} resumed), {} failed cells",
        outcome.resumed + outcome.computed,
        configs.len(),
        outcome.resumed,
        failed
    );
    if outcome.interrupted {
        eprintln!("stopped early; rerun with the same --out-dir to resume");
    }
    Ok(())
}

pub fn score(a: ScoreArgs) -> Result<(), CliError> {
    let mut records = read_records(&a.records)?;
    let mut m = RunManifest::new("score", json!({}));
    m.input(&a.records)?;
    let report = match (&a.scores, &a.judge_url) {
        (Some(path), _) => {
            m.input(path)?;
            OfflineScores::load(path)?.apply(&mut records)
        }
        (None, Some(url)) => {
            m.config = json!({
                "judge_url": url,
                "timeout_secs": a.timeout_secs,
                "max_retries": a.max_retries,
                "backoff_ms": a.backoff_ms,
                "batch_size": a.batch_size,
            });
            HttpJudge {
                url: url.clone(),
                timeout: Duration::from_secs(a.timeout_secs),
                max_retries: a.max_retries,
                backoff: Duration::from_millis(a.backoff_ms),
                batch_size: a.batch_size,
            }
            .score(&mut records)
        }
        (None, None) => {
            return Err(CliError::Input(
                "either --scores or --judge-url (or DUALFUSE_JUDGE_URL) is required".into(),
            ))
        }
    };
    write_records(&records, &a.out)?;
    m.output(&a.out);
    m.config["report"] = serde_json::to_value(&report).expect("report serializes");
    m.write(&beside(&a.out))?;
    eprintln!(
        "scored {}, unscored {}, invalid {}",
        report.scored, report.unscored, report.invalid
    );
    if report.unreachable_batches > 0 {
        return Err(CliError::Network(format!(
            "{} batches could not be delivered ({}); partial scores written to {}",
            report.unreachable_batches,
            report.last_network_error.unwrap_or_default(),
            a.out.display()
        )));
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let grid = SweepGrid::load(&a.grid)?;
    let configs = enumerate_configs(&grid)?;
    let records = read_records(&a.records)?;
    let mut present = HashSet::new();
    for r in &records {
        if r.config_id >= configs.len() {
            return Err(CliError::Input(format!(
                "{}: config id {} is not in the grid",
                a.records.display(),
                r.config_id
            )));
        }
        present.insert(r.config_id);
    }
    let used: Vec<_> = configs
        .into_iter()
        .filter(|c| present.contains(&c.id))
        .collect();
    if used.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no records",
            a.records.display()
        )));
    }
    let results = summarize(&used, &records);
    create_dir(&a.out_dir)?;
    let csv = a.out_dir.join("results.csv");
    write_results_csv(&results, &csv)?;
    let marginals = write_marginals(&results, &a.out_dir)?;
    let mut m = RunManifest::new("report", json!({ "configs": results.len() }));
    m.input(&a.grid)?;
    m.input(&a.records)?;
    m.output(&csv);
    for p in &marginals {
        m.output(p);
    }
    m.write(&a.out_dir.join("manifest.json"))
}
