//! Sweep execution and reporting.

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::aggregate::{aggregate, render_text};
use crate::config::{header_line, SweepConfig, Tier};
use crate::error::{HarnessError, Result};
use crate::plots::plot_files;
use crate::records::{compact, read_journal, task_key, to_csv, Journal, SweepRecord, TaskStatus, JOURNAL_FILE};
use crate::tasks::{columns, enumerate_configs, run_task, Params};

pub const CONFIG_FILE: &str = "effective_config.json";
pub const CSV_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub n_tasks: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Tasks already complete in the journal and not re-run.
    pub n_skipped: usize,
    pub summary: Value,
}

impl RunOutcome {
    /// 0 when every task succeeded, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.n_failed == 0 {
            0
        } else {
            2
        }
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| HarnessError::io(format!("writing {}", path.display()), e))
}

fn run_one(cfg: &SweepConfig, params: &Params, seed: u64) -> SweepRecord {
    let result = catch_unwind(AssertUnwindSafe(|| run_task(cfg, params, seed)));
    let (metrics, status) = match result {
        Ok(Ok(m)) => (m, TaskStatus::Ok),
        Ok(Err(e)) => (Default::default(), TaskStatus::Failed { reason: e.to_string() }),
        Err(_) => (
            Default::default(),
            TaskStatus::Failed {
                reason: "task panicked".into(),
            },
        ),
    };
    SweepRecord {
        tier: cfg.tier,
        params: params.clone(),
        seed,
        metrics,
        status,
    }
}

/// Run every (configuration, seed) task of `cfg` not already completed in
/// its output directory, then rewrite the compacted CSV, the summary and
/// the plot-data files from the full journal.
pub fn run_sweep(cfg: &SweepConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let configs = enumerate_configs(cfg)?.configs;
    let tasks: Vec<(&Params, u64)> = configs
        .iter()
        .flat_map(|p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let order: Vec<String> = tasks.iter().map(|(p, s)| task_key(cfg.tier, p, *s)).collect();

    let dir = cfg.tier_dir();
    fs::create_dir_all(&dir).map_err(|e| HarnessError::io(format!("creating {}", dir.display()), e))?;
    let header = header_line(cfg);
    let hash = cfg.hash();
    let journal_path = dir.join(JOURNAL_FILE);
    let mut journal = Journal::open(&journal_path, &header, &hash)?;
    write(
        &dir.join(CONFIG_FILE),
        &serde_json::to_string_pretty(&json!({ "header": header, "config": cfg })).expect("config serializes"),
    )?;

    let (_, existing) = read_journal(&journal_path)?;
    let done: HashSet<String> = existing.iter().filter(|r| r.status.is_ok()).map(SweepRecord::key).collect();
    let pending: Vec<(&Params, u64)> = tasks
        .iter()
        .zip(&order)
        .filter(|(_, k)| !done.contains(*k))
        .map(|(t, _)| *t)
        .collect();
    let n_skipped = tasks.len() - pending.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))?;
    let (tx, rx) = mpsc::channel::<SweepRecord>();
    let mut write_error = None;
    std::thread::scope(|scope| {
        let pending = &pending;
        scope.spawn(move || {
            pool.install(|| {
                pending
                    .par_iter()
                    .for_each_with(tx, |tx, (p, seed)| {
                        let _ = tx.send(run_one(cfg, p, *seed));
                    })
            })
        });
        for rec in rx {
            if write_error.is_none() {
                if let Err(e) = journal.append(&rec) {
                    write_error = Some(e);
                }
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    drop(journal);

    let (_, all) = read_journal(&journal_path)?;
    let records = compact(all, &order);
    write(&dir.join(CSV_FILE), &to_csv(&records, &columns(cfg.tier), &header))?;
    let mut summary = aggregate(cfg.tier, &records);
    summary["header"] = json!(header);
    summary["n_tasks"] = json!(tasks.len());
    write(
        &dir.join(SUMMARY_FILE),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    for (name, body) in plot_files(cfg, &records, &header) {
        write(&dir.join(name), &body)?;
    }
    let n_ok = records.iter().filter(|r| r.status.is_ok()).count();
    Ok(RunOutcome {
        dir,
        n_tasks: tasks.len(),
        n_ok,
        n_failed: tasks.len() - n_ok,
        n_skipped,
        summary,
    })
}

/// Recompute aggregates from a journal (or a directory holding one) and
/// write `report.json` and `report.txt` next to it.
pub fn report(path: &Path) -> Result<(Value, String)> {
    let journal = if path.is_dir() { path.join(JOURNAL_FILE) } else { path.to_path_buf() };
    let dir = journal.parent().map(Path::to_path_buf).unwrap_or_default();
    let (hash, raw) = read_journal(&journal)?;
    let tier = match raw.first() {
        Some(r) => Some(r.tier),
        None => fs::read_to_string(dir.join(CONFIG_FILE))
            .ok()
            .and_then(|t| serde_json::from_str::<Value>(&t).ok())
            .and_then(|v| v["config"]["tier"].as_str().and_then(|s| s.parse::<Tier>().ok())),
    };
    if let Some(bad) = raw.iter().position(|r| Some(r.tier) != tier) {
        return Err(HarnessError::CorruptRecords {
            path: journal.clone(),
            line: bad + 2,
            message: "records from more than one tier".into(),
        });
    }
    let mut seen = HashSet::new();
    let order: Vec<String> = raw.iter().map(SweepRecord::key).filter(|k| seen.insert(k.clone())).collect();
    let records = compact(raw, &order);
    let mut value = match tier {
        Some(t) => aggregate(t, &records),
        None => json!({ "tier": null, "n_records": 0, "n_ok": 0, "n_failed": 0 }),
    };
    value["config_sha256"] = json!(hash);
    let text = render_text(&value);
    write(
        &dir.join(REPORT_JSON),
        &serde_json::to_string_pretty(&value).expect("report serializes"),
    )?;
    write(&dir.join(REPORT_TEXT), &text)?;
    Ok((value, text))
}
