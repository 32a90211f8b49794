//! Sweep records, the append-only JSON-lines journal, and CSV compaction.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Tier;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Ok,
    Failed { reason: String },
}

impl TaskStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, TaskStatus::Ok)
    }
}

impl fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskStatus::Ok => f.write_str("ok"),
            TaskStatus::Failed { reason } => write!(f, "failed({reason})"),
        }
    }
}

/// One (configuration, seed) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub tier: Tier,
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    #[serde(with = "float_map")]
    pub metrics: BTreeMap<String, f64>,
    pub status: TaskStatus,
}

impl SweepRecord {
    pub fn key(&self) -> String {
        task_key(self.tier, &self.params, self.seed)
    }

    pub fn param(&self, name: &str) -> f64 {
        self.params.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn metric(&self, name: &str) -> f64 {
        self.metrics.get(name).copied().unwrap_or(f64::NAN)
    }

    pub fn flag(&self, name: &str) -> bool {
        self.metric(name) == 1.0
    }
}

/// Identity of a task: tier, parameters and seed.
pub fn task_key(tier: Tier, params: &BTreeMap<String, f64>, seed: u64) -> String {
    let mut s = format!("{tier}|");
    for (k, v) in params {
        let _ = write!(s, "{k}={v:?};");
    }
    let _ = write!(s, "|{seed}");
    s
}

/// Non-finite values are written as strings so the journal stays valid JSON.
mod float_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        let out: BTreeMap<&String, Value> = m
            .iter()
            .map(|(k, v)| {
                let v = if v.is_finite() {
                    Value::Num(*v)
                } else if v.is_nan() {
                    Value::Text("NaN".into())
                } else if *v > 0.0 {
                    Value::Text("inf".into())
                } else {
                    Value::Text("-inf".into())
                };
                (k, v)
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, f64>, D::Error> {
        let raw = BTreeMap::<String, Value>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let x = match v {
                    Value::Num(x) => x,
                    Value::Text(t) => match t.as_str() {
                        "NaN" => f64::NAN,
                        "inf" => f64::INFINITY,
                        "-inf" => f64::NEG_INFINITY,
                        other => return Err(serde::de::Error::custom(format!("bad metric value '{other}'"))),
                    },
                };
                Ok((k, x))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct JournalHeader {
    header: String,
    config_sha256: String,
}

/// Append-only JSON-lines file of records, headed by a line naming the
/// config hash it belongs to.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
}

pub const JOURNAL_FILE: &str = "records.jsonl";

impl Journal {
    /// Open for appending, writing the header if the file is new. Fails if
    /// the file belongs to a different config hash.
    pub fn open(path: &Path, header: &str, hash: &str) -> Result<Self> {
        let exists = path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        if exists {
            let (found, _) = read_journal(path)?;
            match found {
                Some(h) if h == hash => {}
                Some(h) => {
                    return Err(HarnessError::InvalidConfig(format!(
                        "{} holds results of config {h}, not {hash}; choose another --out",
                        path.display()
                    )))
                }
                None => {
                    return Err(HarnessError::CorruptRecords {
                        path: path.to_path_buf(),
                        line: 1,
                        message: "missing journal header".into(),
                    })
                }
            }
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| HarnessError::io(format!("opening {}", path.display()), e))?;
        if !exists {
            let h = JournalHeader {
                header: header.to_string(),
                config_sha256: hash.to_string(),
            };
            writeln!(file, "{}", serde_json::to_string(&h).expect("header serializes"))
                .map_err(|e| HarnessError::io("writing journal header", e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, rec: &SweepRecord) -> Result<()> {
        let line = serde_json::to_string(rec).expect("record serializes");
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| HarnessError::io(format!("appending to {}", self.path.display()), e))
    }
}

/// Parse a journal into its config hash and records. Blank lines are
/// skipped; anything else that fails to parse is reported with its line
/// number.
pub fn read_journal(path: &Path) -> Result<(Option<String>, Vec<SweepRecord>)> {
    let file = File::open(path).map_err(|e| HarnessError::io(format!("opening {}", path.display()), e))?;
    let mut hash = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(format!("reading {}", path.display()), e))?;
        let corrupt = |message: String| HarnessError::CorruptRecords {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<JournalHeader>(&line) {
                hash = Some(h.config_sha256);
                continue;
            }
        }
        let rec: SweepRecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
        records.push(rec);
    }
    Ok((hash, records))
}

/// Keep one record per task key (an ok record beats a failure, later beats
/// earlier) and order them as `order` lists the keys. Records whose key is
/// not in `order` are dropped.
pub fn compact(records: Vec<SweepRecord>, order: &[String]) -> Vec<SweepRecord> {
    let mut by_key: HashMap<String, SweepRecord> = HashMap::new();
    for r in records {
        let k = r.key();
        match by_key.get(&k) {
            Some(prev) if prev.status.is_ok() && !r.status.is_ok() => {}
            _ => {
                by_key.insert(k, r);
            }
        }
    }
    order.iter().filter_map(|k| by_key.remove(k)).collect()
}

/// Column layout of a tier's CSV.
#[derive(Debug, Clone, Copy)]
pub struct Columns {
    pub params: &'static [&'static str],
    pub metrics: &'static [&'static str],
    /// Metrics stored as 0/1 and written as `true`/`false`.
    pub flags: &'static [&'static str],
}

fn format_value(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn to_csv(records: &[SweepRecord], cols: &Columns, header: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    let names: Vec<&str> = cols
        .params
        .iter()
        .copied()
        .chain(std::iter::once("seed"))
        .chain(cols.metrics.iter().copied())
        .chain(std::iter::once("status"))
        .collect();
    let _ = writeln!(out, "{}", names.join(","));
    for r in records {
        let mut row: Vec<String> = cols.params.iter().map(|p| format_value(r.param(p))).collect();
        row.push(r.seed.to_string());
        for m in cols.metrics {
            let v = r.metric(m);
            if cols.flags.contains(m) && !v.is_nan() {
                row.push((v == 1.0).to_string());
            } else {
                row.push(format_value(v));
            }
        }
        row.push(r.status.to_string().replace([',', '\n'], ";"));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
