//! Study orchestration: the trial budget at every (batch size, sparsity)
//! point, resumable line-delimited records and the steps-to-result table.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::trial::{run_indexed_trial, trial_key, StudyPoint, TrialRecord, TrialStatus, Workload};
use crate::quasirand::{map_to_space, Metaparams, SobolState};

pub const RECORDS_FILE: &str = "trials.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_SCHEMA: &str = "kstar-summary/1";

/// Lowest `steps_to_goal` among complete records, with the record that set it.
/// Ties keep the lexicographically smallest trial key.
pub fn steps_to_result(records: &[TrialRecord]) -> Option<(u64, &TrialRecord)> {
    records
        .iter()
        .filter(|r| r.status == TrialStatus::Complete)
        .filter_map(|r| r.steps_to_goal.map(|k| (k, r)))
        .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.key.cmp(&b.1.key)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyEntry {
    pub batch_size: usize,
    pub sparsity: f64,
    pub k_star: Option<u64>,
    pub best_key: Option<String>,
    pub eta_star: Option<f64>,
    pub momentum_star: Option<f64>,
    pub n_complete: usize,
    pub n_incomplete: usize,
    pub n_infeasible: usize,
}

impl StudyEntry {
    pub fn from_records(point: StudyPoint, records: &[TrialRecord]) -> Self {
        let count = |s| records.iter().filter(|r| r.status == s).count();
        let best = steps_to_result(records);
        StudyEntry {
            batch_size: point.batch_size,
            sparsity: point.sparsity,
            k_star: best.map(|(k, _)| k),
            best_key: best.map(|(_, r)| r.key.clone()),
            eta_star: best.and_then(|(_, r)| r.metaparams.get("eta_bar").copied()),
            momentum_star: best.and_then(|(_, r)| r.metaparams.get("momentum").copied()),
            n_complete: count(TrialStatus::Complete),
            n_incomplete: count(TrialStatus::Incomplete),
            n_infeasible: count(TrialStatus::Infeasible),
        }
    }
}

/// Steps-to-result per study point, ordered by sparsity then batch size.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub entries: Vec<StudyEntry>,
}

impl StudyTable {
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            a.sparsity
                .total_cmp(&b.sparsity)
                .then(a.batch_size.cmp(&b.batch_size))
        });
    }

    pub fn get(&self, batch_size: usize, sparsity: f64) -> Option<&StudyEntry> {
        self.entries
            .iter()
            .find(|e| e.batch_size == batch_size && same_sparsity(e.sparsity, sparsity))
    }

    pub fn k_star(&self, batch_size: usize, sparsity: f64) -> Option<u64> {
        self.get(batch_size, sparsity).and_then(|e| e.k_star)
    }

    pub fn sparsities(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.entries {
            if !out.iter().any(|&s| same_sparsity(s, e.sparsity)) {
                out.push(e.sparsity);
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// `(B, K*)` pairs with a measured K* at one sparsity level.
    pub fn curve(&self, sparsity: f64) -> Vec<(usize, u64)> {
        let mut pts: Vec<(usize, u64)> = self
            .entries
            .iter()
            .filter(|e| same_sparsity(e.sparsity, sparsity))
            .filter_map(|e| e.k_star.map(|k| (e.batch_size, k)))
            .collect();
        pts.sort_unstable();
        pts
    }

    /// Points that produced no complete trial.
    pub fn missing(&self) -> Vec<&StudyEntry> {
        self.entries.iter().filter(|e| e.k_star.is_none()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = format!("# {SUMMARY_SCHEMA}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record([
                "B",
                "s",
                "K_star",
                "eta_star",
                "momentum_star",
                "n_complete",
                "n_incomplete",
                "n_infeasible",
                "best_key",
            ])
            .map_err(csv_io(path))?;
            for e in &self.entries {
                w.write_record([
                    e.batch_size.to_string(),
                    e.sparsity.to_string(),
                    opt_str(e.k_star),
                    opt_str(e.eta_star),
                    opt_str(e.momentum_star),
                    e.n_complete.to_string(),
                    e.n_incomplete.to_string(),
                    e.n_infeasible.to_string(),
                    e.best_key.clone().unwrap_or_default(),
                ])
                .map_err(csv_io(path))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        write_atomic(path, &buf)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
        let mut entries = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(csv_io(path))?;
            let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
            let bad = |what: &str| Error::Format {
                path: path.to_path_buf(),
                offset: row.position().map_or(0, |p| p.byte()),
                message: format!("row {}: bad {what}", line + 1),
            };
            let parse_opt = |i: usize, what: &str| -> Result<Option<f64>> {
                let s = field(i);
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse().map(Some).map_err(|_| bad(what))
                }
            };
            entries.push(StudyEntry {
                batch_size: field(0).parse().map_err(|_| bad("B"))?,
                sparsity: field(1).parse().map_err(|_| bad("s"))?,
                k_star: parse_opt(2, "K_star")?.map(|k| k as u64),
                best_key: Some(field(8)).filter(|k| !k.is_empty()),
                eta_star: parse_opt(3, "eta_star")?,
                momentum_star: parse_opt(4, "momentum_star")?,
                n_complete: field(5).parse().map_err(|_| bad("n_complete"))?,
                n_incomplete: field(6).parse().map_err(|_| bad("n_incomplete"))?,
                n_infeasible: field(7).parse().map_err(|_| bad("n_infeasible"))?,
            });
        }
        let mut t = StudyTable { entries };
        t.sort();
        Ok(t)
    }
}

pub(crate) fn same_sparsity(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e.to_string()))
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Append-only record file. Each record is written as one line with a
/// single write call; a torn final line is ignored when reading back.
pub struct RecordSink {
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordSink {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RecordSink {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &TrialRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record).map_err(|e| Error::io(&self.path, e.into()))?;
        line.push(b'\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(&line)
            .and_then(|_| f.flush())
            .map_err(|e| Error::Trial {
                key: record.key.clone(),
                source: Box::new(Error::io(&self.path, e)),
            })
    }
}

/// Reads every well-formed record; malformed lines are skipped with a warning.
/// Later duplicates of a key are ignored.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TrialRecord>(&line) {
            Ok(r) => {
                if seen.insert(r.key.clone()) {
                    out.push(r);
                }
            }
            Err(e) => warn!("{}:{}: skipping unreadable record ({e})", path.display(), i + 1),
        }
    }
    Ok(out)
}

/// One planned trial.
#[derive(Debug, Clone)]
pub struct TrialPlan {
    pub key: String,
    pub point: StudyPoint,
    pub index: usize,
    pub metaparams: Metaparams,
    pub seed: u64,
}

/// The budget of quasi-random metaparameter assignments, shared by every study point.
pub fn draw_metaparams(config: &ExperimentConfig) -> Result<Vec<Metaparams>> {
    let mut sobol = SobolState::new(config.search.len())?;
    (0..config.study.budget)
        .map(|_| map_to_space(&sobol.next_point(), &config.search))
        .collect()
}

pub fn plan(config: &ExperimentConfig) -> Result<Vec<TrialPlan>> {
    let assignments = draw_metaparams(config)?;
    let mut out = Vec::new();
    for &s in &config.study.sparsities {
        for &b in &config.study.batch_sizes {
            let point = StudyPoint::new(b, s);
            for (index, mp) in assignments.iter().enumerate() {
                out.push(TrialPlan {
                    key: trial_key(&config.workload.id, point, index, config.seed),
                    point,
                    index,
                    metaparams: mp.clone(),
                    seed: config.seed,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub table: StudyTable,
    /// Trials executed in this invocation.
    pub executed: usize,
    /// Trials whose records were already on disk.
    pub reused: usize,
}

/// Runs (or resumes) a study, writing records and the summary under `out_dir`.
pub fn run_study(config: &ExperimentConfig, out_dir: &Path) -> Result<StudyOutcome> {
    config.validate()?;
    let workload = Workload::prepare(&config.workload, &config.base_dir)?;
    for &b in &config.study.batch_sizes {
        workload.check_point(StudyPoint::new(b, 0.0))?;
    }
    run_study_with(config, &workload, out_dir)
}

/// Like [`run_study`] with an already prepared workload.
pub fn run_study_with(config: &ExperimentConfig, workload: &Workload, out_dir: &Path) -> Result<StudyOutcome> {
    if workload.id != config.workload.id {
        return Err(Error::config(format!(
            "prepared workload '{}' does not match configured workload '{}'",
            workload.id, config.workload.id
        )));
    }
    let records_path = out_dir.join(RECORDS_FILE);
    let existing: HashMap<String, TrialRecord> = read_records(&records_path)?
        .into_iter()
        .map(|r| (r.key.clone(), r))
        .collect();
    let plans = plan(config)?;
    let pending: Vec<&TrialPlan> = plans.iter().filter(|p| !existing.contains_key(&p.key)).collect();
    let reused = plans.len() - pending.len();
    info!(
        "study '{}': {} trials planned, {} already recorded",
        config.name,
        plans.len(),
        reused
    );

    let sink = RecordSink::open(&records_path)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let fresh: Vec<TrialRecord> = pool.install(|| {
        pending
            .par_iter()
            .map(|p| {
                let rec = run_indexed_trial(workload, p.point, p.index, &p.metaparams, p.seed).map_err(|e| {
                    Error::Trial {
                        key: p.key.clone(),
                        source: Box::new(e),
                    }
                })?;
                sink.append(&rec)?;
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut by_key = existing;
    for r in fresh {
        by_key.insert(r.key.clone(), r);
    }
    let mut grouped: BTreeMap<(u64, usize), Vec<TrialRecord>> = BTreeMap::new();
    for p in &plans {
        let r = by_key[&p.key].clone();
        grouped
            .entry((p.point.sparsity.to_bits(), p.point.batch_size))
            .or_default()
            .push(r);
    }
    let mut table = StudyTable {
        entries: grouped
            .into_values()
            .map(|recs| {
                let point = StudyPoint::new(recs[0].batch_size, recs[0].sparsity);
                StudyEntry::from_records(point, &recs)
            })
            .collect(),
    };
    table.sort();
    table.write_csv(&out_dir.join(SUMMARY_FILE))?;
    Ok(StudyOutcome {
        table,
        executed: pending.len(),
        reused,
    })
}
