//! Comma-separated result tables. Every file starts with a `# kstar-<kind>/<n>` line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::fit::{fit_table, FitForm, ScalingFit};
use crate::analysis::smoothness::{SmoothnessMeasurement, SmoothnessTrace};
use crate::analysis::theory::RatioReport;
use crate::error::{Error, Result};
use crate::harness::study::{write_atomic, StudyTable};

pub const FIT_FILE: &str = "fit.csv";
pub const TRACE_FILE: &str = "lipschitz.csv";
pub const SMOOTHNESS_FILE: &str = "smoothness.csv";
pub const RATIOS_FILE: &str = "ratios.csv";
pub const FIGURE1_FILE: &str = "figure1.csv";
pub const FIGURE4_FILE: &str = "figure4.csv";

pub const FIT_SCHEMA: &str = "kstar-fit/1";
pub const TRACE_SCHEMA: &str = "kstar-lipschitz/1";
pub const SMOOTHNESS_SCHEMA: &str = "kstar-smoothness/1";
pub const RATIOS_SCHEMA: &str = "kstar-ratios/1";
pub const FIGURE1_SCHEMA: &str = "kstar-figure1/1";
pub const FIGURE4_SCHEMA: &str = "kstar-figure4/1";

/// One fitted prediction: the constants repeat on every row of a sparsity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "s")]
    pub sparsity: f64,
    #[serde(rename = "K_star")]
    pub k_star: Option<u64>,
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    pub form: FitForm,
    pub c1: f64,
    pub c2: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    #[serde(rename = "s")]
    pub sparsity: f64,
    pub step: u64,
    pub lipschitz_hat: Option<f64>,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessRow {
    #[serde(rename = "s")]
    pub sparsity: f64,
    #[serde(rename = "mean_L")]
    pub mean_lipschitz: Option<f64>,
    pub beta: f64,
    pub delta: f64,
    pub samples: usize,
}

impl SmoothnessRow {
    pub fn from_measurement(m: &SmoothnessMeasurement) -> Self {
        SmoothnessRow {
            sparsity: m.sparsity(),
            mean_lipschitz: m.trace.average(),
            beta: m.beta,
            delta: m.delta,
            samples: m.trace.samples.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    #[serde(rename = "s_sparse")]
    pub sparse: f64,
    #[serde(rename = "s_dense")]
    pub dense: f64,
    pub delta_ratio: f64,
    pub beta_ratio: f64,
    #[serde(rename = "L_ratio")]
    pub lipschitz_ratio: f64,
    pub c1_ratio: f64,
    /// Ratio of the two directly fitted `c1`, when a fit table was available.
    pub fitted_c1_ratio: Option<f64>,
    pub slowdown_explained: bool,
}

impl RatioRow {
    pub fn new(sparse: f64, dense: f64, report: &RatioReport, fitted_c1_ratio: Option<f64>) -> Self {
        RatioRow {
            sparse,
            dense,
            delta_ratio: report.delta_ratio,
            beta_ratio: report.beta_ratio,
            lipschitz_ratio: report.lipschitz_ratio,
            c1_ratio: report.c1_ratio,
            fitted_c1_ratio,
            slowdown_explained: report.slowdown_explained,
        }
    }
}

/// Figure-1 curve point; `K_norm` divides by the `K*` at the smallest measured B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    #[serde(rename = "s")]
    pub sparsity: f64,
    #[serde(rename = "B")]
    pub batch_size: usize,
    #[serde(rename = "K_star")]
    pub k_star: u64,
    #[serde(rename = "K_norm")]
    pub k_normalized: f64,
}

pub fn write_table<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    let mut buf = format!("# {schema}\n").into_bytes();
    {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(&mut buf);
        for row in rows {
            w.serialize(row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if rows.is_empty() {
        // no row means no header from serde; keep the file parseable
        buf.extend_from_slice(b"\n");
    }
    write_atomic(path, &buf)
}

/// Reads a table, rejecting files whose schema line differs from `schema`.
pub fn read_table<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let found = first.trim().trim_start_matches('#').trim();
    if found != schema {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("expected schema {schema}, found {found:?}"),
        });
    }
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if rest.iter().all(|b| b.is_ascii_whitespace()) {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(rest.as_slice());
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: e.to_string(),
    }
}

/// Fits every sparsity level of `table` that has at least two measured batch sizes.
///
/// Returns the fits together with the skipped sparsities and the reason for each.
pub fn fit_study(table: &StudyTable, form: FitForm) -> (Vec<(f64, ScalingFit)>, Vec<(f64, String)>) {
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for s in table.sparsities() {
        match fit_table(&table.curve(s), form) {
            Ok(fit) => fits.push((s, fit)),
            Err(e) => skipped.push((s, e.to_string())),
        }
    }
    (fits, skipped)
}

/// Per-B predictions for every grid batch size of each fitted sparsity.
pub fn fit_rows(table: &StudyTable, fits: &[(f64, ScalingFit)]) -> Vec<FitRow> {
    let mut rows = Vec::new();
    for (s, fit) in fits {
        let mut sizes: Vec<usize> = table
            .entries
            .iter()
            .filter(|e| crate::harness::study::same_sparsity(e.sparsity, *s))
            .map(|e| e.batch_size)
            .collect();
        sizes.sort_unstable();
        sizes.dedup();
        for b in sizes {
            rows.push(FitRow {
                batch_size: b,
                sparsity: *s,
                k_star: table.k_star(b, *s),
                k_hat: fit.predict(b as f64),
                form: fit.form,
                c1: fit.c1,
                c2: fit.c2,
                residual: fit.residual,
            });
        }
    }
    rows
}

/// Measured curves, each divided by its value at the smallest measured B.
pub fn figure1_rows(table: &StudyTable) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for s in table.sparsities() {
        let curve = table.curve(s);
        let Some(&(_, k0)) = curve.first() else {
            continue;
        };
        for (b, k) in curve {
            rows.push(CurveRow {
                sparsity: s,
                batch_size: b,
                k_star: k,
                k_normalized: k as f64 / k0 as f64,
            });
        }
    }
    rows
}

pub fn trace_rows(traces: &[SmoothnessTrace]) -> Vec<TraceRow> {
    traces
        .iter()
        .flat_map(|t| {
            t.samples.iter().map(move |s| TraceRow {
                sparsity: t.sparsity,
                step: s.step,
                lipschitz_hat: s.lipschitz_hat,
                loss: s.loss,
            })
        })
        .collect()
}

/// Wide layout of the traces: one `step` column, then one `L_s=<s>` column per trace.
pub fn write_figure4(path: &Path, traces: &[SmoothnessTrace]) -> Result<()> {
    let mut steps: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        for sample in &t.samples {
            steps.entry(sample.step).or_insert_with(|| vec![None; traces.len()])[i] = sample.lipschitz_hat;
        }
    }
    let mut buf = format!("# {FIGURE4_SCHEMA}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["step".to_string()];
        header.extend(traces.iter().map(|t| format!("L_s={}", t.sparsity)));
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for (step, vals) in &steps {
            let mut row = vec![step.to_string()];
            row.extend(vals.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_atomic(path, &buf)
}
