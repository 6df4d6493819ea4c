//! Markdown report built only from the tables in a results directory.

use std::fmt::Write as _;
use std::path::Path;

use kstar_core::analysis::tables::{self, CurveRow, FitRow, RatioRow, SmoothnessRow};
use kstar_core::harness::study::{StudyTable, SUMMARY_FILE};
use kstar_core::Error;

pub const REPORT_FILE: &str = "report.md";
pub const REPORT_SCHEMA: &str = "kstar-report/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub text: String,
    pub sections: usize,
    /// Input files that were absent.
    pub missing: Vec<&'static str>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn present(dir: &Path, name: &'static str, missing: &mut Vec<&'static str>) -> bool {
    let ok = dir.join(name).exists();
    if !ok {
        missing.push(name);
    }
    ok
}

pub fn render(dir: &Path) -> Result<Rendered, Error> {
    let mut missing = Vec::new();
    let mut body = String::new();
    let mut sections = 0;

    if present(dir, SUMMARY_FILE, &mut missing) {
        let table = StudyTable::read_csv(&dir.join(SUMMARY_FILE))?;
        let curves: Vec<CurveRow> = tables::figure1_rows(&table);
        sections += 1;
        body.push_str("## Steps to result\n\n");
        for s in table.sparsities() {
            let _ = writeln!(body, "### s = {s}\n\n| B | K* | K*/K*(B_min) | complete | incomplete | infeasible |\n|---|---|---|---|---|---|");
            for e in table.entries.iter().filter(|e| (e.sparsity - s).abs() < 1e-9) {
                let norm = curves
                    .iter()
                    .find(|c| c.batch_size == e.batch_size && (c.sparsity - s).abs() < 1e-9)
                    .map(|c| c.k_normalized);
                let _ = writeln!(
                    body,
                    "| {} | {} | {} | {} | {} | {} |",
                    e.batch_size,
                    e.k_star.map_or("-".to_string(), |k| k.to_string()),
                    opt(norm),
                    e.n_complete,
                    e.n_incomplete,
                    e.n_infeasible
                );
            }
            body.push('\n');
        }
    }

    if present(dir, tables::FIT_FILE, &mut missing) {
        let rows: Vec<FitRow> = tables::read_table(&dir.join(tables::FIT_FILE), tables::FIT_SCHEMA)?;
        sections += 1;
        body.push_str("## Scaling fit\n\n| s | form | c1 | c2 | c1/c2 | residual |\n|---|---|---|---|---|---|\n");
        let mut seen: Vec<f64> = Vec::new();
        for r in &rows {
            if seen.iter().any(|s| (s - r.sparsity).abs() < 1e-9) {
                continue;
            }
            seen.push(r.sparsity);
            let crit = (r.c2 > 0.0).then(|| r.c1 / r.c2);
            let _ = writeln!(
                body,
                "| {} | {} | {:.4} | {:.4} | {} | {:.4} |",
                r.sparsity,
                r.form.as_str(),
                r.c1,
                r.c2,
                opt(crit),
                r.residual
            );
        }
        body.push('\n');
    }

    if present(dir, tables::SMOOTHNESS_FILE, &mut missing) {
        let rows: Vec<SmoothnessRow> = tables::read_table(&dir.join(tables::SMOOTHNESS_FILE), tables::SMOOTHNESS_SCHEMA)?;
        sections += 1;
        body.push_str("## Smoothness\n\n| s | mean L | beta | delta | samples |\n|---|---|---|---|---|\n");
        for r in &rows {
            let _ = writeln!(
                body,
                "| {} | {} | {:.4} | {:.4} | {} |",
                r.sparsity,
                opt(r.mean_lipschitz),
                r.beta,
                r.delta,
                r.samples
            );
        }
        body.push('\n');
    }

    if present(dir, tables::RATIOS_FILE, &mut missing) {
        let rows: Vec<RatioRow> = tables::read_table(&dir.join(tables::RATIOS_FILE), tables::RATIOS_SCHEMA)?;
        sections += 1;
        body.push_str("## Ratio decomposition\n\n| sparse | dense | delta_ratio | beta_ratio | L_ratio | c1_ratio | fitted c1 ratio | slowdown explained |\n|---|---|---|---|---|---|---|---|\n");
        for r in &rows {
            let _ = writeln!(
                body,
                "| {} | {} | {} | {} | {} | {} | {} | {} |",
                r.sparse,
                r.dense,
                r.delta_ratio,
                r.beta_ratio,
                r.lipschitz_ratio,
                r.c1_ratio,
                r.fitted_c1_ratio.map_or("-".to_string(), |v| v.to_string()),
                r.slowdown_explained
            );
        }
        body.push('\n');
    }

    let mut text = format!("<!-- {REPORT_SCHEMA} -->\n# kstar report\n\nSections: {sections}\n\n");
    text.push_str(&body);
    if !missing.is_empty() {
        text.push_str("## Missing inputs\n\n");
        for m in &missing {
            let _ = writeln!(text, "- {m}");
        }
    }
    Ok(Rendered { text, sections, missing })
}
