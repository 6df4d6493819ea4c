//! The `kstar` command line: study runs, fits, smoothness traces, ratio tables and reports.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kstar_core::analysis::tables::{self, FitRow, RatioRow, SmoothnessRow};
use kstar_core::analysis::{measure_smoothness, ratio_report, FitForm, TheoryParams};
use kstar_core::harness::config::ExperimentConfig;
use kstar_core::harness::study::{self, StudyTable};
use kstar_core::harness::trial::Workload;
use kstar_core::Error;

pub mod report;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_PARTIAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "kstar", version, about = "Measure and model steps-to-result across batch sizes and sparsity levels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) the study grid and write trial records and the summary table.
    Run(RunArgs),
    /// Fit K* = c1/B + c2 per sparsity level of a summary table.
    Fit(FitArgs),
    /// Trace the local Lipschitz constant and measure β and Δ per sparsity level.
    Lipschitz(LipschitzArgs),
    /// Decompose the sparse/dense c1 ratio into Δ, β and L ratios.
    Ratios(RatiosArgs),
    /// Render a markdown report from the files in a results directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Results directory; defaults to the config's `out_dir`, then `results/<name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides the config.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Base seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Replace grid axes, e.g. `B=2,8,32;s=0,0.9`.
    #[arg(long)]
    pub grid_override: Option<String>,
    /// Trials per study point.
    #[arg(long)]
    pub budget: Option<usize>,
    /// Validate and print the effective config without running.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Results directory receiving `fit.csv` and `figure1.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Summary table; defaults to `<out>/summary.csv`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// `fixed` (K = c1/B + c2) or `decay` (K = c~1/B + c~2).
    #[arg(long, default_value = "fixed", value_parser = parse_form)]
    pub form: FitForm,
}

#[derive(Debug, Args)]
pub struct LipschitzArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Steps between estimates.
    #[arg(long)]
    pub stride: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RatiosArgs {
    /// Results directory holding `smoothness.csv` (and optionally `fit.csv`).
    #[arg(long)]
    pub out: PathBuf,
    /// Reference sparsity level.
    #[arg(long, default_value_t = 0.0)]
    pub dense: f64,
    /// Sparsity level compared against the reference.
    #[arg(long, default_value_t = 0.9)]
    pub sparse: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results directory; the report is written to `report.md` inside it.
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_form(s: &str) -> Result<FitForm, String> {
    FitForm::parse(s).ok_or_else(|| format!("unknown form {s:?}; expected fixed or decay"))
}

/// Stable exit code for an error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::InsufficientData(_) => EXIT_PARTIAL,
        Error::Trial { source, .. } => exit_code(source),
        _ => EXIT_FAILURE,
    }
}

/// Runs a parsed command and returns its exit code; errors are reported on stderr.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Lipschitz(a) => cmd_lipschitz(&a),
        Command::Ratios(a) => cmd_ratios(&a),
        Command::Report(a) => cmd_report(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone().map(|p| cfg.base_dir.join(p)))
        .unwrap_or_else(|| PathBuf::from("results").join(&cfg.name));
    Ok((cfg, out))
}

/// Applies `B=...;s=...` to the study grid.
pub fn apply_grid_override(cfg: &mut ExperimentConfig, spec: &str) -> Result<(), Error> {
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("grid override {part:?} lacks '='")))?;
        let items = values.split(',').map(str::trim).filter(|v| !v.is_empty());
        match key.trim() {
            "B" | "batch_sizes" => {
                cfg.study.batch_sizes = items
                    .map(|v| v.parse().map_err(|_| Error::config(format!("bad batch size {v:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            "s" | "sparsities" => {
                cfg.study.sparsities = items
                    .map(|v| v.parse().map_err(|_| Error::config(format!("bad sparsity {v:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            other => return Err(Error::config(format!("unknown grid axis {other:?}; use B or s"))),
        }
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<u8, Error> {
    let (mut cfg, out) = load_config(&args.common)?;
    if let Some(g) = &args.grid_override {
        apply_grid_override(&mut cfg, g)?;
    }
    if let Some(b) = args.budget {
        cfg.study.budget = b;
    }
    cfg.validate()?;
    if args.dry_run {
        print!("{}", cfg.to_toml_string());
        println!("# results directory: {}", out.display());
        return Ok(EXIT_OK);
    }
    let outcome = study::run_study(&cfg, &out)?;
    tables::write_table(
        &out.join(tables::FIGURE1_FILE),
        tables::FIGURE1_SCHEMA,
        &tables::figure1_rows(&outcome.table),
    )?;
    println!(
        "{} trials executed, {} reused; results in {}",
        outcome.executed,
        outcome.reused,
        out.display()
    );
    for e in &outcome.table.entries {
        println!(
            "B={} s={} K*={} complete={} incomplete={} infeasible={}",
            e.batch_size,
            e.sparsity,
            e.k_star.map_or("-".to_string(), |k| k.to_string()),
            e.n_complete,
            e.n_incomplete,
            e.n_infeasible
        );
    }
    let missing = outcome.table.missing();
    if missing.is_empty() {
        Ok(EXIT_OK)
    } else {
        for e in missing {
            eprintln!("no complete trial at B={} s={}", e.batch_size, e.sparsity);
        }
        Ok(EXIT_PARTIAL)
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<u8, Error> {
    let summary = args
        .summary
        .clone()
        .unwrap_or_else(|| args.out.join(study::SUMMARY_FILE));
    let table = StudyTable::read_csv(&summary)?;
    let (fits, skipped) = tables::fit_study(&table, args.form);
    let rows = tables::fit_rows(&table, &fits);
    tables::write_table(&args.out.join(tables::FIT_FILE), tables::FIT_SCHEMA, &rows)?;
    tables::write_table(
        &args.out.join(tables::FIGURE1_FILE),
        tables::FIGURE1_SCHEMA,
        &tables::figure1_rows(&table),
    )?;
    let (l1, l2) = args.form.constant_labels();
    for (s, fit) in &fits {
        println!(
            "s={s} {l1}={:.4} {l2}={:.4} residual={:.4} points={}",
            fit.c1, fit.c2, fit.residual, fit.points
        );
    }
    for (s, why) in &skipped {
        eprintln!("skip s={s}: {why}");
    }
    Ok(if skipped.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}

pub fn cmd_lipschitz(args: &LipschitzArgs) -> Result<u8, Error> {
    let (cfg, out) = load_config(&args.common)?;
    let mut smooth = cfg
        .smoothness
        .clone()
        .ok_or_else(|| Error::config("config has no [smoothness] section"))?;
    if let Some(stride) = args.stride {
        if stride == 0 {
            return Err(Error::config("--stride must be >= 1"));
        }
        smooth.stride = stride;
    }
    let workload = Workload::prepare(&cfg.workload, &cfg.base_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let measured = pool.install(|| measure_smoothness(&workload, &smooth, cfg.seed))?;
    let traces: Vec<_> = measured.iter().map(|m| m.trace.clone()).collect();
    tables::write_table(&out.join(tables::TRACE_FILE), tables::TRACE_SCHEMA, &tables::trace_rows(&traces))?;
    tables::write_figure4(&out.join(tables::FIGURE4_FILE), &traces)?;
    let rows: Vec<SmoothnessRow> = measured.iter().map(SmoothnessRow::from_measurement).collect();
    tables::write_table(&out.join(tables::SMOOTHNESS_FILE), tables::SMOOTHNESS_SCHEMA, &rows)?;
    for r in &rows {
        println!(
            "s={} mean_L={} beta={:.6} delta={:.6} samples={}",
            r.sparsity,
            r.mean_lipschitz.map_or("-".to_string(), |l| format!("{l:.6}")),
            r.beta,
            r.delta,
            r.samples
        );
    }
    Ok(EXIT_OK)
}

fn find_row(rows: &[SmoothnessRow], s: f64, path: &Path) -> Result<TheoryParams, Error> {
    let row = rows
        .iter()
        .find(|r| (r.sparsity - s).abs() < 1e-9)
        .ok_or_else(|| Error::InsufficientData(format!("{} has no row for s={s}", path.display())))?;
    let l = row
        .mean_lipschitz
        .ok_or_else(|| Error::InsufficientData(format!("no Lipschitz estimate for s={s}")))?;
    Ok(TheoryParams::measured(l, row.beta, row.delta))
}

/// `c1(sparse) / c1(dense)` from a fit table, when both levels were fitted.
pub fn fitted_c1_ratio(rows: &[FitRow], sparse: f64, dense: f64) -> Option<f64> {
    let c1 = |s: f64| rows.iter().find(|r| (r.sparsity - s).abs() < 1e-9).map(|r| r.c1);
    match (c1(sparse), c1(dense)) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

pub fn cmd_ratios(args: &RatiosArgs) -> Result<u8, Error> {
    let path = args.out.join(tables::SMOOTHNESS_FILE);
    let rows: Vec<SmoothnessRow> = tables::read_table(&path, tables::SMOOTHNESS_SCHEMA)?;
    let sparse = find_row(&rows, args.sparse, &path)?;
    let dense = find_row(&rows, args.dense, &path)?;
    let report = ratio_report(&sparse, &dense)?;
    let fit_path = args.out.join(tables::FIT_FILE);
    let fitted = if fit_path.exists() {
        let fit_rows: Vec<FitRow> = tables::read_table(&fit_path, tables::FIT_SCHEMA)?;
        fitted_c1_ratio(&fit_rows, args.sparse, args.dense)
    } else {
        None
    };
    let row = RatioRow::new(args.sparse, args.dense, &report, fitted);
    tables::write_table(&args.out.join(tables::RATIOS_FILE), tables::RATIOS_SCHEMA, &[row])?;
    println!(
        "delta_ratio={:.4} beta_ratio={:.4} L_ratio={:.4} c1_ratio={:.4} fitted_c1_ratio={} slowdown_explained={}",
        row.delta_ratio,
        row.beta_ratio,
        row.lipschitz_ratio,
        row.c1_ratio,
        row.fitted_c1_ratio.map_or("-".to_string(), |r| format!("{r:.4}")),
        row.slowdown_explained
    );
    Ok(EXIT_OK)
}

pub fn cmd_report(args: &ReportArgs) -> Result<u8, Error> {
    let rendered = report::render(&args.out)?;
    let path = args.out.join(report::REPORT_FILE);
    study::write_atomic(&path, rendered.text.as_bytes())?;
    print!("{}", rendered.text);
    Ok(if rendered.missing.is_empty() { EXIT_OK } else { EXIT_PARTIAL })
}
