use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kstar_core::analysis::tables::{self, CurveRow, FitRow, RatioRow, SmoothnessRow};
use kstar_core::analysis::{ratio_report, FitForm, TheoryParams};
use kstar_core::harness::study::SUMMARY_FILE;
use kstar_core::harness::{StudyEntry, StudyTable};

fn kstar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kstar")).args(args).output().unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn entry(b: usize, s: f64, k: Option<u64>) -> StudyEntry {
    StudyEntry {
        batch_size: b,
        sparsity: s,
        k_star: k,
        best_key: None,
        eta_star: k.map(|_| 0.1),
        momentum_star: None,
        n_complete: k.map_or(0, |_| 1),
        n_incomplete: k.map_or(1, |_| 0),
        n_infeasible: 0,
    }
}

/// K = 1024 / B + 50 at B = 2..64 for s = 0.
fn write_exact_summary(dir: &Path) {
    let mut t = StudyTable {
        entries: (1..=6)
            .map(|r| {
                let b = 1usize << r;
                entry(b, 0.0, Some(1024 / b as u64 + 50))
            })
            .collect(),
    };
    t.sort();
    t.write_csv(&dir.join(SUMMARY_FILE)).unwrap();
}

#[test]
fn smoke_run_writes_one_row_per_point_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs_dir().join("smoke.toml");
    let out = dir.path().to_str().unwrap();
    let first = kstar(&["run", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).starts_with("9 trials executed, 0 reused"));
    let table = StudyTable::read_csv(&dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(table.entries.len(), 3);

    let second = kstar(&["run", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(second.status.code(), Some(0));
    assert!(stdout(&second).starts_with("0 trials executed, 9 reused"));
    assert_eq!(StudyTable::read_csv(&dir.path().join(SUMMARY_FILE)).unwrap(), table);
}

#[test]
fn dry_run_echoes_protocol_goals() {
    for (file, goal) in [("mnist.toml", "0.02"), ("fashion-mnist.toml", "0.12"), ("cifar10.toml", "0.4")] {
        let o = kstar(&["run", "--config", configs_dir().join(file).to_str().unwrap(), "--dry-run"]);
        assert_eq!(o.status.code(), Some(0), "{file}");
        let text = stdout(&o);
        assert!(text.contains(&format!("goal_error = {goal}\n")), "{file}: {text}");
        assert!(text.contains("max_steps = 40000"), "{file}");
        assert!(text.contains("budget = 100"), "{file}");
    }
}

#[test]
fn grid_override_and_budget_flags_apply() {
    let cfg = configs_dir().join("smoke.toml");
    let o = kstar(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--dry-run",
        "--grid-override",
        "B=8,32;s=0,0.5",
        "--budget",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text: String = stdout(&o).chars().filter(|c| !c.is_whitespace()).collect();
    assert!(text.contains("batch_sizes=[8,32,]"), "{text}");
    assert!(text.contains("sparsities=[0.0,0.5,]"), "{text}");
    assert!(text.contains("budget=5"), "{text}");
}

#[test]
fn fit_recovers_exact_fixture() {
    let dir = tempfile::tempdir().unwrap();
    write_exact_summary(dir.path());
    let out = dir.path().to_str().unwrap();
    let o = kstar(&["fit", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("c1=1024.0000 c2=50.0000 residual=0.0000"), "{}", stdout(&o));
    let rows: Vec<FitRow> = tables::read_table(&dir.path().join(tables::FIT_FILE), tables::FIT_SCHEMA).unwrap();
    assert!(rows.iter().all(|r| r.residual < 1e-12));
    assert!(rows.iter().all(|r| r.form == FitForm::FixedLr));

    let o = kstar(&["fit", "--out", out, "--form", "decay"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("c~1=1024.0000 c~2=50.0000"), "{}", stdout(&o));
    let rows: Vec<FitRow> = tables::read_table(&dir.path().join(tables::FIT_FILE), tables::FIT_SCHEMA).unwrap();
    assert!(rows.iter().all(|r| r.form == FitForm::DecayingLr));
}

#[test]
fn normalised_curve_starts_at_one() {
    let dir = tempfile::tempdir().unwrap();
    write_exact_summary(dir.path());
    let o = kstar(&["fit", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<CurveRow> =
        tables::read_table(&dir.path().join(tables::FIGURE1_FILE), tables::FIGURE1_SCHEMA).unwrap();
    assert_eq!(rows[0].batch_size, 2);
    assert_eq!(rows[0].k_normalized, 1.0);
    assert!((rows[1].k_normalized - 306.0 / 562.0).abs() < 1e-12);
}

#[test]
fn fit_skips_levels_without_enough_points() {
    let dir = tempfile::tempdir().unwrap();
    let t = StudyTable {
        entries: vec![entry(2, 0.0, Some(100)), entry(4, 0.0, Some(60)), entry(2, 0.9, Some(80)), entry(4, 0.9, None)],
    };
    t.write_csv(&dir.path().join(SUMMARY_FILE)).unwrap();
    let o = kstar(&["fit", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skip s=0.9"));
}

#[test]
fn report_on_empty_directory_has_no_sections() {
    let dir = tempfile::tempdir().unwrap();
    let o = kstar(&["report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let text = std::fs::read_to_string(dir.path().join("report.md")).unwrap();
    assert!(text.contains("Sections: 0"));
    assert!(text.contains("## Missing inputs"));
}

#[test]
fn report_includes_fits_after_fit() {
    let dir = tempfile::tempdir().unwrap();
    write_exact_summary(dir.path());
    let out = dir.path().to_str().unwrap();
    assert_eq!(kstar(&["fit", "--out", out]).status.code(), Some(0));
    let o = kstar(&["report", "--out", out]);
    let text = stdout(&o);
    assert!(text.contains("Sections: 2"), "{text}");
    assert!(text.contains("## Steps to result") && text.contains("## Scaling fit"));
}

#[test]
fn ratios_pass_measurements_through() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        SmoothnessRow {
            sparsity: 0.0,
            mean_lipschitz: Some(0.57),
            beta: 197.06,
            delta: 4.66,
            samples: 20,
        },
        SmoothnessRow {
            sparsity: 0.9,
            mean_lipschitz: Some(1.76),
            beta: 107.39,
            delta: 4.68,
            samples: 20,
        },
    ];
    tables::write_table(&dir.path().join(tables::SMOOTHNESS_FILE), tables::SMOOTHNESS_SCHEMA, &rows).unwrap();
    let o = kstar(&["ratios", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got: Vec<RatioRow> = tables::read_table(&dir.path().join(tables::RATIOS_FILE), tables::RATIOS_SCHEMA).unwrap();
    let want = ratio_report(
        &TheoryParams::measured(1.76, 107.39, 4.68),
        &TheoryParams::measured(0.57, 197.06, 4.66),
    )
    .unwrap();
    assert_eq!(got[0].c1_ratio, want.c1_ratio);
    assert_eq!(got[0].delta_ratio, want.delta_ratio);
    assert_eq!(got[0].fitted_c1_ratio, None);
    assert!(got[0].slowdown_explained);
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    assert_eq!(kstar(&["run", "--config", missing.to_str().unwrap()]).status.code(), Some(4));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "name = \"x\"\n[workload]\nid = 3\n").unwrap();
    assert_eq!(kstar(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let cfg = configs_dir().join("smoke.toml");
    let o = kstar(&["lipschitz", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(kstar(&["fit", "--out", dir.path().to_str().unwrap()]).status.code(), Some(4));
    assert_eq!(kstar(&["fit", "--out", ".", "--form", "nope"]).status.code(), Some(2));
}
