use std::process::Command;

use arnoldi_tikhonov_cli::config::{ConfigFile, ExperimentSpec, RuleSpec};
use arnoldi_tikhonov_cli::runner::{
    run_alpha_sweep, run_discrepancy_table, run_table, write_csv, CSV_HEADER,
};

fn spec_from(file: ConfigFile) -> ExperimentSpec {
    ExperimentSpec::resolve(&file).expect("valid config")
}

fn csv_string(rows: &[arnoldi_tikhonov_cli::runner::TableRow]) -> String {
    let mut buffer = Vec::new();
    write_csv(&mut buffer, rows).unwrap();
    String::from_utf8(buffer).unwrap()
}

#[test]
fn table_output_is_byte_deterministic() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(300),
        ell: Some(vec![6, 10]),
        iters: Some(vec![1, 5]),
        ..Default::default()
    };
    let a = run_table(&spec_from(file.clone())).unwrap();
    let b = run_table(&spec_from(file)).unwrap();
    assert_eq!(csv_string(&a.rows), csv_string(&b.rows));
}

#[test]
fn one_decomposition_per_ell() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(200),
        ell: Some(vec![4, 7, 9]),
        iters: Some(vec![1, 2]),
        ..Default::default()
    };
    let outcome = run_table(&spec_from(file)).unwrap();
    assert_eq!(outcome.decompositions_built, 3);
    assert_eq!(outcome.rows.len(), 6);
}

#[test]
fn empty_iteration_list_yields_empty_output() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(200),
        ell: Some(vec![5]),
        iters: Some(vec![]),
        ..Default::default()
    };
    let outcome = run_table(&spec_from(file)).unwrap();
    assert!(outcome.rows.is_empty());
    assert_eq!(outcome.decompositions_built, 0);
}

#[test]
fn infeasible_cells_are_flagged_not_fatal() {
    // The blur problem at a small decomposition size cannot satisfy the
    // feasibility bound of the fixed rule.
    let file = ConfigFile {
        problem: Some("blur".into()),
        n: Some(30),
        ell: Some(vec![10]),
        iters: Some(vec![1]),
        ..Default::default()
    };
    let outcome = run_table(&spec_from(file)).unwrap();
    assert_eq!(outcome.rows.len(), 1);
    let row = &outcome.rows[0];
    assert_eq!(row.flag, "infeasible");
    assert!(row.alpha.is_none());
    assert!(row.rel_error.is_none());
}

#[test]
fn at_baseline_emits_one_row_per_ell() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(200),
        ell: Some(vec![6, 9]),
        iters: Some(vec![1, 5, 9]),
        rule: Some("at-baseline".into()),
        ..Default::default()
    };
    let outcome = run_table(&spec_from(file)).unwrap();
    assert_eq!(outcome.rows.len(), 2);
    assert!(outcome.rows.iter().all(|r| r.i == 1));
}

#[test]
fn phillips_errors_decrease_with_iteration_count() {
    let file = ConfigFile {
        n: Some(1000),
        ell: Some(vec![10]),
        iters: Some(vec![1, 50, 100, 150, 200]),
        ..Default::default()
    };
    let outcome = run_table(&spec_from(file)).unwrap();
    let errors: Vec<f64> = outcome.rows.iter().map(|r| r.rel_error.unwrap()).collect();
    for pair in errors.windows(2) {
        assert!(pair[1] < pair[0], "errors not decreasing: {errors:?}");
    }
}

#[test]
fn degenerate_sweep_marker_coincides_with_the_single_row() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(300),
        ell: Some(vec![8]),
        iters: Some(vec![5]),
        ..Default::default()
    };
    let spec = spec_from(file);
    // First find the selected alpha, then sweep a grid containing only it.
    let probe = run_alpha_sweep(&spec, &[1.0], 5).unwrap();
    let selected = probe.rows.last().unwrap().alpha.unwrap();
    let outcome = run_alpha_sweep(&spec, &[selected], 5).unwrap();
    assert_eq!(outcome.rows.len(), 2);
    assert_eq!(outcome.rows[0].alpha, outcome.rows[1].alpha);
    assert_eq!(outcome.rows[0].rel_error, outcome.rows[1].rel_error);
    assert_eq!(outcome.rows[1].flag, "marker");
}

#[test]
fn iterated_rule_marker_beats_baseline_marker_on_baart() {
    let grid: Vec<f64> = (0..30)
        .map(|k| 1e-4 * (1e7f64).powf(k as f64 / 29.0))
        .collect();
    let mut file = ConfigFile {
        problem: Some("baart".into()),
        n: Some(1000),
        ell: Some(vec![3]),
        iters: Some(vec![300]),
        ..Default::default()
    };
    let iat = run_alpha_sweep(&spec_from(file.clone()), &grid, 300).unwrap();
    file.rule = Some("at-baseline".into());
    let at = run_alpha_sweep(&spec_from(file), &grid, 1).unwrap();
    let iat_marker = iat.rows.last().unwrap().rel_error.unwrap();
    let at_marker = at.rows.last().unwrap().rel_error.unwrap();
    assert!(
        at_marker >= iat_marker,
        "baseline marker {at_marker} beats iterated marker {iat_marker}"
    );
}

#[test]
fn unsorted_sweep_grid_is_rejected() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(200),
        ell: Some(vec![5]),
        ..Default::default()
    };
    assert!(run_alpha_sweep(&spec_from(file), &[1.0, 0.5], 1).is_err());
}

#[test]
fn phillips_discrepancy_at_large_alpha_matches_the_reported_band() {
    let file = ConfigFile {
        n: Some(1000),
        ell: Some(vec![10]),
        ..Default::default()
    };
    let outcome = run_discrepancy_table(&spec_from(file), &[10.0]).unwrap();
    let row = &outcome.rows[0];
    assert!(row.flag.is_empty());
    assert!((40..=110).contains(&row.i), "stopped at i={}", row.i);
    assert!(row.rel_error.unwrap() <= 4e-2, "error {:?}", row.rel_error);
}

#[test]
fn blur_discrepancy_at_small_alpha_stops_quickly() {
    let file = ConfigFile {
        problem: Some("blur".into()),
        n: Some(30),
        ell: Some(vec![300]),
        ..Default::default()
    };
    let outcome = run_discrepancy_table(&spec_from(file), &[0.01]).unwrap();
    let row = &outcome.rows[0];
    assert!(row.flag.is_empty());
    assert!(row.i <= 4, "stopped at i={}", row.i);
    assert!(row.rel_error.unwrap() <= 0.12, "error {:?}", row.rel_error);
}

#[test]
fn discrepancy_rows_flag_unconverged_runs() {
    let file = ConfigFile {
        problem: Some("phillips".into()),
        n: Some(300),
        ell: Some(vec![10]),
        i_max: Some(2),
        ..Default::default()
    };
    // A huge alpha cannot reach the discrepancy level in two steps.
    let outcome = run_discrepancy_table(&spec_from(file), &[1e9]).unwrap();
    assert_eq!(outcome.rows.len(), 1);
    assert_eq!(outcome.rows[0].flag, "unconverged");
    assert_eq!(outcome.rows[0].i, 2);
}

#[test]
fn rule_spec_parsing() {
    assert_eq!(RuleSpec::parse("fixed-e", 1.0).unwrap().label(), "fixed-e");
    assert!(RuleSpec::parse("gcv", 1.0).is_err());
}

// ---- end-to-end binary checks ----

fn atk() -> Command {
    Command::new(env!("CARGO_BIN_EXE_atk"))
}

#[test]
fn binary_table_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for out in [&out_a, &out_b] {
        let status = atk()
            .args([
                "table",
                "--problem",
                "phillips",
                "--n",
                "300",
                "--ell",
                "5,8",
                "--iters",
                "1,3",
                "--out",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with(CSV_HEADER));
}

#[test]
fn binary_reports_config_errors_with_exit_code_two() {
    let status = atk()
        .args(["table", "--problem", "phillips", "--n", "50", "--ell", "50"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, b"{\"problem\": \"phillips\", \"bogus\": 1}").unwrap();
    let status = atk().arg("table").arg("--config").arg(&config).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn binary_config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        br#"{"problem": "phillips", "n": 300, "ell": [5], "iters": [2], "format": "json"}"#,
    )
    .unwrap();
    let out = dir.path().join("rows.json");
    let status = atk()
        .arg("table")
        .arg("--config")
        .arg(&config)
        .args(["--iters", "4"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["i"], 4); // flag overrode the config file
    assert_eq!(rows[0]["n"], 300);
}

#[test]
fn binary_generate_writes_data_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("case").to_string_lossy().into_owned();
    let status = atk()
        .args(["generate", "--problem", "baart", "--n", "40", "--prefix"])
        .arg(&prefix)
        .status()
        .unwrap();
    assert!(status.success());
    for suffix in ["operator.txt", "x_dagger.txt", "y.txt", "y_delta.txt", "manifest.json"] {
        assert!(
            std::path::Path::new(&format!("{prefix}_{suffix}")).exists(),
            "missing {suffix}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{prefix}_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["label"], "baart");
    assert_eq!(manifest["n"], 40);
    assert_eq!(manifest["seed"], 11);
    // The exported operator is loadable.
    let op = arnoldi_tikhonov::operator::load_dense_operator(format!("{prefix}_operator.txt")).unwrap();
    assert_eq!(op.dim(), 40);
}

#[test]
fn binary_decompose_writes_a_readable_dump() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("dec.bin");
    let status = atk()
        .args(["decompose", "--problem", "phillips", "--n", "200", "--ell", "7", "--dump"])
        .arg(&dump)
        .status()
        .unwrap();
    assert!(status.success());
    let dec =
        arnoldi_tikhonov::ArnoldiDecomposition::read_from(std::fs::File::open(&dump).unwrap())
            .unwrap();
    assert_eq!(dec.steps_completed(), 7);
    assert_eq!(dec.v().nrows(), 200);
}
