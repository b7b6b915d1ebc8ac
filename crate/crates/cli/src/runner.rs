//! Experiment execution: builds problems and decompositions, applies the
//! selection rules, and emits rows for tables, parameter sweeps, and
//! discrepancy-principle runs.

use std::io::Write;
use std::time::Instant;

use arnoldi_tikhonov::nalgebra::DVector;
use arnoldi_tikhonov::{
    approximation_gap, arnoldi, choose_alpha, discrepancy_run_with_tau, iat_solve,
    operator::write_matrix_text, operator::write_vector_text, ArnoldiDecomposition, Error,
    HessenbergSvd, ParamRule, Problem, DEFAULT_BREAKDOWN_TOL,
};
use serde::Serialize;

use crate::config::{ExperimentSpec, RuleSpec};

/// Fixed column set of the CSV outputs.
pub const CSV_HEADER: &str = "problem,n,xi,seed,ell,i,rule,alpha,rel_error,residual,wall_ms,flag";

/// One emitted result row. Values mirror the solve results exactly; no
/// rounding happens before serialization.
#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub problem: String,
    /// Operator dimension (pixel count for the blur problem).
    pub n: usize,
    pub xi: f64,
    pub seed: u64,
    pub ell: usize,
    pub i: usize,
    pub rule: String,
    pub alpha: Option<f64>,
    pub rel_error: Option<f64>,
    pub residual: Option<f64>,
    pub wall_ms: Option<f64>,
    pub flag: String,
}

impl TableRow {
    fn csv_line(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x}")).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.problem,
            self.n,
            self.xi,
            self.seed,
            self.ell,
            self.i,
            self.rule,
            opt(self.alpha),
            opt(self.rel_error),
            opt(self.residual),
            opt(self.wall_ms),
            self.flag
        )
    }
}

/// Rows plus instrumentation about the run.
#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<TableRow>,
    /// Number of Arnoldi decompositions built; one per distinct `ell`.
    pub decompositions_built: usize,
}

struct PreparedEll {
    dec: ArnoldiDecomposition,
    y_reduced: DVector<f64>,
    svd: HessenbergSvd,
    h_ell: f64,
}

fn prepare_ell(problem: &Problem, ell: usize) -> Result<PreparedEll, Error> {
    let dec = arnoldi(&problem.operator, &problem.y_delta, ell, DEFAULT_BREAKDOWN_TOL)?;
    let y_reduced = dec.project(&problem.y_delta)?;
    let svd = HessenbergSvd::new(dec.h(), &y_reduced);
    let h_ell = approximation_gap(&problem.operator, &dec, 1e-8);
    Ok(PreparedEll {
        dec,
        y_reduced,
        svd,
        h_ell,
    })
}

fn param_rule(rule: RuleSpec, i: usize) -> Option<ParamRule> {
    match rule {
        RuleSpec::FixedE => Some(ParamRule::standard(i)),
        RuleSpec::AtBaseline => Some(ParamRule::baseline()),
        RuleSpec::AdaptiveE { d } => Some(ParamRule::adaptive(1.0, d, i).expect("validated")),
        RuleSpec::Heuristic => Some(ParamRule::heuristic(i).expect("validated")),
        RuleSpec::FixedAlpha => None,
    }
}

fn base_row(spec: &ExperimentSpec, problem: &Problem, ell: usize, i: usize) -> TableRow {
    TableRow {
        problem: problem.label.clone(),
        n: problem.operator.dim(),
        xi: spec.xi,
        seed: spec.seed,
        ell,
        i,
        rule: spec.rule.label().to_string(),
        alpha: None,
        rel_error: None,
        residual: None,
        wall_ms: None,
        flag: String::new(),
    }
}

fn solve_cell(
    spec: &ExperimentSpec,
    problem: &Problem,
    prepared: &PreparedEll,
    ell: usize,
    i: usize,
    alpha_override: Option<f64>,
) -> Result<TableRow, Error> {
    let mut row = base_row(spec, problem, ell, i);
    let x_norm = problem.x_dagger.norm();
    let started = Instant::now();

    let alpha = match alpha_override {
        Some(alpha) => {
            row.rule = "fixed-alpha".into();
            alpha
        }
        None => {
            let rule = param_rule(spec.rule, i).expect("selection rule present");
            match choose_alpha(
                &rule,
                &prepared.svd,
                prepared.h_ell,
                problem.delta,
                Some(x_norm),
                &prepared.dec,
                &prepared.y_reduced,
            ) {
                Ok((alpha, _)) => alpha,
                Err(Error::Infeasible { .. }) => {
                    row.flag = "infeasible".into();
                    return Ok(row);
                }
                Err(other) => return Err(other),
            }
        }
    };

    let z = iat_solve(&prepared.dec, &prepared.y_reduced, alpha, i)?;
    let x = prepared.dec.lift(&z)?;
    let residual = (problem.operator.apply(&x)? - &problem.y_delta).norm();
    let elapsed = started.elapsed();

    row.alpha = Some(alpha);
    row.rel_error = Some((&problem.x_dagger - &x).norm() / x_norm);
    row.residual = Some(residual);
    if spec.timing {
        row.wall_ms = Some(elapsed.as_secs_f64() * 1e3);
    }
    Ok(row)
}

/// Accuracy table over the `(ell, i)` grid. Each `ell` builds one
/// decomposition; each cell selects `alpha` by the configured rule (the
/// single-step baseline emits one row per `ell`). Infeasible cells are
/// flagged rather than failing the run.
pub fn run_table(spec: &ExperimentSpec) -> Result<RunOutcome, Error> {
    let problem = Problem::generate(spec.kind, spec.n, spec.xi, spec.seed)?;
    let mut rows = Vec::new();
    let mut decompositions_built = 0;

    let i_values: Vec<usize> = match spec.rule {
        RuleSpec::AtBaseline => vec![1],
        _ => spec.i_list.clone(),
    };

    for &ell in &spec.ell_list {
        if i_values.is_empty() {
            continue;
        }
        let prepared = prepare_ell(&problem, ell)?;
        decompositions_built += 1;
        for (idx, &i) in i_values.iter().enumerate() {
            let alpha_override = match spec.rule {
                RuleSpec::FixedAlpha => {
                    let list = &spec.alpha_list;
                    if list.is_empty() {
                        return Err(Error::InvalidArgument(
                            "fixed-alpha rule needs at least one alpha".into(),
                        ));
                    }
                    Some(if list.len() == 1 { list[0] } else { list[idx] })
                }
                _ => None,
            };
            rows.push(solve_cell(spec, &problem, &prepared, ell, i, alpha_override)?);
        }
    }
    Ok(RunOutcome {
        rows,
        decompositions_built,
    })
}

/// Relative error as a function of `alpha` at a fixed iteration count,
/// over the first configured `ell`. Emits one row per grid point plus a
/// marker row at the rule-selected `alpha`.
pub fn run_alpha_sweep(spec: &ExperimentSpec, alpha_grid: &[f64], i: usize) -> Result<RunOutcome, Error> {
    if alpha_grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid must not be empty".into()));
    }
    if alpha_grid.iter().any(|a| *a <= 0.0 || !a.is_finite()) {
        return Err(Error::InvalidArgument("alpha grid must be positive and finite".into()));
    }
    if alpha_grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("alpha grid must be sorted ascending".into()));
    }
    if spec.rule == RuleSpec::FixedAlpha {
        return Err(Error::InvalidArgument(
            "the alpha sweep needs a selection rule for its marker row".into(),
        ));
    }
    let &ell = spec
        .ell_list
        .first()
        .ok_or_else(|| Error::InvalidArgument("the alpha sweep needs an ell value".into()))?;
    let problem = Problem::generate(spec.kind, spec.n, spec.xi, spec.seed)?;
    let prepared = prepare_ell(&problem, ell)?;

    let mut rows = Vec::new();
    for &alpha in alpha_grid {
        let mut row = solve_cell(spec, &problem, &prepared, ell, i, Some(alpha))?;
        row.rule = spec.rule.label().to_string();
        rows.push(row);
    }
    let rule = param_rule(spec.rule, i).expect("selection rule present");
    let (alpha_selected, _) = choose_alpha(
        &rule,
        &prepared.svd,
        prepared.h_ell,
        problem.delta,
        Some(problem.x_dagger.norm()),
        &prepared.dec,
        &prepared.y_reduced,
    )?;
    let mut marker = solve_cell(spec, &problem, &prepared, ell, i, Some(alpha_selected))?;
    marker.rule = spec.rule.label().to_string();
    marker.flag = "marker".into();
    rows.push(marker);

    Ok(RunOutcome {
        rows,
        decompositions_built: 1,
    })
}

/// For each fixed `alpha`, iterate until the discrepancy principle stops
/// and report the stopping index; rows that hit the iteration cap are
/// flagged `unconverged`.
pub fn run_discrepancy_table(spec: &ExperimentSpec, alpha_list: &[f64]) -> Result<RunOutcome, Error> {
    if alpha_list.is_empty() {
        return Err(Error::InvalidArgument("discrepancy runs need at least one alpha".into()));
    }
    let problem = Problem::generate(spec.kind, spec.n, spec.xi, spec.seed)?;
    if problem.delta <= 0.0 {
        return Err(Error::InvalidArgument(
            "the discrepancy principle needs a positive noise level".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut decompositions_built = 0;
    for &ell in &spec.ell_list {
        let dec = arnoldi(&problem.operator, &problem.y_delta, ell, DEFAULT_BREAKDOWN_TOL)?;
        decompositions_built += 1;
        for &alpha in alpha_list {
            let started = Instant::now();
            let report = discrepancy_run_with_tau(
                &problem.operator,
                &dec,
                &problem.y_delta,
                alpha,
                problem.delta,
                spec.i_max,
                spec.tau,
            )?
            .with_true_solution(&problem.x_dagger);
            let elapsed = started.elapsed();
            let mut row = base_row(spec, &problem, ell, report.iterations);
            row.rule = "discrepancy".into();
            row.alpha = Some(alpha);
            row.rel_error = report.relative_error;
            row.residual = Some(report.residual_norm);
            if spec.timing {
                row.wall_ms = Some(elapsed.as_secs_f64() * 1e3);
            }
            if !report.converged {
                row.flag = "unconverged".into();
            }
            rows.push(row);
        }
    }
    Ok(RunOutcome {
        rows,
        decompositions_built,
    })
}

/// Manifest written next to generated problem data.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub label: String,
    pub n: usize,
    pub xi: f64,
    pub delta: f64,
    pub seed: u64,
}

/// Writes the problem data (operator, true solution, clean and noisy data)
/// in the text exchange formats plus a JSON manifest. Returns the paths
/// written.
pub fn generate_problem_files(spec: &ExperimentSpec, prefix: &str) -> Result<Vec<String>, Error> {
    let problem = Problem::generate(spec.kind, spec.n, spec.xi, spec.seed)?;
    let mut written = Vec::new();

    let operator_path = format!("{prefix}_operator.txt");
    write_matrix_text(std::fs::File::create(&operator_path)?, &problem.operator.to_dense())?;
    written.push(operator_path);

    for (suffix, vector) in [
        ("x_dagger", &problem.x_dagger),
        ("y", &problem.y),
        ("y_delta", &problem.y_delta),
    ] {
        let path = format!("{prefix}_{suffix}.txt");
        write_vector_text(std::fs::File::create(&path)?, vector)?;
        written.push(path);
    }

    let manifest = Manifest {
        label: problem.label.clone(),
        n: problem.operator.dim(),
        xi: spec.xi,
        delta: problem.delta,
        seed: spec.seed,
    };
    let manifest_path = format!("{prefix}_manifest.json");
    let body = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&manifest_path, body.as_bytes())?;
    written.push(manifest_path);
    Ok(written)
}

/// Runs the decomposition for the first configured `ell` and writes the
/// binary dump.
pub fn decompose_to_file(spec: &ExperimentSpec, path: &std::path::Path) -> Result<(), Error> {
    let &ell = spec
        .ell_list
        .first()
        .ok_or_else(|| Error::InvalidArgument("decompose needs an ell value".into()))?;
    let problem = Problem::generate(spec.kind, spec.n, spec.xi, spec.seed)?;
    let dec = arnoldi(&problem.operator, &problem.y_delta, ell, DEFAULT_BREAKDOWN_TOL)?;
    dec.write_to(std::fs::File::create(path)?)?;
    Ok(())
}

/// Serializes rows as CSV with the fixed header.
pub fn write_csv<W: Write>(mut writer: W, rows: &[TableRow]) -> std::io::Result<()> {
    writeln!(writer, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(writer, "{}", row.csv_line())?;
    }
    Ok(())
}

/// Serializes rows as a JSON array.
pub fn write_json<W: Write>(mut writer: W, rows: &[TableRow]) -> std::io::Result<()> {
    let body = serde_json::to_string_pretty(rows).expect("rows serialize");
    writeln!(writer, "{body}")
}
