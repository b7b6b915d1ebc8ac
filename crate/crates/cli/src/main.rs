use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use arnoldi_tikhonov_cli::config::{ConfigFile, ExperimentSpec, OutputFormat};
use arnoldi_tikhonov_cli::runner::{
    self, decompose_to_file, generate_problem_files, run_alpha_sweep, run_discrepancy_table,
    run_table, RunOutcome,
};
use clap::{Parser, Subcommand};

/// Exit code for configuration problems.
const CONFIG_ERROR: u8 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "atk",
    about = "Krylov-subspace Tikhonov regularization experiment runner",
    version
)]
struct Cli {
    /// JSON configuration file; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Test problem: phillips, baart, or blur.
    #[arg(long, global = true)]
    problem: Option<String>,

    /// Grid size (image side length for blur).
    #[arg(long, global = true)]
    n: Option<usize>,

    /// Relative noise level.
    #[arg(long, global = true)]
    xi: Option<f64>,

    /// Noise seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Decomposition sizes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    ell: Option<Vec<usize>>,

    /// Iteration counts, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    iters: Option<Vec<usize>>,

    /// Selection rule: fixed-e, at-baseline, adaptive-e, heuristic, fixed-alpha.
    #[arg(long, global = true)]
    rule: Option<String>,

    /// Alpha values, comma separated (overrides, sweep grid, or
    /// discrepancy list depending on the subcommand).
    #[arg(long, global = true, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,

    /// Blur bandwidth.
    #[arg(long, global = true)]
    band: Option<usize>,

    /// Blur spread.
    #[arg(long, global = true)]
    sigma: Option<f64>,

    /// Output path (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format: csv or json.
    #[arg(long, global = true)]
    format: Option<String>,

    /// Record wall-clock solve times in the wall_ms column. Off by
    /// default so that reruns are byte-identical.
    #[arg(long, global = true)]
    timing: bool,

    /// Iteration cap for discrepancy runs.
    #[arg(long, global = true)]
    i_max: Option<usize>,

    /// Safety factor on the discrepancy threshold.
    #[arg(long, global = true)]
    tau: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the problem data files and a JSON manifest.
    Generate {
        /// Path prefix for the emitted files.
        #[arg(long, default_value = "problem")]
        prefix: String,
    },
    /// Accuracy table over the (ell, i) grid with rule-selected alpha.
    Table,
    /// Relative error as a function of alpha at a fixed iteration count.
    SweepAlpha {
        /// Smallest grid value (log-spaced grid).
        #[arg(long, default_value_t = 1e-3)]
        alpha_min: f64,
        /// Largest grid value.
        #[arg(long, default_value_t = 1e4)]
        alpha_max: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 50)]
        points: usize,
    },
    /// Iteration counts chosen by the discrepancy principle per alpha.
    Discrepancy,
    /// Write the Arnoldi decomposition to a binary dump.
    Decompose {
        /// Dump path.
        #[arg(long)]
        dump: PathBuf,
    },
}

fn merge_config(cli: &Cli) -> Result<ConfigFile, String> {
    let mut file = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            serde_json::from_str::<ConfigFile>(&text)
                .map_err(|e| format!("bad config {}: {e}", path.display()))?
        }
        None => ConfigFile::default(),
    };
    if cli.problem.is_some() {
        file.problem = cli.problem.clone();
    }
    if cli.n.is_some() {
        file.n = cli.n;
    }
    if cli.xi.is_some() {
        file.xi = cli.xi;
    }
    if cli.seed.is_some() {
        file.seed = cli.seed;
    }
    if cli.ell.is_some() {
        file.ell = cli.ell.clone();
    }
    if cli.iters.is_some() {
        file.iters = cli.iters.clone();
    }
    if cli.rule.is_some() {
        file.rule = cli.rule.clone();
    }
    if cli.alpha.is_some() {
        file.alpha = cli.alpha.clone();
    }
    if cli.band.is_some() {
        file.band = cli.band;
    }
    if cli.sigma.is_some() {
        file.sigma = cli.sigma;
    }
    if cli.out.is_some() {
        file.out = cli.out.clone();
    }
    if cli.format.is_some() {
        file.format = cli.format.clone();
    }
    if cli.timing {
        file.timing = Some(true);
    }
    if cli.i_max.is_some() {
        file.i_max = cli.i_max;
    }
    if cli.tau.is_some() {
        file.tau = cli.tau;
    }
    Ok(file)
}

fn emit(outcome: &RunOutcome, format: OutputFormat, out: Option<&PathBuf>) -> std::io::Result<()> {
    let mut buffer = Vec::new();
    match format {
        OutputFormat::Csv => runner::write_csv(&mut buffer, &outcome.rows)?,
        OutputFormat::Json => runner::write_json(&mut buffer, &outcome.rows)?,
    }
    match out {
        Some(path) => std::fs::write(path, buffer),
        None => std::io::stdout().write_all(&buffer),
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let file = merge_config(&cli).map_err(|e| (CONFIG_ERROR, e))?;
    let format = OutputFormat::parse(file.format.as_deref().unwrap_or("csv"))
        .map_err(|e| (CONFIG_ERROR, e))?;
    let out = file.out.clone();
    let spec = ExperimentSpec::resolve(&file).map_err(|e| (CONFIG_ERROR, e))?;

    let outcome = match &cli.command {
        Command::Generate { prefix } => {
            let written =
                generate_problem_files(&spec, prefix).map_err(|e| (1, e.to_string()))?;
            for path in written {
                eprintln!("wrote {path}");
            }
            return Ok(());
        }
        Command::Decompose { dump } => {
            decompose_to_file(&spec, dump).map_err(|e| (1, e.to_string()))?;
            eprintln!("wrote {}", dump.display());
            return Ok(());
        }
        Command::Table => run_table(&spec).map_err(|e| (1, e.to_string()))?,
        Command::SweepAlpha {
            alpha_min,
            alpha_max,
            points,
        } => {
            let grid: Vec<f64> = match &spec.alpha_list[..] {
                [] => {
                    if *alpha_min <= 0.0 || !alpha_min.is_finite() || alpha_max < alpha_min || *points == 0 {
                        return Err((CONFIG_ERROR, "bad sweep grid parameters".into()));
                    }
                    (0..*points)
                        .map(|k| {
                            alpha_min
                                * (alpha_max / alpha_min)
                                    .powf(k as f64 / (*points as f64 - 1.0).max(1.0))
                        })
                        .collect()
                }
                explicit => explicit.to_vec(),
            };
            let i = spec.i_list.first().copied().unwrap_or(1);
            run_alpha_sweep(&spec, &grid, i).map_err(|e| (CONFIG_ERROR, e.to_string()))?
        }
        Command::Discrepancy => {
            let alphas = spec.alpha_list.clone();
            run_discrepancy_table(&spec, &alphas).map_err(|e| (CONFIG_ERROR, e.to_string()))?
        }
    };

    emit(&outcome, format, out.as_ref()).map_err(|e| (1, format!("cannot write output: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
