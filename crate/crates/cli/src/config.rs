//! Experiment configuration: a single JSON document, with command-line
//! flags overriding individual fields.

use std::path::PathBuf;

use arnoldi_tikhonov::ProblemKind;
use serde::{Deserialize, Serialize};

/// Raw configuration as read from a JSON file; every field optional so
/// flags can fill the gaps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<String>,
    pub n: Option<usize>,
    pub xi: Option<f64>,
    pub seed: Option<u64>,
    pub ell: Option<Vec<usize>>,
    pub iters: Option<Vec<usize>>,
    pub rule: Option<String>,
    pub alpha: Option<Vec<f64>>,
    pub band: Option<usize>,
    pub sigma: Option<f64>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub timing: Option<bool>,
    pub i_max: Option<usize>,
    pub tau: Option<f64>,
}

/// Parameter-selection rule requested for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuleSpec {
    /// `C = 1`, `E = ||x_dagger||`, per-iteration-count root solve.
    FixedE,
    /// `C = 1`, `E = 3 ||x_dagger||`, single iteration.
    AtBaseline,
    /// `E` bootstrapped from the iterate norm with factor `d >= 1`.
    AdaptiveE { d: f64 },
    /// Direct formula, no root solve.
    Heuristic,
    /// Fixed alpha values supplied by the caller.
    FixedAlpha,
}

impl RuleSpec {
    pub fn parse(name: &str, d: f64) -> Result<RuleSpec, String> {
        match name {
            "fixed-e" => Ok(RuleSpec::FixedE),
            "at-baseline" => Ok(RuleSpec::AtBaseline),
            "adaptive-e" => Ok(RuleSpec::AdaptiveE { d }),
            "heuristic" => Ok(RuleSpec::Heuristic),
            "fixed-alpha" => Ok(RuleSpec::FixedAlpha),
            other => Err(format!(
                "unknown rule {other:?} (expected fixed-e, at-baseline, adaptive-e, heuristic, fixed-alpha)"
            )),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RuleSpec::FixedE => "fixed-e",
            RuleSpec::AtBaseline => "at-baseline",
            RuleSpec::AdaptiveE { .. } => "adaptive-e",
            RuleSpec::Heuristic => "heuristic",
            RuleSpec::FixedAlpha => "fixed-alpha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    pub fn parse(name: &str) -> Result<OutputFormat, String> {
        match name {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format {other:?} (expected csv or json)")),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ProblemKind,
    /// Grid size: the operator dimension for the integral problems, the
    /// image side length for the blur problem.
    pub n: usize,
    pub xi: f64,
    pub seed: u64,
    pub ell_list: Vec<usize>,
    pub i_list: Vec<usize>,
    pub rule: RuleSpec,
    pub alpha_list: Vec<f64>,
    pub timing: bool,
    pub i_max: usize,
    pub tau: f64,
}

pub const DEFAULT_I_MAX: usize = 5000;

impl ExperimentSpec {
    /// Resolves defaults, applies validation, and reports the first
    /// configuration problem found.
    pub fn resolve(file: &ConfigFile) -> Result<ExperimentSpec, String> {
        let problem = file.problem.as_deref().unwrap_or("phillips");
        let n = file.n.unwrap_or(match problem {
            "blur" => 30,
            _ => 1000,
        });
        let kind = match problem {
            "phillips" => ProblemKind::Phillips,
            "baart" => ProblemKind::Baart,
            "blur" => ProblemKind::Blur {
                band: file.band.unwrap_or(3),
                sigma: file.sigma.unwrap_or(0.7),
            },
            other => return Err(format!("unknown problem {other:?}")),
        };
        let dim = match kind {
            ProblemKind::Blur { .. } => n * n,
            _ => n,
        };
        let xi = file.xi.unwrap_or(0.01);
        if xi < 0.0 || !xi.is_finite() {
            return Err(format!("noise level must be a finite value >= 0, got {xi}"));
        }
        let ell_list = file.ell.clone().unwrap_or_else(|| vec![10]);
        for &ell in &ell_list {
            if ell == 0 || ell >= dim {
                return Err(format!("ell = {ell} must satisfy 1 <= ell < {dim}"));
            }
        }
        let i_list = file.iters.clone().unwrap_or_else(|| vec![1]);
        for &i in &i_list {
            if i == 0 {
                return Err("iteration counts must be >= 1".into());
            }
        }
        let rule = RuleSpec::parse(file.rule.as_deref().unwrap_or("fixed-e"), 1.0)?;
        let alpha_list = file.alpha.clone().unwrap_or_default();
        for &alpha in &alpha_list {
            if alpha <= 0.0 || !alpha.is_finite() {
                return Err(format!("alpha values must be positive and finite, got {alpha}"));
            }
        }
        if rule == RuleSpec::FixedAlpha
            && !alpha_list.is_empty()
            && alpha_list.len() != 1
            && alpha_list.len() != i_list.len()
        {
            return Err(format!(
                "fixed-alpha needs one alpha or one per iteration count ({} given, {} counts)",
                alpha_list.len(),
                i_list.len()
            ));
        }
        let tau = file.tau.unwrap_or(1.0);
        if tau < 1.0 {
            return Err(format!("discrepancy safety factor must be >= 1, got {tau}"));
        }
        Ok(ExperimentSpec {
            kind,
            n,
            xi,
            seed: file.seed.unwrap_or(11),
            ell_list,
            i_list,
            rule,
            alpha_list,
            timing: file.timing.unwrap_or(false),
            i_max: file.i_max.unwrap_or(DEFAULT_I_MAX),
            tau,
        })
    }
}
