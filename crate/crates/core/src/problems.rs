//! Generators for the benchmark inverse problems and the deterministic
//! noise model.
//!
//! Three families are provided, all discretizations of first-kind Fredholm
//! integral equations:
//!
//! * [`phillips`]: convolution with a raised-cosine hat on `[-6, 6]`,
//!   discretized by a Nystrom method on the composite trapezoidal rule.
//! * [`baart`]: kernel `exp(s cos t)` with `s` on `[0, pi/2]` and `t` on
//!   `[0, pi]`, discretized by a midpoint-rule Nystrom method.
//! * [`blur`]: separable Gaussian blur of an `n x n` image, represented
//!   matrix-free as a Kronecker product of banded Toeplitz factors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::{DenseOperator, KronBlurOperator, LinearOperator};
use crate::rng::standard_normal_vector;

/// A generated test problem: operator, true solution, clean and noisy data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub operator: LinearOperator,
    pub x_dagger: DVector<f64>,
    pub y: DVector<f64>,
    pub y_delta: DVector<f64>,
    /// Absolute noise magnitude `delta = xi * ||y||`.
    pub delta: f64,
    /// Relative noise level.
    pub xi: f64,
    pub label: String,
}

/// Which test problem to generate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProblemKind {
    Phillips,
    Baart,
    Blur { band: usize, sigma: f64 },
}

impl ProblemKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProblemKind::Phillips => "phillips",
            ProblemKind::Baart => "baart",
            ProblemKind::Blur { .. } => "blur",
        }
    }
}

impl Problem {
    /// Builds a problem of the given kind and size, with noisy data at
    /// relative level `xi` drawn deterministically from `seed`.
    ///
    /// For [`ProblemKind::Blur`], `n` is the image side length and the
    /// operator acts on `n^2` pixels.
    pub fn generate(kind: ProblemKind, n: usize, xi: f64, seed: u64) -> Result<Problem> {
        let (operator, x_dagger): (LinearOperator, DVector<f64>) = match kind {
            ProblemKind::Phillips => {
                let (op, x, _) = phillips(n)?;
                (op.into(), x)
            }
            ProblemKind::Baart => {
                let (op, x) = baart(n)?;
                (op.into(), x)
            }
            ProblemKind::Blur { band, sigma } => {
                let (op, x) = blur(n, band, sigma)?;
                (op.into(), x)
            }
        };
        let y = operator.apply(&x_dagger)?;
        let (y_delta, delta) = add_noise(&y, xi, seed)?;
        Ok(Problem {
            operator,
            x_dagger,
            y,
            y_delta,
            delta,
            xi,
            label: kind.label().to_string(),
        })
    }
}

/// The raised-cosine hat that is both the exact solution and (shifted) the
/// kernel of the Phillips equation.
fn phillips_hat(t: f64) -> f64 {
    if t.abs() < 3.0 {
        1.0 + (std::f64::consts::PI * t / 3.0).cos()
    } else {
        0.0
    }
}

/// Nystrom discretization of the Phillips equation on `[-6, 6]` with `n`
/// composite-trapezoidal nodes.
///
/// Returns the (nonsymmetric) operator, the sampled exact solution, and the
/// closed-form right-hand side sampled on the collocation grid. The data
/// used by the solvers is `T x_dagger`; the analytic image is kept for
/// quadrature-order checks.
pub fn phillips(n: usize) -> Result<(DenseOperator, DVector<f64>, DVector<f64>)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("phillips needs n >= 3, got {n}")));
    }
    let h = 12.0 / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|j| -6.0 + h * j as f64).collect();
    let weight = |j: usize| if j == 0 || j == n - 1 { h / 2.0 } else { h };

    let matrix = DMatrix::from_fn(n, n, |i, j| weight(j) * phillips_hat(grid[i] - grid[j]));
    let x_dagger = DVector::from_fn(n, |j, _| phillips_hat(grid[j]));
    let y_analytic = DVector::from_fn(n, |i, _| {
        let s: f64 = grid[i];
        let a = s.abs();
        (6.0 - a) * (1.0 + 0.5 * (std::f64::consts::PI * s / 3.0).cos())
            + 9.0 / (2.0 * std::f64::consts::PI) * (std::f64::consts::PI * a / 3.0).sin()
    });
    Ok((DenseOperator::new(matrix)?, x_dagger, y_analytic))
}

/// Midpoint-rule Nystrom discretization of the Baart equation: kernel
/// `exp(s cos t)` with `s` collocated at `n` midpoints of `[0, pi/2]`, `t`
/// at `n` midpoints of `[0, pi]`, and exact solution `sin(t)`.
pub fn baart(n: usize) -> Result<(DenseOperator, DVector<f64>)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("baart needs n >= 3, got {n}")));
    }
    let pi = std::f64::consts::PI;
    let w = pi / n as f64;
    let s: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * (pi / 2.0) / n as f64).collect();
    let t: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * w).collect();

    let matrix = DMatrix::from_fn(n, n, |i, j| w * (s[i] * t[j].cos()).exp());
    let x_dagger = DVector::from_fn(n, |j, _| t[j].sin());
    Ok((DenseOperator::new(matrix)?, x_dagger))
}

/// Gaussian blur operator for an `n x n` image together with a synthetic
/// piecewise-constant test image.
///
/// The blur is the Kronecker square `T = A (x) A` of a symmetric banded
/// Toeplitz factor whose first row samples a Gaussian of width `sigma`
/// truncated at `band` entries; the assembled operator carries the usual
/// `1/(2 pi sigma^2)` normalization (split as `(2 pi sigma^2)^{-1/2}` per
/// factor).
///
/// The test image is zero everywhere except a centered rectangle of
/// intensity 1 spanning rows `[13n/30, 17n/30)` and columns
/// `[13n/30, 8n/15)`, and an off-center square of intensity 0.5 with side
/// `n/6` whose top-left corner is at `(n/6, 2n/3)` (row, column). The
/// image is flattened column-wise.
pub fn blur(n: usize, band: usize, sigma: f64) -> Result<(KronBlurOperator, DVector<f64>)> {
    if band == 0 || band > n {
        return Err(Error::InvalidArgument(format!(
            "blur needs n >= band >= 1, got n={n}, band={band}"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("blur needs sigma > 0, got {sigma}")));
    }
    let scale = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma).sqrt();
    let factor = DMatrix::from_fn(n, n, |i, j| {
        let k = i.abs_diff(j);
        if k < band {
            scale * (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()
        } else {
            0.0
        }
    });
    let operator = KronBlurOperator::from_factor(factor)?;

    let mut image = DMatrix::zeros(n, n);
    for r in 13 * n / 30..17 * n / 30 {
        for c in 13 * n / 30..8 * n / 15 {
            image[(r, c)] = 1.0;
        }
    }
    let side = n / 6;
    for r in n / 6..n / 6 + side {
        for c in 2 * n / 3..2 * n / 3 + side {
            image[(r, c)] = 0.5;
        }
    }
    let x_dagger = DVector::from_column_slice(image.as_slice());
    Ok((operator, x_dagger))
}

/// Adds noise of exact relative magnitude `xi` to `y`.
///
/// The perturbation direction is a standard-normal vector drawn from the
/// deterministic generator in [`crate::rng`], rescaled so that
/// `||y_delta - y|| = xi * ||y||` holds to machine precision. Returns the
/// perturbed data together with `delta = xi * ||y||`.
pub fn add_noise(y: &DVector<f64>, xi: f64, seed: u64) -> Result<(DVector<f64>, f64)> {
    if xi < 0.0 {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {xi}")));
    }
    if xi == 0.0 {
        return Ok((y.clone(), 0.0));
    }
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let e = standard_normal_vector(seed, y.len());
    let e_norm = e.norm();
    if e_norm == 0.0 {
        return Err(Error::NonFinite("noise direction"));
    }
    let delta = xi * y_norm;
    let y_delta = y + e * (delta / e_norm);
    Ok((y_delta, delta))
}
