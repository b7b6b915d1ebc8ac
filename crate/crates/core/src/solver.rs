//! Regularized solves in the reduced space and the discrepancy-principle
//! iteration driver.
//!
//! All solves act on the reduced normal equations
//! `(H^T H + alpha I) z = H^T y + alpha z_prev`; one symmetric
//! positive-definite factorization is shared across all iteration steps.
//! A QR factorization of the stacked matrix `[H; sqrt(alpha) I]` replaces
//! the Cholesky route when the conditioning bound of the normal equations
//! becomes untrustworthy.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;

use crate::arnoldi::ArnoldiDecomposition;
use crate::error::{Error, Result};
use crate::operator::LinearOperator;

/// Conditioning bound above which the stacked-QR solve replaces Cholesky.
const CONDITION_GUARD: f64 = 1e14;

/// Largest dimension accepted by the full-space reference solver.
pub const ORACLE_DIM_LIMIT: usize = 64;

/// Result of one regularized solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Full-space iterate `V z`.
    pub x: DVector<f64>,
    /// Reduced iterate.
    pub z: DVector<f64>,
    pub alpha: f64,
    /// Number of iteration steps actually performed.
    pub iterations: usize,
    /// Full-space residual norm `||T x - y_delta||`.
    pub residual_norm: f64,
    /// `||x_dagger - x|| / ||x_dagger||`, when the true solution is known.
    pub relative_error: Option<f64>,
    /// False when the discrepancy iteration hit its step limit.
    pub converged: bool,
}

/// Flat JSON record of a solve.
#[derive(Debug, Clone, Serialize)]
pub struct SolveRecord {
    pub alpha: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub relative_error: Option<f64>,
    pub ell: usize,
    pub n: usize,
}

impl SolveReport {
    /// Fills in the relative error against a known true solution.
    pub fn with_true_solution(mut self, x_dagger: &DVector<f64>) -> SolveReport {
        let denom = x_dagger.norm();
        if denom > 0.0 {
            self.relative_error = Some((x_dagger - &self.x).norm() / denom);
        }
        self
    }

    pub fn to_record(&self) -> SolveRecord {
        SolveRecord {
            alpha: self.alpha,
            iterations: self.iterations,
            residual_norm: self.residual_norm,
            relative_error: self.relative_error,
            ell: self.z.len(),
            n: self.x.len(),
        }
    }

    /// Writes the iterate payloads as binary dumps, for callers that keep
    /// the JSON record separate from the bulk data.
    pub fn write_vectors<W: std::io::Write>(&self, x_out: W, z_out: W) -> Result<()> {
        crate::operator::write_vector_binary(x_out, &self.x)?;
        crate::operator::write_vector_binary(z_out, &self.z)
    }
}

/// Shared factorization of `H^T H + alpha I`.
pub(crate) enum ReducedFactorization {
    Cholesky(Cholesky<f64, Dyn>),
    /// Upper-triangular factor `R` of the stacked matrix `[H; sqrt(alpha) I]`,
    /// so that `R^T R = H^T H + alpha I`.
    StackedQr(DMatrix<f64>),
}

impl ReducedFactorization {
    pub(crate) fn new(h: &DMatrix<f64>, alpha: f64) -> Result<ReducedFactorization> {
        // (||H||_F^2 + alpha) / alpha bounds the condition number of the
        // normal equations from above; beyond the guard the Cholesky route
        // may lose all significant digits for the smallest modes.
        let fro2 = h.norm_squared();
        if (fro2 + alpha) / alpha > CONDITION_GUARD {
            return Ok(Self::stacked_qr(h, alpha));
        }
        let ell = h.ncols();
        let normal = h.tr_mul(h) + DMatrix::identity(ell, ell) * alpha;
        match Cholesky::new(normal) {
            Some(chol) => Ok(ReducedFactorization::Cholesky(chol)),
            None => Ok(Self::stacked_qr(h, alpha)),
        }
    }

    fn stacked_qr(h: &DMatrix<f64>, alpha: f64) -> ReducedFactorization {
        let (rows, ell) = h.shape();
        let mut stacked = DMatrix::zeros(rows + ell, ell);
        stacked.view_mut((0, 0), (rows, ell)).copy_from(h);
        let sqrt_alpha = alpha.sqrt();
        for j in 0..ell {
            stacked[(rows + j, j)] = sqrt_alpha;
        }
        ReducedFactorization::StackedQr(stacked.qr().r())
    }

    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            ReducedFactorization::Cholesky(chol) => chol.solve(rhs),
            ReducedFactorization::StackedQr(r) => {
                let forward = r
                    .transpose()
                    .solve_lower_triangular(rhs)
                    .expect("stacked factor is nonsingular for alpha > 0");
                r.solve_upper_triangular(&forward)
                    .expect("stacked factor is nonsingular for alpha > 0")
            }
        }
    }
}

fn validate_reduced_inputs(
    dec: &ArnoldiDecomposition,
    y_reduced: &DVector<f64>,
    alpha: f64,
) -> Result<()> {
    if y_reduced.len() != dec.h().nrows() {
        return Err(Error::DimensionMismatch {
            expected: dec.h().nrows(),
            actual: y_reduced.len(),
        });
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization parameter must be positive and finite, got {alpha}"
        )));
    }
    if y_reduced.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reduced data"));
    }
    Ok(())
}

/// Single regularized solve `z = (H^T H + alpha I)^{-1} H^T y`.
pub fn at_solve(
    dec: &ArnoldiDecomposition,
    y_reduced: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    iat_solve(dec, y_reduced, alpha, 1)
}

/// Iterated regularized solve: `i` steps of the recursion
/// `z_k = (H^T H + alpha I)^{-1} (H^T y + alpha z_{k-1})`, `z_0 = 0`,
/// reusing one factorization for every step.
pub fn iat_solve(
    dec: &ArnoldiDecomposition,
    y_reduced: &DVector<f64>,
    alpha: f64,
    i: usize,
) -> Result<DVector<f64>> {
    validate_reduced_inputs(dec, y_reduced, alpha)?;
    if i == 0 {
        return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
    }
    let h = dec.h();
    let factorization = ReducedFactorization::new(h, alpha)?;
    let hty = h.tr_mul(y_reduced);
    let mut z = DVector::zeros(h.ncols());
    for _ in 0..i {
        z = factorization.solve(&(&hty + &z * alpha));
    }
    Ok(z)
}

/// Reference iteration in the full space, for testing the reduced path.
///
/// Forms the rank-`m` approximation `V H V_m^T` densely and runs the
/// iteration with direct solves of the `n x n` shifted normal equations.
/// Refuses dimensions above [`ORACLE_DIM_LIMIT`].
pub fn oracle_full_space(
    op: &LinearOperator,
    dec: &ArnoldiDecomposition,
    y_delta: &DVector<f64>,
    alpha: f64,
    i: usize,
) -> Result<DVector<f64>> {
    let n = op.dim();
    if n > ORACLE_DIM_LIMIT {
        return Err(Error::TooLarge {
            n,
            max: ORACLE_DIM_LIMIT,
        });
    }
    if y_delta.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y_delta.len(),
        });
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "regularization parameter must be positive and finite, got {alpha}"
        )));
    }
    if i == 0 {
        return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
    }
    let t_ell = dec.v() * dec.h() * dec.v_inner().transpose();
    let shifted = t_ell.tr_mul(&t_ell) + DMatrix::identity(n, n) * alpha;
    let lu = shifted.clone().lu();
    // One step of iterative refinement keeps the compounded solves near
    // machine accuracy even when alpha is tiny relative to the spectrum.
    let solve_refined = |b: &DVector<f64>| -> Option<DVector<f64>> {
        let mut x = lu.solve(b)?;
        let residual = b - &shifted * &x;
        x += lu.solve(&residual)?;
        Some(x)
    };
    let tty = t_ell.tr_mul(y_delta);
    let mut x = DVector::zeros(n);
    for _ in 0..i {
        x = solve_refined(&(&tty + &x * alpha)).ok_or(Error::NonFinite("full-space solve"))?;
    }
    Ok(x)
}

/// Runs the iteration for a fixed `alpha`, stopping at the first step whose
/// full-space residual satisfies the discrepancy principle
/// `||T x - y_delta|| <= tau * delta`. Reaching `i_max` without satisfying
/// it yields the last iterate flagged as unconverged.
pub fn discrepancy_run_with_tau(
    op: &LinearOperator,
    dec: &ArnoldiDecomposition,
    y_delta: &DVector<f64>,
    alpha: f64,
    delta: f64,
    i_max: usize,
    tau: f64,
) -> Result<SolveReport> {
    if delta <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "discrepancy threshold needs delta > 0, got {delta}"
        )));
    }
    if i_max == 0 {
        return Err(Error::InvalidArgument("i_max must be >= 1".into()));
    }
    if tau < 1.0 {
        return Err(Error::InvalidArgument(format!("safety factor must be >= 1, got {tau}")));
    }
    let y_reduced = dec.project(y_delta)?;
    validate_reduced_inputs(dec, &y_reduced, alpha)?;

    let h = dec.h();
    let factorization = ReducedFactorization::new(h, alpha)?;
    let hty = h.tr_mul(&y_reduced);
    let threshold = tau * delta;

    let mut z = DVector::zeros(h.ncols());
    let mut report: Option<SolveReport> = None;
    for step in 1..=i_max {
        z = factorization.solve(&(&hty + &z * alpha));
        let x = dec.lift(&z)?;
        let residual_norm = (op.apply(&x)? - y_delta).norm();
        let done = residual_norm <= threshold;
        if done || step == i_max {
            report = Some(SolveReport {
                x,
                z: z.clone(),
                alpha,
                iterations: step,
                residual_norm,
                relative_error: None,
                converged: done,
            });
            if done {
                break;
            }
        }
    }
    Ok(report.expect("loop runs at least once"))
}

/// [`discrepancy_run_with_tau`] with the default safety factor 1.
pub fn discrepancy_run(
    op: &LinearOperator,
    dec: &ArnoldiDecomposition,
    y_delta: &DVector<f64>,
    alpha: f64,
    delta: f64,
    i_max: usize,
) -> Result<SolveReport> {
    discrepancy_run_with_tau(op, dec, y_delta, alpha, delta, i_max, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arnoldi::{arnoldi, ArnoldiDecomposition, DEFAULT_BREAKDOWN_TOL};
    use crate::operator::DenseOperator;
    use crate::problems;
    use crate::rng::standard_normal_vector;
    use approx::assert_relative_eq;

    fn random_dense(seed: u64, n: usize) -> LinearOperator {
        let data = standard_normal_vector(seed, n * n);
        DenseOperator::new(DMatrix::from_column_slice(n, n, data.as_slice()))
            .unwrap()
            .into()
    }

    /// Decomposition carrying an explicitly chosen Hessenberg factor. The
    /// basis comes from a real run of matching shape; the reduced solves
    /// only read `H`.
    fn synthetic_dec(h: DMatrix<f64>) -> ArnoldiDecomposition {
        let n = 10.max(h.nrows());
        let op = random_dense(77, n);
        let b = standard_normal_vector(78, n);
        let dec = arnoldi(&op, &b, h.ncols(), DEFAULT_BREAKDOWN_TOL).unwrap();
        assert_eq!(dec.h().shape(), h.shape());
        ArnoldiDecomposition::from_raw_parts(dec.v().clone(), h, false, dec.beta())
    }

    #[test]
    fn scalar_solve_matches_closed_form() {
        let h = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let dec = synthetic_dec(h);
        let y = DVector::from_vec(vec![1.0, 0.0]);
        let z = at_solve(&dec, &y, 1.0).unwrap();
        assert_eq!(z.len(), 1);
        assert_relative_eq!(z[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_alpha_approaches_least_squares() {
        let op = random_dense(1, 20);
        let b = standard_normal_vector(2, 20);
        let dec = arnoldi(&op, &b, 5, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = standard_normal_vector(3, 6);
        let z = iat_solve(&dec, &y, 1e-14, 1).unwrap();
        // Dense pseudoinverse oracle.
        let pinv = dec
            .h()
            .clone()
            .svd(true, true)
            .pseudo_inverse(1e-13)
            .unwrap();
        let reference = pinv * &y;
        assert_relative_eq!(z, reference, max_relative = 1e-8);
    }

    #[test]
    fn first_iteration_recovers_the_single_solve() {
        let op = random_dense(4, 30);
        let b = standard_normal_vector(5, 30);
        let dec = arnoldi(&op, &b, 8, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = dec.project(&b).unwrap();
        let single = at_solve(&dec, &y, 0.3).unwrap();
        let iterated = iat_solve(&dec, &y, 0.3, 1).unwrap();
        assert_eq!(single.as_slice(), iterated.as_slice());
    }

    #[test]
    fn recursion_matches_explicit_power_sum() {
        let op = random_dense(6, 25);
        let b = standard_normal_vector(7, 25);
        let dec = arnoldi(&op, &b, 4, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = standard_normal_vector(8, 5);
        let alpha = 0.7;
        let i = 7;
        let z = iat_solve(&dec, &y, alpha, i).unwrap();

        // Explicit sum: sum_k alpha^(k-1) (H^T H + alpha I)^(-k) H^T y.
        let h = dec.h();
        let ell = h.ncols();
        let m = h.tr_mul(h) + DMatrix::identity(ell, ell) * alpha;
        let lu = m.lu();
        let hty = h.tr_mul(&y);
        let mut power_term = hty.clone();
        let mut explicit = DVector::zeros(ell);
        for k in 1..=i {
            power_term = lu.solve(&power_term).unwrap();
            explicit += &power_term * alpha.powi(k as i32 - 1);
        }
        assert_relative_eq!(z, explicit, max_relative = 1e-12);
    }

    #[test]
    fn factorization_reuse_is_bitwise_identical_to_refactorization() {
        let op = random_dense(9, 25);
        let b = standard_normal_vector(10, 25);
        let dec = arnoldi(&op, &b, 6, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = dec.project(&b).unwrap();
        let alpha = 0.05;
        let i = 9;
        let reused = iat_solve(&dec, &y, alpha, i).unwrap();

        let hty = dec.h().tr_mul(&y);
        let mut z = DVector::zeros(dec.h().ncols());
        for _ in 0..i {
            let fresh = ReducedFactorization::new(dec.h(), alpha).unwrap();
            z = fresh.solve(&(&hty + &z * alpha));
        }
        assert_eq!(reused.as_slice(), z.as_slice());
    }

    #[test]
    fn stacked_qr_and_cholesky_agree() {
        let op = random_dense(11, 25);
        let b = standard_normal_vector(12, 25);
        let dec = arnoldi(&op, &b, 6, DEFAULT_BREAKDOWN_TOL).unwrap();
        let rhs = standard_normal_vector(13, 6);
        let alpha = 0.2;
        let ell = dec.h().ncols();
        let normal = dec.h().tr_mul(dec.h()) + DMatrix::identity(ell, ell) * alpha;
        let chol = ReducedFactorization::Cholesky(Cholesky::new(normal).unwrap());
        let qr = ReducedFactorization::stacked_qr(dec.h(), alpha);
        assert_relative_eq!(chol.solve(&rhs), qr.solve(&rhs), max_relative = 1e-12);
    }

    #[test]
    fn oracle_matches_dense_closed_form_for_one_step() {
        let op = random_dense(14, 30);
        let b = standard_normal_vector(15, 30);
        let dec = arnoldi(&op, &b, 6, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = standard_normal_vector(16, 30);
        let alpha = 0.4;
        let x = oracle_full_space(&op, &dec, &y, alpha, 1).unwrap();

        let t_ell = dec.v() * dec.h() * dec.v_inner().transpose();
        let m = t_ell.tr_mul(&t_ell) + DMatrix::identity(30, 30) * alpha;
        let closed = m.lu().solve(&t_ell.tr_mul(&y)).unwrap();
        assert!((&x - &closed).norm() <= 1e-12 * closed.norm());
    }

    #[test]
    fn reduced_iterates_lift_to_the_full_space_oracle() {
        let op = random_dense(17, 40);
        let b = standard_normal_vector(18, 40);
        let dec = arnoldi(&op, &b, 7, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = standard_normal_vector(19, 40);
        let y_reduced = dec.project(&y).unwrap();
        let x_scale = b.norm();
        for trial in 0..20 {
            let alpha = 10f64.powf(-4.0 + 8.0 * (trial as f64) / 19.0);
            let i = 1 + trial % 12;
            let z = iat_solve(&dec, &y_reduced, alpha, i).unwrap();
            let lifted = dec.lift(&z).unwrap();
            let reference = oracle_full_space(&op, &dec, &y, alpha, i).unwrap();
            assert!(
                (lifted - reference).norm() <= 1e-10 * x_scale,
                "trial {trial} diverged"
            );
        }
    }

    #[test]
    fn oracle_follows_first_order_expansion_for_huge_alpha() {
        let op = random_dense(20, 30);
        let b = standard_normal_vector(21, 30);
        let dec = arnoldi(&op, &b, 5, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = standard_normal_vector(22, 30);
        let alpha = 1e12;
        let i = 5;
        let x = oracle_full_space(&op, &dec, &y, alpha, i).unwrap();
        let t_ell = dec.v() * dec.h() * dec.v_inner().transpose();
        let first_order = t_ell.tr_mul(&y) * (i as f64 / alpha);
        let ratio = x.norm() / first_order.norm();
        assert!((ratio - 1.0).abs() <= 1e-3, "ratio {ratio}");
    }

    #[test]
    fn oracle_refuses_large_problems() {
        let op = random_dense(23, 80);
        let b = standard_normal_vector(24, 80);
        let dec = arnoldi(&op, &b, 5, DEFAULT_BREAKDOWN_TOL).unwrap();
        let err = oracle_full_space(&op, &dec, &b, 1.0, 1);
        assert!(matches!(err, Err(Error::TooLarge { n: 80, max: 64 })));
    }

    #[test]
    fn discrepancy_stops_immediately_when_satisfied() {
        let (op_raw, x, _) = problems::phillips(60).unwrap();
        let op: LinearOperator = op_raw.into();
        let y = op.apply(&x).unwrap();
        let (y_delta, _) = problems::add_noise(&y, 0.01, 11).unwrap();
        let dec = arnoldi(&op, &y_delta, 8, DEFAULT_BREAKDOWN_TOL).unwrap();
        // A threshold the very first iterate satisfies trivially.
        let report = discrepancy_run(&op, &dec, &y_delta, 0.1, 1e6, 50).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        // Back-projection identity.
        let lifted = dec.lift(&report.z).unwrap();
        assert_eq!(report.x.as_slice(), lifted.as_slice());
    }

    #[test]
    fn discrepancy_flags_unconverged_runs() {
        let (op_raw, x, _) = problems::phillips(60).unwrap();
        let op: LinearOperator = op_raw.into();
        let y = op.apply(&x).unwrap();
        let (y_delta, _) = problems::add_noise(&y, 0.01, 11).unwrap();
        let dec = arnoldi(&op, &y_delta, 8, DEFAULT_BREAKDOWN_TOL).unwrap();
        let report = discrepancy_run(&op, &dec, &y_delta, 1e6, 1e-12, 3).unwrap();
        assert!(!report.converged);
        assert_eq!(report.iterations, 3);
        assert!(report.residual_norm > 1e-12);
    }

    #[test]
    fn residuals_decrease_monotonically_along_the_iteration() {
        let (op_raw, x, _) = problems::phillips(80).unwrap();
        let op: LinearOperator = op_raw.into();
        let y = op.apply(&x).unwrap();
        let (y_delta, _) = problems::add_noise(&y, 0.01, 7).unwrap();
        let dec = arnoldi(&op, &y_delta, 10, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y_reduced = dec.project(&y_delta).unwrap();
        let mut previous = f64::INFINITY;
        for i in 1..=30 {
            let z = iat_solve(&dec, &y_reduced, 0.5, i).unwrap();
            let residual = (op.apply(&dec.lift(&z).unwrap()).unwrap() - &y_delta).norm();
            assert!(
                residual <= previous + 1e-10,
                "residual increased at i={i}: {residual} > {previous}"
            );
            previous = residual;
        }
    }

    #[test]
    fn report_serializes_the_documented_fields() {
        let report = SolveReport {
            x: DVector::zeros(4),
            z: DVector::zeros(2),
            alpha: 0.5,
            iterations: 3,
            residual_norm: 0.25,
            relative_error: Some(0.1),
            converged: true,
        };
        let json = serde_json::to_value(report.to_record()).unwrap();
        let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            vec!["alpha", "ell", "iterations", "n", "relative_error", "residual_norm"]
        );
        assert_eq!(json["ell"], 2);
        assert_eq!(json["n"], 4);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let op = random_dense(25, 12);
        let b = standard_normal_vector(26, 12);
        let dec = arnoldi(&op, &b, 4, DEFAULT_BREAKDOWN_TOL).unwrap();
        let y = dec.project(&b).unwrap();
        assert!(iat_solve(&dec, &y, 0.0, 1).is_err());
        assert!(iat_solve(&dec, &y, f64::NAN, 1).is_err());
        assert!(iat_solve(&dec, &y, 1.0, 0).is_err());
        let mut bad = y.clone();
        bad[0] = f64::INFINITY;
        assert!(iat_solve(&dec, &bad, 1.0, 1).is_err());
        assert!(iat_solve(&dec, &DVector::zeros(3), 1.0, 1).is_err());
    }
}
