//! Arnoldi decomposition of `(T, b)` and the operator-approximation
//! diagnostics derived from it.
//!
//! Running `m` steps of the Arnoldi process produces `T V_m = V_{m+1} H`
//! with orthonormal `V_{m+1}` spanning the Krylov space of `(T, b)` and an
//! upper Hessenberg `H` of size `(m+1) x m`. The induced rank-`m`
//! approximation of the operator is `T V_m V_m^T`; [`approximation_gap`]
//! estimates its distance from `T`, and [`gamma_ell`] the distance of `T`
//! from its own range projection.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::operator::{power_norm, LinearOperator, NormEstimate};
use crate::paramselect::HessenbergSvd;

/// Relative breakdown tolerance recommended for [`arnoldi`]: a candidate
/// basis vector is treated as zero when its norm falls below this factor
/// times the running magnitude of the Hessenberg entries.
pub const DEFAULT_BREAKDOWN_TOL: f64 = 1e-12;

/// Problem sizes up to this bound use exact dense SVD for the gap
/// estimates; larger ones fall back to power iteration.
const DENSE_GAP_LIMIT: usize = 64;

/// Power-iteration budget for the gap estimates.
const GAP_MAX_ITERS: usize = 200;

/// Orthonormal Krylov basis and Hessenberg factor of one Arnoldi run.
///
/// Without breakdown the basis holds `steps_completed + 1` columns and the
/// Hessenberg factor is `(m+1) x m`. If the process breaks down at step
/// `m` the candidate vector vanished, the Krylov space is invariant, and
/// the stored factors shrink to `n x m` and `m x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArnoldiDecomposition {
    v: DMatrix<f64>,
    h: DMatrix<f64>,
    steps_completed: usize,
    breakdown: bool,
    beta: f64,
}

impl ArnoldiDecomposition {
    /// Orthonormal basis, `n x (m+1)` (or `n x m` after breakdown).
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// The first `m` basis columns, spanning the solution search space.
    pub fn v_inner(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.v.columns(0, self.steps_completed)
    }

    /// Upper Hessenberg factor, `(m+1) x m` (or `m x m` after breakdown).
    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn steps_completed(&self) -> usize {
        self.steps_completed
    }

    pub fn breakdown(&self) -> bool {
        self.breakdown
    }

    /// Norm of the start vector (the scale of the first basis column).
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Projects full-space data onto the basis: `V^T y`.
    pub fn project(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.v.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.v.nrows(),
                actual: y.len(),
            });
        }
        Ok(self.v.tr_mul(y))
    }

    /// Lifts a reduced iterate back to the full space: `V_m z`.
    pub fn lift(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.steps_completed {
            return Err(Error::DimensionMismatch {
                expected: self.steps_completed,
                actual: z.len(),
            });
        }
        Ok(self.v_inner() * z)
    }

    /// Returns the decomposition the process would have produced if asked
    /// for only `ell` steps. The Arnoldi recurrence is nested, so this is
    /// an exact prefix copy.
    pub fn truncate(&self, ell: usize) -> Result<ArnoldiDecomposition> {
        if ell == 0 || ell > self.steps_completed {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-step decomposition to {ell} steps",
                self.steps_completed
            )));
        }
        if ell == self.steps_completed {
            return Ok(self.clone());
        }
        Ok(ArnoldiDecomposition {
            v: self.v.columns(0, ell + 1).into_owned(),
            h: self.h.view((0, 0), (ell + 1, ell)).into_owned(),
            steps_completed: ell,
            breakdown: false,
            beta: self.beta,
        })
    }

    /// Writes the decomposition as a binary dump: five little-endian `u64`
    /// header words `[n, v_cols, h_rows, h_cols, breakdown]`, the start
    /// norm as one `f64`, then the `V` and `H` payloads as column-major
    /// little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<()> {
        let header = [
            self.v.nrows() as u64,
            self.v.ncols() as u64,
            self.h.nrows() as u64,
            self.h.ncols() as u64,
            u64::from(self.breakdown),
        ];
        for word in header {
            writer.write_all(&word.to_le_bytes())?;
        }
        writer.write_all(&self.beta.to_le_bytes())?;
        for value in self.v.as_slice().iter().chain(self.h.as_slice()) {
            writer.write_all(&value.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a dump produced by [`ArnoldiDecomposition::write_to`].
    pub fn read_from<R: Read>(mut reader: R) -> Result<ArnoldiDecomposition> {
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)?;
            Ok(u64::from_le_bytes(word))
        };
        let n = next_u64(&mut reader)? as usize;
        let v_cols = next_u64(&mut reader)? as usize;
        let h_rows = next_u64(&mut reader)? as usize;
        let h_cols = next_u64(&mut reader)? as usize;
        let breakdown = match next_u64(&mut reader)? {
            0 => false,
            1 => true,
            other => return Err(Error::Parse(format!("bad breakdown flag {other}"))),
        };
        let expected_v_cols = h_cols + usize::from(!breakdown);
        if h_rows != expected_v_cols || v_cols != expected_v_cols || h_cols == 0 {
            return Err(Error::Parse(format!(
                "inconsistent decomposition dump: n={n}, v_cols={v_cols}, h={h_rows}x{h_cols}"
            )));
        }
        let mut value = [0u8; 8];
        let mut next_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut value)?;
            Ok(f64::from_le_bytes(value))
        };
        let beta = next_f64(&mut reader)?;
        let mut v_data = Vec::with_capacity(n * v_cols);
        for _ in 0..n * v_cols {
            v_data.push(next_f64(&mut reader)?);
        }
        let mut h_data = Vec::with_capacity(h_rows * h_cols);
        for _ in 0..h_rows * h_cols {
            h_data.push(next_f64(&mut reader)?);
        }
        Ok(ArnoldiDecomposition {
            v: DMatrix::from_column_slice(n, v_cols, &v_data),
            h: DMatrix::from_column_slice(h_rows, h_cols, &h_data),
            steps_completed: h_cols,
            breakdown,
            beta,
        })
    }
}

impl ArnoldiDecomposition {
    /// Assembles a decomposition from prevalidated parts. Test support for
    /// exercising the reduced solvers with handpicked Hessenberg factors.
    #[cfg(test)]
    pub(crate) fn from_raw_parts(
        v: DMatrix<f64>,
        h: DMatrix<f64>,
        breakdown: bool,
        beta: f64,
    ) -> ArnoldiDecomposition {
        assert_eq!(v.ncols(), h.nrows());
        assert_eq!(v.ncols(), h.ncols() + usize::from(!breakdown));
        ArnoldiDecomposition {
            steps_completed: h.ncols(),
            v,
            h,
            breakdown,
            beta,
        }
    }
}

/// Runs up to `ell` Arnoldi steps on `(op, b)`.
///
/// Modified Gram-Schmidt with one unconditional reorthogonalization pass.
/// A candidate basis vector whose norm is at most `breakdown_tol` times
/// the running magnitude of the Hessenberg entries terminates the process
/// early with the breakdown flag set; the truncated decomposition is
/// returned as-is.
pub fn arnoldi(
    op: &LinearOperator,
    b: &DVector<f64>,
    ell: usize,
    breakdown_tol: f64,
) -> Result<ArnoldiDecomposition> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: b.len(),
        });
    }
    if ell == 0 || ell > n {
        return Err(Error::InvalidArgument(format!(
            "requested {ell} Arnoldi steps for an operator of dimension {n}"
        )));
    }
    let beta = b.norm();
    if beta == 0.0 {
        return Err(Error::ZeroVector);
    }

    let mut v = DMatrix::zeros(n, ell + 1);
    let mut h = DMatrix::zeros(ell + 1, ell);
    v.set_column(0, &(b / beta));
    let mut h_scale = 0.0_f64;

    for k in 0..ell {
        let mut w = op.apply(&v.column(k).into_owned())?;
        for pass in 0..2 {
            for i in 0..=k {
                let coeff = v.column(i).dot(&w);
                w.axpy(-coeff, &v.column(i).into_owned(), 1.0);
                if pass == 0 {
                    h[(i, k)] = coeff;
                } else {
                    h[(i, k)] += coeff;
                }
            }
        }
        let w_norm = w.norm();
        for i in 0..=k {
            h_scale = h_scale.max(h[(i, k)].abs());
        }
        if w_norm <= breakdown_tol * h_scale {
            let m = k + 1;
            return Ok(ArnoldiDecomposition {
                v: v.columns(0, m).into_owned(),
                h: h.view((0, 0), (m, m)).into_owned(),
                steps_completed: m,
                breakdown: true,
                beta,
            });
        }
        h[(k + 1, k)] = w_norm;
        h_scale = h_scale.max(w_norm);
        v.set_column(k + 1, &(w / w_norm));
    }

    Ok(ArnoldiDecomposition {
        v,
        h,
        steps_completed: ell,
        breakdown: false,
        beta,
    })
}

/// Applies the operator to each column of a matrix.
pub fn apply_columns(op: &LinearOperator, m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(op.dim(), m.ncols());
    for j in 0..m.ncols() {
        let col = op
            .apply(&m.column(j).into_owned())
            .expect("dimension fixed by construction");
        out.set_column(j, &col);
    }
    out
}

/// Spectral norm of `B = T (I - W W^T)` for an orthonormal block `W`,
/// estimated exactly (dense SVD) below [`DENSE_GAP_LIMIT`] and by power
/// iteration otherwise.
fn projected_operator_norm(op: &LinearOperator, w: &DMatrix<f64>, tol: f64, right: bool) -> f64 {
    let n = op.dim();
    if n <= DENSE_GAP_LIMIT {
        let dense = op.to_dense();
        let m = if right {
            // T (I - W W^T)
            &dense - (&dense * w) * w.transpose()
        } else {
            // (I - W W^T) T
            &dense - w * (w.tr_mul(&dense))
        };
        let svd = m.svd(false, false);
        return svd.singular_values.max();
    }
    let project_out = |x: &DVector<f64>| -> DVector<f64> {
        let coeffs = w.tr_mul(x);
        x - w * coeffs
    };
    let estimate: NormEstimate = if right {
        power_norm(
            |x| op.apply(&project_out(x)).expect("dimension fixed"),
            |x| project_out(&op.apply_transpose(x).expect("dimension fixed")),
            n,
            tol,
            GAP_MAX_ITERS,
        )
    } else {
        power_norm(
            |x| project_out(&op.apply(x).expect("dimension fixed")),
            |x| op.apply_transpose(&project_out(x)).expect("dimension fixed"),
            n,
            tol,
            GAP_MAX_ITERS,
        )
    };
    estimate.value
}

/// Estimates `h_ell`, the spectral distance between `T` and its Arnoldi
/// approximation `T V_m V_m^T` (with `m` the effective step count).
pub fn approximation_gap(op: &LinearOperator, dec: &ArnoldiDecomposition, tol: f64) -> f64 {
    let v_inner = dec.v_inner().into_owned();
    projected_operator_norm(op, &v_inner, tol, true)
}

/// Estimates `gamma_ell = ||(I - R) T||` where `R` is the orthogonal
/// projector onto the range of the Arnoldi approximation, assembled from
/// the basis and the left singular vectors of the Hessenberg factor.
pub fn gamma_ell(op: &LinearOperator, svd: &HessenbergSvd, dec: &ArnoldiDecomposition) -> f64 {
    let q = svd.rank();
    if q == 0 {
        let est = operator_norm_for_gap(op);
        return est;
    }
    // W = V U_q has orthonormal columns; R = W W^T.
    let w = dec.v() * svd.u().columns(0, q);
    projected_operator_norm(op, &w, 1e-8, false)
}

fn operator_norm_for_gap(op: &LinearOperator) -> f64 {
    if op.dim() <= DENSE_GAP_LIMIT {
        op.to_dense().svd(false, false).singular_values.max()
    } else {
        crate::operator::operator_two_norm(op, 1e-8, GAP_MAX_ITERS).value
    }
}
