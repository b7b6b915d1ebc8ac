//! Discretized linear operators: dense matrices and the matrix-free
//! Kronecker blur, behind one forward-application interface.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Tag distinguishing the available operator realizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Dense,
    KronBlur,
}

/// Dense square operator stored as an explicit matrix.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    entries: DMatrix<f64>,
}

impl DenseOperator {
    /// Wraps a square matrix; all entries must be finite.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                actual: entries.ncols(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dense operator entries"));
        }
        Ok(Self { entries })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }
}

/// Matrix-free blur operator `T = A (x) A` acting on column-stacked
/// `n x n` images, where `A` is a symmetric factor. Application computes
/// `A * X * A^T` on the reshaped image instead of forming the
/// `n^2 x n^2` Kronecker product.
#[derive(Debug, Clone)]
pub struct KronBlurOperator {
    factor: DMatrix<f64>,
}

impl KronBlurOperator {
    /// Builds the operator from its factor; the factor must be square and
    /// exactly symmetric.
    pub fn from_factor(factor: DMatrix<f64>) -> Result<Self> {
        if factor.nrows() != factor.ncols() {
            return Err(Error::DimensionMismatch {
                expected: factor.nrows(),
                actual: factor.ncols(),
            });
        }
        if factor.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("blur factor entries"));
        }
        for i in 0..factor.nrows() {
            for j in 0..i {
                if factor[(i, j)] != factor[(j, i)] {
                    return Err(Error::InvalidArgument(
                        "blur factor must be exactly symmetric".into(),
                    ));
                }
            }
        }
        Ok(Self { factor })
    }

    /// Side length of the image grid (the operator acts on `side^2` pixels).
    pub fn side(&self) -> usize {
        self.factor.nrows()
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

/// A real square operator with a forward matrix-vector product.
#[derive(Debug, Clone)]
pub enum LinearOperator {
    Dense(DenseOperator),
    KronBlur(KronBlurOperator),
}

impl LinearOperator {
    pub fn kind(&self) -> OperatorKind {
        match self {
            LinearOperator::Dense(_) => OperatorKind::Dense,
            LinearOperator::KronBlur(_) => OperatorKind::KronBlur,
        }
    }

    /// Dimension `n` of the underlying `n x n` operator.
    pub fn dim(&self) -> usize {
        match self {
            LinearOperator::Dense(d) => d.entries.nrows(),
            LinearOperator::KronBlur(k) => k.side() * k.side(),
        }
    }

    /// Computes `T x`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(match self {
            LinearOperator::Dense(d) => &d.entries * x,
            LinearOperator::KronBlur(k) => {
                let n = k.side();
                let image = DMatrix::from_column_slice(n, n, x.as_slice());
                // vec(A X A^T) = (A (x) A) vec(X); A is symmetric.
                let blurred = &k.factor * image * &k.factor;
                DVector::from_column_slice(blurred.as_slice())
            }
        })
    }

    /// Computes `T^T x`. Not part of the public solver surface: the
    /// reductions only need forward products, but the gap estimators do
    /// apply the transpose. Dense operators use the stored entries, the
    /// blur operator is symmetric.
    pub(crate) fn apply_transpose(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            LinearOperator::Dense(d) => {
                if x.len() != self.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.dim(),
                        actual: x.len(),
                    });
                }
                Ok(d.entries.tr_mul(x))
            }
            LinearOperator::KronBlur(_) => self.apply(x),
        }
    }

    /// Materializes the operator as a dense matrix (test and export scale).
    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LinearOperator::Dense(d) => d.entries.clone(),
            LinearOperator::KronBlur(k) => k.factor.kronecker(&k.factor),
        }
    }
}

impl From<DenseOperator> for LinearOperator {
    fn from(d: DenseOperator) -> Self {
        LinearOperator::Dense(d)
    }
}

impl From<KronBlurOperator> for LinearOperator {
    fn from(k: KronBlurOperator) -> Self {
        LinearOperator::KronBlur(k)
    }
}

/// Result of a spectral-norm estimation.
#[derive(Debug, Clone, Copy)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
}

/// Power iteration on a composite map `x -> B^T (B x)`, returning an
/// estimate of the largest singular value of `B`. Deterministic all-ones
/// start vector; stops when the relative change drops below `tol`.
pub(crate) fn power_norm<F, G>(forward: F, adjoint: G, n: usize, tol: f64, max_iter: usize) -> NormEstimate
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut previous = 0.0_f64;
    for _ in 0..max_iter {
        let bx = forward(&x);
        let estimate = bx.norm();
        if estimate == 0.0 {
            return NormEstimate {
                value: 0.0,
                converged: true,
            };
        }
        if (estimate - previous).abs() <= tol * estimate {
            return NormEstimate {
                value: estimate,
                converged: true,
            };
        }
        previous = estimate;
        let z = adjoint(&bx);
        let z_norm = z.norm();
        if z_norm == 0.0 {
            // B^T B x vanished while B x did not; the estimate cannot improve.
            return NormEstimate {
                value: estimate,
                converged: false,
            };
        }
        x = z / z_norm;
    }
    NormEstimate {
        value: previous,
        converged: false,
    }
}

/// Estimates the spectral norm of `op` by power iteration on `T^T T`.
pub fn operator_two_norm(op: &LinearOperator, tol: f64, max_iter: usize) -> NormEstimate {
    power_norm(
        |x| op.apply(x).expect("dimension fixed by construction"),
        |x| op.apply_transpose(x).expect("dimension fixed by construction"),
        op.dim(),
        tol,
        max_iter,
    )
}

/// Writes a square matrix in the text exchange format: a header line with
/// `n`, then `n` rows of `n` whitespace-separated decimals.
pub fn write_matrix_text<W: Write>(writer: W, matrix: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{}", matrix.nrows())?;
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols()).map(|j| format!("{}", matrix[(i, j)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a square matrix written by [`write_matrix_text`].
pub fn read_matrix_text<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))??;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad matrix header {header:?}")))?;
    let mut entries = Vec::with_capacity(n * n);
    for (i, line) in lines.enumerate().take(n) {
        let line = line?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value {tok:?} in row {i}")))
            })
            .collect::<Result<_>>()?;
        if row.len() != n {
            return Err(Error::Parse(format!(
                "row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        entries.extend(row);
    }
    if entries.len() != n * n {
        return Err(Error::Parse(format!(
            "matrix file has {} values, expected {}",
            entries.len(),
            n * n
        )));
    }
    Ok(DMatrix::from_row_slice(n, n, &entries))
}

/// Writes a vector as an `n`-header followed by one value per line.
pub fn write_vector_text<W: Write>(writer: W, vector: &DVector<f64>) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "{}", vector.len())?;
    for v in vector.iter() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a vector written by [`write_vector_text`].
pub fn read_vector_text<R: Read>(reader: R) -> Result<DVector<f64>> {
    let mut lines = BufReader::new(reader).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty vector file".into()))??;
    let n: usize = header
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad vector header {header:?}")))?;
    let mut entries = Vec::with_capacity(n);
    for line in lines.take(n) {
        let line = line?;
        let tok = line.trim();
        entries.push(
            tok.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad value {tok:?}")))?,
        );
    }
    if entries.len() != n {
        return Err(Error::Parse(format!(
            "vector file has {} values, expected {n}",
            entries.len()
        )));
    }
    Ok(DVector::from_vec(entries))
}

/// Loads a dense operator from a matrix text file.
pub fn load_dense_operator<P: AsRef<Path>>(path: P) -> Result<LinearOperator> {
    let file = std::fs::File::open(path)?;
    let matrix = read_matrix_text(file)?;
    Ok(DenseOperator::new(matrix)?.into())
}

/// Writes a vector as a binary dump: a little-endian `u64` length header
/// followed by the entries as little-endian `f64`.
pub fn write_vector_binary<W: Write>(mut writer: W, vector: &DVector<f64>) -> Result<()> {
    writer.write_all(&(vector.len() as u64).to_le_bytes())?;
    for value in vector.iter() {
        writer.write_all(&value.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a vector written by [`write_vector_binary`].
pub fn read_vector_binary<R: Read>(mut reader: R) -> Result<DVector<f64>> {
    let mut word = [0u8; 8];
    reader.read_exact(&mut word)?;
    let len = u64::from_le_bytes(word) as usize;
    let mut entries = Vec::with_capacity(len);
    for _ in 0..len {
        reader.read_exact(&mut word)?;
        entries.push(f64::from_le_bytes(word));
    }
    Ok(DVector::from_vec(entries))
}
