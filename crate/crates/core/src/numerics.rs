//! Dense complex linear algebra used by every stage of the optimizer.
//!
//! [`CMatrix`] wraps an `nalgebra` matrix and guarantees finite entries at
//! construction. The free functions in this module ([`hermitian_eig`],
//! [`hadamard`], [`trace`], [`solve_hpd`]) are pure and validate their
//! shape preconditions, returning [`Error`] instead of panicking.

use std::ops::Deref;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Maximum elementwise deviation `|a - a^H|` accepted as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Smallest eigenvalue a matrix may have and still count as positive definite.
pub const HPD_MIN_EIGENVALUE: f64 = 1e-12;
/// Relative Frobenius error allowed when reconstructing from an eigendecomposition.
pub const EIG_RECONSTRUCTION_TOL: f64 = 1e-9;
/// Allowed deviation of `T^H T` from the identity.
pub const EIG_UNITARY_TOL: f64 = 1e-10;
/// Relative residual target for [`solve_hpd`].
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-9;

/// Dense complex matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix(DMatrix<C64>);

impl CMatrix {
    /// Wraps an `nalgebra` matrix, rejecting NaN or infinite entries.
    pub fn new(inner: DMatrix<C64>) -> Result<Self> {
        if let Some(bad) = inner.iter().find(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape(format!("non-finite matrix entry {bad}")));
        }
        Ok(Self(inner))
    }

    /// Builds a matrix from entries in row-major order.
    pub fn from_row_slice(rows: usize, cols: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(rows, cols, entries))
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let entries: Vec<C64> = rows
            .iter()
            .flat_map(|row| row.iter().map(|&x| C64::new(x, 0.0)))
            .collect();
        Self::from_row_slice(r, c, &entries)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Internal constructor for results of arithmetic on already-finite
    /// matrices. Overflow can still produce infinities; callers that feed
    /// user data go through [`CMatrix::new`].
    pub(crate) fn wrap(inner: DMatrix<C64>) -> Self {
        Self(inner)
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    /// Matrix product, checking inner dimensions.
    pub fn matmul(&self, rhs: &CMatrix) -> Result<CMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows(),
                self.cols(),
                rhs.rows(),
                rhs.cols()
            )));
        }
        Ok(Self(&self.0 * &rhs.0))
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        Self(self.0.adjoint())
    }

    pub fn transpose(&self) -> CMatrix {
        Self(self.0.transpose())
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        Self(&self.0 * s)
    }

    /// Squared Frobenius norm.
    pub fn frob_norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        self.0.column(j).iter().copied().collect()
    }

    pub fn row(&self, i: usize) -> Vec<C64> {
        self.0.row(i).iter().copied().collect()
    }

    /// Largest elementwise deviation `|a_ij - conj(a_ji)|`.
    pub fn hermitian_deviation(&self) -> f64 {
        let n = self.rows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }
}

impl Deref for CMatrix {
    type Target = DMatrix<C64>;

    fn deref(&self) -> &DMatrix<C64> {
        &self.0
    }
}

/// Eigendecomposition `a = T diag(eigenvalues) T^H` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Real eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose columns are the matching eigenvectors.
    pub eigenvectors: CMatrix,
}

impl HermitianEig {
    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(0.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// Rebuilds `T Λ T^H`.
    pub fn reconstruct(&self) -> CMatrix {
        let t = &self.eigenvectors.0;
        let lambda = DMatrix::from_diagonal(&DVector::from_iterator(
            self.eigenvalues.len(),
            self.eigenvalues.iter().map(|&l| C64::new(l, 0.0)),
        ));
        CMatrix(t * lambda * t.adjoint())
    }
}

fn require_square(a: &CMatrix, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{what} requires a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
///
/// The input is symmetrized as `(a + a^H)/2` after the tolerance check so
/// rounding asymmetry in assembled matrices does not leak into the result.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEig> {
    require_square(a, "hermitian_eig")?;
    let dev = a.hermitian_deviation();
    if dev > HERMITIAN_TOL {
        return Err(Error::Shape(format!(
            "matrix is not Hermitian: max |a - a^H| = {dev:e}"
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Ok(HermitianEig {
            eigenvalues: Vec::new(),
            eigenvectors: CMatrix::zeros(0, 0),
        });
    }
    let sym = (&a.0 + a.0.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors: CMatrix(eigenvectors),
    })
}

/// Elementwise (Hadamard) product.
pub fn hadamard(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "hadamard of {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(CMatrix(a.0.component_mul(&b.0)))
}

pub fn trace(a: &CMatrix) -> Result<C64> {
    require_square(a, "trace")?;
    Ok(a.0.trace())
}

/// Solves `a x = b` for Hermitian positive definite `a`.
///
/// Fails with [`Error::Numerical`] carrying the smallest eigenvalue when `a`
/// is singular or indefinite.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    require_square(a, "solve_hpd")?;
    if a.rows() != b.rows() {
        return Err(Error::Dimension(format!(
            "solve_hpd: lhs is {}x{}, rhs has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let not_hpd = |a: &CMatrix| -> Error {
        let min_eigenvalue = hermitian_eig(a)
            .map(|e| e.min_eigenvalue())
            .unwrap_or(f64::NAN);
        Error::Numerical {
            message: "matrix is not Hermitian positive definite".into(),
            min_eigenvalue,
        }
    };
    if a.hermitian_deviation() > HERMITIAN_TOL {
        return Err(Error::Shape("solve_hpd: matrix is not Hermitian".into()));
    }
    let chol = Cholesky::new(a.0.clone()).ok_or_else(|| not_hpd(a))?;
    // Cholesky succeeds on barely-positive pivots; reject those too.
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|z| z.re * z.re)
        .fold(f64::INFINITY, f64::min);
    if min_pivot <= HPD_MIN_EIGENVALUE {
        let err = not_hpd(a);
        if let Error::Numerical { min_eigenvalue, .. } = &err {
            if *min_eigenvalue <= HPD_MIN_EIGENVALUE {
                return Err(err);
            }
        }
    }
    Ok(CMatrix(chol.solve(&b.0)))
}
