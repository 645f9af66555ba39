//! Deterministic matrix decompositions and linear solvers used by the
//! conversions: Hermitian eigendecomposition, Cholesky, reduced SVD,
//! triangular back-substitution and pivoted LU.
//!
//! The factorizations are computed by `nalgebra`; this module fixes the
//! ordering and phase conventions on top so repeated runs give identical
//! bits and the callers never depend on library-specific layouts.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, LU, SVD};

use crate::error::{Error, Result};
use crate::model::{CMat, C64, STRUCTURAL_TOL};

/// Default relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-9;

/// Eigendecomposition `A = basis * diag(values) * basis^H` of a Hermitian
/// matrix, eigenvalues sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianEigen {
    pub basis: CMat,
    pub values: Vec<f64>,
}

/// Lower-triangular `L` with real positive diagonal and `A = L L^H`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub l: CMat,
}

/// `A = U diag(D) V^H` truncated to the numerical rank.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSvd {
    pub u: CMat,
    pub singular_values: Vec<f64>,
    pub v: CMat,
}

impl ReducedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

pub fn hermitian_asymmetry(a: &CMat) -> f64 {
    (a - a.adjoint()).norm()
}

pub fn check_hermitian(a: &CMat, rel_tol: f64) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {:?}",
            a.shape()
        )));
    }
    let asymmetry = hermitian_asymmetry(a);
    let tolerance = rel_tol * a.norm();
    if asymmetry > tolerance {
        return Err(Error::NotHermitian {
            asymmetry,
            tolerance,
        });
    }
    Ok(())
}

/// `(A + A^H) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * C64::new(0.5, 0.0)
}

pub fn hermitian_eig(a: &CMat) -> Result<HermitianEigen> {
    check_hermitian(a, STRUCTURAL_TOL)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(HermitianEigen {
            basis: CMat::zeros(0, 0),
            values: Vec::new(),
        });
    }
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in the library's output order.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut basis = CMat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let v = eig.eigenvectors.column(src);
        let phase = phase_of_largest(v.iter());
        for row in 0..n {
            basis[(row, col)] = v[row] * phase;
        }
    }
    Ok(HermitianEigen { basis, values })
}

/// Unit scalar that rotates the first largest-magnitude entry onto the
/// nonnegative real axis.
fn phase_of_largest<'a>(entries: impl Iterator<Item = &'a C64>) -> C64 {
    let mut best = C64::new(0.0, 0.0);
    let mut best_abs = 0.0;
    for z in entries {
        let m = z.norm();
        if m > best_abs {
            best_abs = m;
            best = *z;
        }
    }
    if best_abs == 0.0 {
        C64::new(1.0, 0.0)
    } else {
        best.conj() / best_abs
    }
}

pub fn cholesky(a: &CMat) -> Result<CholeskyFactor> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {:?}",
            a.shape()
        )));
    }
    let chol = Cholesky::new(hermitian_part(a)).ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    // A negative pivot surfaces as an (almost) imaginary square root.
    if (0..l.nrows()).any(|i| !(l[(i, i)].re > 0.0) || l[(i, i)].im.abs() > 1e-8 * l[(i, i)].re) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(CholeskyFactor { l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `L^{-1} B` by forward substitution.
    pub fn solve_lower(&self, b: &CMat) -> CMat {
        self.l
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `L^{-H} B` by back substitution.
    pub fn solve_upper(&self, b: &CMat) -> CMat {
        self.l
            .ad_solve_lower_triangular(b)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `A^{-1} B` for the factored `A = L L^H`.
    pub fn solve(&self, b: &CMat) -> CMat {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log2 det A`.
    pub fn log2_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.l[(i, i)].re.log2())
            .sum::<f64>()
    }
}

pub fn reduced_svd(a: &CMat, rank_tol: f64) -> Result<ReducedSvd> {
    let (rows, cols) = a.shape();
    crate::model::check_finite(a, || "SVD input".into())?;
    if rows == 0 || cols == 0 || a.norm() == 0.0 {
        return Ok(ReducedSvd {
            u: CMat::zeros(rows, 0),
            singular_values: Vec::new(),
            v: CMat::zeros(cols, 0),
        });
    }
    let svd = SVD::new(a.clone(), true, true);
    let u_full = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = &svd.singular_values;

    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let largest = sv[order[0]];
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sv[i] > rank_tol * largest)
        .collect();

    let rank = kept.len();
    let mut u = CMat::zeros(rows, rank);
    let mut v = CMat::zeros(cols, rank);
    let mut singular_values = Vec::with_capacity(rank);
    for (col, &src) in kept.iter().enumerate() {
        singular_values.push(sv[src]);
        u.set_column(col, &u_full.column(src));
        v.set_column(col, &v_t.row(src).adjoint());
    }
    Ok(ReducedSvd {
        u,
        singular_values,
        v,
    })
}

/// Solves `M x = rhs` for an upper-triangular `M` with a positive diagonal.
///
/// Block upper-triangular matrices whose diagonal blocks are diagonal are
/// upper triangular, so plain back-substitution applies.
pub fn solve_block_upper_triangular(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = check_system(m, rhs)?;
    for row in 0..n {
        for col in 0..row {
            if m[(row, col)] != 0.0 {
                return Err(Error::NotTriangular {
                    row,
                    col,
                    value: m[(row, col)],
                });
            }
        }
        let d = m[(row, row)];
        if !(d > 0.0) {
            return Err(Error::NonPositivePivot {
                index: row,
                value: d,
            });
        }
    }
    let mut x = DVector::zeros(n);
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for col in row + 1..n {
            acc -= m[(row, col)] * x[col];
        }
        x[row] = acc / m[(row, row)];
    }
    Ok(x)
}

/// Solves `M x = rhs` by LU factorization with partial pivoting.
pub fn solve_lu(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = check_system(m, rhs)?;
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = LU::new(m.clone());
    let u = lu.u();
    let scale = m.amax();
    if (0..n).any(|i| !(u[(i, i)].abs() > f64::EPSILON * scale * n as f64)) {
        return Err(Error::Singular);
    }
    lu.solve(rhs).ok_or(Error::Singular)
}

fn check_system(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<usize> {
    if !m.is_square() || m.nrows() != rhs.len() {
        return Err(Error::Dimension(format!(
            "system matrix {:?} with right-hand side of length {}",
            m.shape(),
            rhs.len()
        )));
    }
    Ok(m.nrows())
}

/// Relative residual `||M x - rhs|| / (||M|| ||x|| + ||rhs||)`.
pub fn relative_residual(m: &DMatrix<f64>, x: &DVector<f64>, rhs: &DVector<f64>) -> f64 {
    let denom = m.norm() * x.norm() + rhs.norm();
    if denom == 0.0 {
        0.0
    } else {
        (m * x - rhs).norm() / denom
    }
}

/// Hermitian within `STRUCTURAL_TOL` and smallest eigenvalue at least
/// `-rel_tol` times the largest.
pub fn check_psd(a: &CMat, rel_tol: f64) -> Result<()> {
    let eig = hermitian_eig(a)?;
    let (Some(&max), Some(&min)) = (eig.values.first(), eig.values.last()) else {
        return Ok(());
    };
    if min < -rel_tol * max.max(0.0) {
        return Err(Error::NotPositiveSemidefinite { min, max });
    }
    Ok(())
}

/// `I_n` as a complex matrix.
pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `s * I_n`.
pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(n, n, C64::new(s, 0.0))
}
