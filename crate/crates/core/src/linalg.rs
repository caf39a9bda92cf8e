//! Small dense symmetric-matrix toolkit.
//!
//! Everything the estimators need from linear algebra goes through one
//! symmetric eigendecomposition: inverse square roots for the
//! transformation-retransformation steps, eigenvectors for the rank-based
//! MRCM, and the positive-definiteness floor checks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor separating "singular" from "ill-conditioned".
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Eigen-decomposition `m = V diag(values) Vᵀ` with values sorted descending.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&self.values);
        &self.vectors * d * self.vectors.transpose()
    }

    /// `V f(Λ) Vᵀ` for a scalar map applied to the eigenvalues.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let dim = self.values.len();
        let mut out = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let w = f(self.values[k]);
            let v = self.vectors.column(k);
            for j in 0..dim {
                for i in 0..dim {
                    out[(i, j)] += w * v[i] * v[j];
                }
            }
        }
        symmetrize(&mut out);
        out
    }
}

pub fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("matrix entry".into()))
    }
}

/// Symmetric eigendecomposition; eigenvalues descending, orthonormal eigenvectors.
pub fn sym_eigen(m: &DMatrix<f64>) -> Result<SymEigen> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    check_finite(m)?;
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);
    let dim = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(dim, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(dim, dim);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(k));
    }
    Ok(SymEigen { values, vectors })
}

fn positive_floor(eig: &SymEigen) -> Result<()> {
    let trace: f64 = eig.values.iter().sum();
    let floor = EIGEN_FLOOR * trace.abs();
    let min = eig.values[eig.values.len() - 1];
    if !(min > floor) {
        return Err(Error::Singular {
            min_eigenvalue: min,
            floor,
        });
    }
    Ok(())
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(m)?;
    positive_floor(&eig)?;
    Ok(eig.map(|l| 1.0 / l.sqrt()))
}

/// Symmetric square root and inverse square root from a single decomposition.
pub fn sqrt_and_inv_sqrt(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = sym_eigen(m)?;
    positive_floor(&eig)?;
    Ok((eig.map(f64::sqrt), eig.map(|l| 1.0 / l.sqrt())))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn trace(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().sum()
}

/// Overwrite the lower triangle with the upper one.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let dim = m.nrows();
    for j in 0..dim {
        for i in (j + 1)..dim {
            m[(i, j)] = m[(j, i)];
        }
    }
}

/// Unpack a row-major upper-triangle buffer (`i <= j`) into a full symmetric matrix.
pub(crate) fn from_packed_upper(dim: usize, packed: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            m[(i, j)] = packed[k];
            m[(j, i)] = packed[k];
            k += 1;
        }
    }
    m
}
