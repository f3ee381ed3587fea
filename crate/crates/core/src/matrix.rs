//! Dense complex matrices and the validated Hermitian wrapper.
//!
//! Everything downstream works on `ndarray::Array2<C64>`. Hamiltonian terms,
//! generators and observables enter the library through [`HermitianOperator`],
//! which checks the symmetry once at construction so the engines can assume
//! it afterwards.

use ndarray::Array2;
use num_complex::Complex64;

use crate::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;

/// Relative tolerance on `|m[j][k] - conj(m[k][j])|` versus the max-norm.
pub const HERMITICITY_REL_TOL: f64 = 1e-12;

/// Largest entry magnitude.
pub fn max_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Maximum column sum of entry magnitudes (the induced 1-norm).
pub fn one_norm(m: &CMatrix) -> f64 {
    let (rows, cols) = m.dim();
    (0..cols)
        .map(|k| (0..rows).map(|j| m[[j, k]].norm()).sum())
        .fold(0.0, f64::max)
}

/// Conjugate transpose.
pub fn dagger(m: &CMatrix) -> CMatrix {
    let (rows, cols) = m.dim();
    CMatrix::from_shape_fn((cols, rows), |(j, k)| m[[k, j]].conj())
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::from_shape_fn((dim, dim), |(j, k)| {
        if j == k {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Diagonal matrix from real entries.
pub fn diag_matrix(entries: &[f64]) -> CMatrix {
    let n = entries.len();
    CMatrix::from_shape_fn((n, n), |(j, k)| {
        if j == k {
            C64::new(entries[j], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

pub fn trace(m: &CMatrix) -> C64 {
    m.diag().sum()
}

/// Largest magnitude of `m[j][k] - conj(m[k][j])` over all entries.
pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for k in j..n {
            let dev = (m[[j, k]] - m[[k, j]].conj()).norm();
            worst = worst.max(dev);
        }
    }
    worst
}

fn require_square(m: &CMatrix) -> Result<usize> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    Ok(rows)
}

fn require_same_dim(a: &CMatrix, b: &CMatrix) -> Result<usize> {
    let n = require_square(a)?;
    let m = require_square(b)?;
    if n != m {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m,
        });
    }
    Ok(n)
}

/// `ab - ba`.
///
/// For Hermitian `a`, `b` the result is anti-Hermitian, so `i(ab - ba)` is
/// Hermitian again; the perturbation engines lean on that closure.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    require_same_dim(a, b)?;
    Ok(a.dot(b) - b.dot(a))
}

/// Matrix exponential by scaling and squaring of a Taylor sum.
///
/// The argument is halved until its 1-norm is at most 1/2, the Taylor series
/// is summed to machine precision there, and the result is squared back up.
/// For anti-Hermitian input the output is unitary to rounding error.
pub fn expm(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / 2.0_f64.powi(squarings as i32));

    let mut sum = identity(n);
    let mut term = identity(n);
    for k in 1..=40 {
        term = term.dot(&scaled).mapv(|z| z / k as f64);
        sum += &term;
        if max_norm(&term) < 1e-18 * max_norm(&sum).max(1.0) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}

/// Rescale each column so its largest-magnitude entry is real and positive.
///
/// Ties below 1e-12 in magnitude keep the first (lowest-index) candidate so
/// the convention is deterministic.
pub fn phase_fix_columns(m: &CMatrix) -> CMatrix {
    let (rows, cols) = m.dim();
    let mut out = m.clone();
    for k in 0..cols {
        let mut best = 0usize;
        let mut best_mag = 0.0_f64;
        for j in 0..rows {
            let mag = out[[j, k]].norm();
            if mag > best_mag + 1e-12 {
                best_mag = mag;
                best = j;
            }
        }
        if best_mag > 0.0 {
            let phase = out[[best, k]] / best_mag;
            let correction = phase.conj();
            for j in 0..rows {
                out[[j, k]] *= correction;
            }
        }
    }
    out
}

/// An N x N complex matrix checked to be Hermitian at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    mat: CMatrix,
}

impl HermitianOperator {
    /// Validate with the default relative tolerance [`HERMITICITY_REL_TOL`].
    pub fn new(mat: CMatrix) -> Result<Self> {
        Self::with_tolerance(mat, HERMITICITY_REL_TOL)
    }

    /// Validate with an explicit relative tolerance.
    pub fn with_tolerance(mat: CMatrix, rel_tol: f64) -> Result<Self> {
        let n = require_square(&mat)?;
        if n == 0 {
            return Err(Error::EmptySpectrum);
        }
        let scale = max_norm(&mat);
        let deviation = hermiticity_deviation(&mat);
        let tolerance = rel_tol * scale.max(f64::MIN_POSITIVE);
        if scale > 0.0 && deviation > tolerance {
            return Err(Error::NonHermitianInput {
                deviation,
                tolerance,
            });
        }
        Ok(Self { mat })
    }

    /// Diagonal Hermitian operator from real entries.
    pub fn from_diagonal(entries: &[f64]) -> Self {
        Self {
            mat: diag_matrix(entries),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_shape_vec(
        (2, 2),
        vec![
            C64::new(0.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
        ],
    )
    .unwrap()
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_shape_vec(
        (2, 2),
        vec![
            C64::new(0.0, 0.0),
            C64::new(0.0, -1.0),
            C64::new(0.0, 1.0),
            C64::new(0.0, 0.0),
        ],
    )
    .unwrap()
}

pub fn pauli_z() -> CMatrix {
    diag_matrix(&[1.0, -1.0])
}
