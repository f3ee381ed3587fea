//! Truncated operator power series in the expansion parameter.
//!
//! An [`OperatorSeries`] stores matrix coefficients `X₀, X₁, …, X_M` of
//! `X(ε) = Σₙ εⁿ Xₙ` up to a fixed truncation order. Arithmetic is exact on
//! the retained coefficients and silently drops everything beyond the
//! truncation, which is the contract every perturbative recursion here needs.

use ndarray::Array2;

use crate::matrix::{max_norm, CMatrix, C64};
use crate::{Error, Result};

/// A matrix-valued polynomial `Σₙ εⁿ Xₙ`, `n = 0..=max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSeries {
    dim: usize,
    coeffs: Vec<CMatrix>,
}

impl OperatorSeries {
    /// The zero series with `max_order + 1` vanishing coefficients.
    pub fn zero(dim: usize, max_order: usize) -> Self {
        Self {
            dim,
            coeffs: vec![Array2::zeros((dim, dim)); max_order + 1],
        }
    }

    /// A series whose only nonzero coefficient is `X₀ = mat`.
    pub fn constant(mat: CMatrix, max_order: usize) -> Result<Self> {
        Self::from_coeffs(vec![mat], max_order)
    }

    /// Build from explicit leading coefficients, zero-padded to `max_order`.
    pub fn from_coeffs(coeffs: Vec<CMatrix>, max_order: usize) -> Result<Self> {
        let mut iter = coeffs.into_iter();
        let first = iter.next().ok_or(Error::EmptySpectrum)?;
        let (rows, cols) = first.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        let dim = rows;
        let mut out = Vec::with_capacity(max_order + 1);
        out.push(first);
        for mat in iter {
            if mat.dim() != (dim, dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: mat.nrows(),
                });
            }
            out.push(mat);
        }
        out.truncate(max_order + 1);
        while out.len() < max_order + 1 {
            out.push(Array2::zeros((dim, dim)));
        }
        Ok(Self { dim, coeffs: out })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient of `εⁿ`; zero matrix beyond the truncation order.
    pub fn coeff(&self, n: usize) -> CMatrix {
        self.coeffs
            .get(n)
            .cloned()
            .unwrap_or_else(|| Array2::zeros((self.dim, self.dim)))
    }

    pub fn coeffs(&self) -> &[CMatrix] {
        &self.coeffs
    }

    /// Overwrite the coefficient of `εⁿ`.
    pub fn set_coeff(&mut self, n: usize, mat: CMatrix) -> Result<()> {
        if mat.dim() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: mat.nrows(),
            });
        }
        if n >= self.coeffs.len() {
            return Err(Error::MissingLowerOrder {
                order: n,
                required: n + 1,
                available: self.coeffs.len(),
            });
        }
        self.coeffs[n] = mat;
        Ok(())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// Coefficient-wise sum, truncated to the shorter of the two orders.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let order = self.max_order().min(other.max_order());
        let coeffs = (0..=order)
            .map(|n| &self.coeffs[n] + &other.coeffs[n])
            .collect();
        Ok(Self {
            dim: self.dim,
            coeffs,
        })
    }

    /// Coefficient-wise difference, truncated to the shorter order.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let order = self.max_order().min(other.max_order());
        let coeffs = (0..=order)
            .map(|n| &self.coeffs[n] - &other.coeffs[n])
            .collect();
        Ok(Self {
            dim: self.dim,
            coeffs,
        })
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|c| c.mapv(|z| z * factor)).collect(),
        }
    }

    /// Truncated Cauchy product: `(XY)ₙ = Σ_{a+b=n} Xₐ Y_b`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let order = self.max_order().min(other.max_order());
        let mut coeffs = vec![Array2::zeros((self.dim, self.dim)); order + 1];
        for a in 0..=order {
            for b in 0..=(order - a) {
                coeffs[a + b] = &coeffs[a + b] + &self.coeffs[a].dot(&other.coeffs[b]);
            }
        }
        Ok(Self {
            dim: self.dim,
            coeffs,
        })
    }

    /// Series commutator `[X, Y](ε)`, truncated like [`OperatorSeries::mul`].
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    /// Drop coefficients beyond `max_order` (or zero-pad up to it).
    pub fn truncated(&self, max_order: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.truncate(max_order + 1);
        while coeffs.len() < max_order + 1 {
            coeffs.push(Array2::zeros((self.dim, self.dim)));
        }
        Self {
            dim: self.dim,
            coeffs,
        }
    }

    /// Horner evaluation of the polynomial at a concrete `ε`.
    pub fn evaluate(&self, eps: f64) -> CMatrix {
        let mut acc: CMatrix = Array2::zeros((self.dim, self.dim));
        for c in self.coeffs.iter().rev() {
            acc = acc.mapv(|z| z * eps) + c;
        }
        acc
    }

    /// Largest entry magnitude over all retained coefficients.
    pub fn max_norm(&self) -> f64 {
        self.coeffs.iter().map(max_norm).fold(0.0, f64::max)
    }
}

/// Operator Lie transform `Σₖ (iᵏ/k!) [w, [w, … [w, x]…]]`, truncated.
///
/// This is the expansion of `exp(iw(ε)) x(ε) exp(-iw(ε))` as a power series
/// in `ε`. The generator `w` must have no constant term — then the `k`-th
/// nested commutator starts at order `εᵏ` and the sum over `k ≤ max_order`
/// is exact on the retained coefficients.
pub fn lie_transform(w: &OperatorSeries, x: &OperatorSeries, max_order: usize) -> Result<OperatorSeries> {
    let w0 = max_norm(&w.coeff(0));
    if w0 > 0.0 {
        return Err(Error::NonzeroConstantTerm { magnitude: w0 });
    }
    let w = w.truncated(max_order);
    let mut term = x.truncated(max_order);
    let mut sum = term.clone();
    for k in 1..=max_order {
        // term_k = (i/k) [w, term_{k-1}] carries the accumulated iᵏ/k!.
        term = w
            .commutator(&term)?
            .scale(C64::new(0.0, 1.0 / k as f64));
        sum = sum.add(&term)?;
    }
    Ok(sum)
}
