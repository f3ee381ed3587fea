//! The operator-level engine.
//!
//! Seeks a unitary `U = exp(iW(ε))` with `U H(ε) U† = H₀ + K(ε)` where
//! `[H₀, K] = 0`, order by order: at order `n` the sources `Ψₙ` (everything
//! the lower-order generators already produce) split into a diagonal part
//! `Kₙ` and an off-diagonal part removed by the generator `Wₙ` through the
//! homological equation `i[H₀, Wₙ] = Ψₙ − Kₙ`.

use ndarray::Array2;

use crate::matrix::{
    commutator, dagger, diag_matrix, expm, max_norm, phase_fix_columns, CMatrix, C64,
};
use crate::problem::ValidatedProblem;
use crate::series::{lie_transform, OperatorSeries};
use crate::{Error, Result};

/// Tolerance on the per-order homological residual `i[H₀,Wₙ] − Ψₙ + Kₙ`.
pub const HOMOLOGICAL_TOL: f64 = 1e-10;

/// Diagonal part of a square matrix (all off-diagonal entries zeroed).
///
/// For a non-degenerate `H₀` this extracts exactly the component commuting
/// with `H₀`; it is linear and idempotent, and annihilates any `[H₀, X]`.
pub fn pi_projection(x: &CMatrix) -> Result<CMatrix> {
    let (rows, cols) = x.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    Ok(Array2::from_shape_fn((rows, cols), |(j, k)| {
        if j == k {
            x[[j, j]]
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}

/// The order-`n` source term of the expansion.
///
/// `Ψₙ` is the `εⁿ` coefficient of `Σₖ (iᵏ/k!) [W, [W, … [W, H]…]]` with the
/// generator truncated to the known orders `W₁ … Wₙ₋₁` (so the only missing
/// contribution at order `n` is `i[Wₙ, H₀]`, which the homological equation
/// supplies). Requires at least `n − 1` entries in `w_partial`.
pub fn compute_psi(n: usize, p: &ValidatedProblem, w_partial: &[CMatrix]) -> Result<CMatrix> {
    if n == 0 {
        return Err(Error::OrderOutOfRange {
            requested: 0,
            max_order: p.max_order(),
        });
    }
    if w_partial.len() < n - 1 {
        return Err(Error::MissingLowerOrder {
            order: n,
            required: n - 1,
            available: w_partial.len(),
        });
    }
    let dim = p.dim();
    let mut w = OperatorSeries::zero(dim, n);
    for (m, wm) in w_partial.iter().take(n - 1).enumerate() {
        w.set_coeff(m + 1, wm.clone())?;
    }
    let mut h = OperatorSeries::zero(dim, n);
    h.set_coeff(0, diag_matrix(p.e0()))?;
    for m in 1..=n {
        if let Some(v) = p.perturbation(m) {
            h.set_coeff(m, v.clone())?;
        }
    }
    Ok(lie_transform(&w, &h, n)?.coeff(n))
}

/// Split a source `ψ` into its diagonal part `k` and the zero-diagonal
/// generator `w` solving `i[H₀, w] = ψ − k`.
///
/// Entrywise, `w[j][k] = −i·ψ[j][k]/(e0[j] − e0[k])` off the diagonal; this
/// is the unique zero-diagonal solution, and it is Hermitian whenever `ψ`
/// is. Degeneracy is re-checked here because this is where division by the
/// gaps occurs.
pub fn solve_homological_operator(
    psi: &CMatrix,
    e0: &[f64],
    gap_tol: f64,
) -> Result<(CMatrix, CMatrix)> {
    let (rows, cols) = psi.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows != e0.len() {
        return Err(Error::DimensionMismatch {
            expected: e0.len(),
            found: rows,
        });
    }
    let n = rows;
    let k = pi_projection(psi)?;
    let mut w = Array2::zeros((n, n));
    for j in 0..n {
        for l in 0..n {
            if j == l {
                continue;
            }
            let gap = e0[j] - e0[l];
            if gap.abs() <= gap_tol {
                return Err(Error::DegenerateSpectrum {
                    i: j.min(l),
                    j: j.max(l),
                    gap: gap.abs(),
                    tolerance: gap_tol,
                });
            }
            w[[j, l]] = psi[[j, l]] * C64::new(0.0, -1.0 / gap);
        }
    }
    Ok((k, w))
}

/// Per-order and evaluated defect norms of a [`VvpSolution`]; see
/// [`VvpSolution::residuals`].
#[derive(Debug, Clone)]
pub struct ResidualReport {
    /// `‖U H(ε) U† − H₀ − K(ε)‖_max` — the only residual that carries
    /// truncation error; scales as `ε^(max_order+1)`.
    pub conjugation: f64,
    /// `‖[H₀, K(ε)]‖_max` — zero up to rounding, since every `Kₙ` is diagonal.
    pub k_commutator: f64,
    /// `‖i[H₀,Wₙ] − Ψₙ + Kₙ‖_max` for `n = 1…max_order`.
    pub homological: Vec<f64>,
}

/// Result of [`vvp_expand`]: generator and shift series plus the retained
/// per-order sources.
#[derive(Debug, Clone)]
pub struct VvpSolution {
    problem: ValidatedProblem,
    w_series: OperatorSeries,
    k_series: OperatorSeries,
    psi_log: Vec<CMatrix>,
}

/// Run the expansion to `p.max_order()`.
///
/// Order `n` computes `Ψₙ` from the already-known generators, then splits it
/// via [`solve_homological_operator`]. The returned solution satisfies, for
/// every order: `Kₙ` diagonal, `Wₙ` Hermitian with zero diagonal, and
/// homological residual within [`HOMOLOGICAL_TOL`].
pub fn vvp_expand(p: &ValidatedProblem) -> Result<VvpSolution> {
    let dim = p.dim();
    let max_order = p.max_order();
    let mut w_series = OperatorSeries::zero(dim, max_order);
    let mut k_series = OperatorSeries::zero(dim, max_order);
    let mut w_partial: Vec<CMatrix> = Vec::with_capacity(max_order);
    let mut psi_log = Vec::with_capacity(max_order);
    for n in 1..=max_order {
        let psi = compute_psi(n, p, &w_partial)?;
        let (k, w) = solve_homological_operator(&psi, p.e0(), p.gap_tol())?;
        w_series.set_coeff(n, w.clone())?;
        k_series.set_coeff(n, k)?;
        w_partial.push(w);
        psi_log.push(psi);
    }
    Ok(VvpSolution {
        problem: p.clone(),
        w_series,
        k_series,
        psi_log,
    })
}

impl VvpSolution {
    pub fn problem(&self) -> &ValidatedProblem {
        &self.problem
    }

    /// The generator series `W(ε) = Σₙ εⁿ Wₙ` (zero constant term).
    pub fn w_series(&self) -> &OperatorSeries {
        &self.w_series
    }

    /// The shift series `K(ε) = Σₙ εⁿ Kₙ` (diagonal coefficients).
    pub fn k_series(&self) -> &OperatorSeries {
        &self.k_series
    }

    /// The retained sources `Ψ₁ … Ψ_max_order` (index 0 holds `Ψ₁`).
    pub fn psi_log(&self) -> &[CMatrix] {
        &self.psi_log
    }

    /// Real diagonal of `Kₙ` — the order-`n` energy corrections per level.
    pub fn k_diagonal(&self, order: usize) -> Vec<f64> {
        let k = self.k_series.coeff(order);
        (0..self.problem.dim()).map(|n| k[[n, n]].re).collect()
    }

    /// Perturbed energies `Eₙ(ε) = Eₙ⁰ + Σₘ εᵐ (Kₘ)ₙₙ` at full order.
    pub fn energies(&self, eps: f64) -> Vec<f64> {
        self.energies_at_order(eps, self.problem.max_order())
            .expect("max_order is always in range")
    }

    /// Energies truncated at a lower order (for convergence studies).
    pub fn energies_at_order(&self, eps: f64, order: usize) -> Result<Vec<f64>> {
        if order > self.problem.max_order() {
            return Err(Error::OrderOutOfRange {
                requested: order,
                max_order: self.problem.max_order(),
            });
        }
        let dim = self.problem.dim();
        let mut energies = Vec::with_capacity(dim);
        for n in 0..dim {
            let mut acc = 0.0;
            for m in (1..=order).rev() {
                acc = acc * eps + self.k_series.coeff(m)[[n, n]].re;
            }
            energies.push(self.problem.e0()[n] + acc * eps);
        }
        Ok(energies)
    }

    /// `exp(iW(ε))`, the unitary conjugating `H(ε)` into `H₀ + K(ε)`.
    ///
    /// The exponential itself is evaluated to machine precision, so the
    /// matrix is unitary to rounding error at any `ε`; all truncation error
    /// lives in `W`.
    pub fn transform_unitary(&self, eps: f64) -> CMatrix {
        let arg = self.w_series.evaluate(eps).mapv(|z| z * C64::new(0.0, 1.0));
        expm(&arg)
    }

    /// Columns approximating the perturbed eigenvectors, phase-fixed so each
    /// column's largest entry is real and positive.
    ///
    /// Since `exp(iW) H exp(−iW) = H₀ + K` and the eigenvectors of `H₀ + K`
    /// are the basis vectors, the eigenvectors of `H` are the columns of
    /// `exp(−iW(ε))`. At `ε = 0` this is the identity.
    pub fn eigenvectors(&self, eps: f64) -> CMatrix {
        let arg = self.w_series.evaluate(eps).mapv(|z| z * C64::new(0.0, -1.0));
        phase_fix_columns(&expm(&arg))
    }

    /// Defect norms at a concrete `ε`; see [`ResidualReport`].
    pub fn residuals(&self, eps: f64) -> ResidualReport {
        let h0 = diag_matrix(self.problem.e0());
        let h = self.problem.hamiltonian_at(eps);
        let k = self.k_series.evaluate(eps);
        let u = self.transform_unitary(eps);
        let conjugated = u.dot(&h).dot(&dagger(&u));
        let conjugation = max_norm(&(&conjugated - &h0 - &k));
        let k_commutator = max_norm(&commutator(&h0, &k).expect("dims agree"));
        let homological = (1..=self.problem.max_order())
            .map(|n| {
                let wn = self.w_series.coeff(n);
                let kn = self.k_series.coeff(n);
                let psin = &self.psi_log[n - 1];
                let lhs = commutator(&h0, &wn)
                    .expect("dims agree")
                    .mapv(|z| z * C64::new(0.0, 1.0));
                max_norm(&(&lhs - psin + &kn))
            })
            .collect();
        ResidualReport {
            conjugation,
            k_commutator,
            homological,
        }
    }
}
