//! Independent ground truth for validation.
//!
//! Nothing here is used by the perturbation engines; the point is to check
//! them against machinery that shares no solve logic with them. The module
//! provides exact diagonalization (a self-contained cyclic Jacobi iteration
//! for complex Hermitian matrices), eigenpair matching, finite-difference
//! Poisson brackets in the cartesian chart, and the discretized time average
//! that the diagonal projection claims to equal.

use ndarray::Array2;

use crate::classical::{to_action_angle, PhaseSpaceState, QuadraticObservable};
use crate::matrix::{
    hermiticity_deviation, identity, max_norm, phase_fix_columns, CMatrix, C64,
};
use crate::problem::ValidatedProblem;
use crate::{Error, Result};

use std::f64::consts::{PI, TAU};

/// Default finite-difference step, balancing truncation against rounding.
pub const FD_STEP: f64 = 1e-5;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (ascending) and matching unitary eigenvector columns.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

fn off_diagonal_mass(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for j in 0..n {
        for k in 0..n {
            if j != k {
                sum += a[[j, k]].norm_sqr();
            }
        }
    }
    sum.sqrt()
}

/// One two-sided rotation `A ← U†AU` zeroing the pivot `A[p][q]`, with the
/// same `U` accumulated into the eigenvector matrix `V ← VU`.
///
/// `U` acts in the `(p,q)` plane as `[[c, s], [−s̄, c]]` with `c` real,
/// `s = σ e^{iφ}` carrying the pivot's phase `φ`, and `t = σ/c` the
/// smaller-magnitude root of `t² − 2θ't − 1 = 0`, `θ' = (A_pp − A_qq)/2|A_pq|`.
fn jacobi_rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[[p, q]];
    let gamma = apq.norm();
    if gamma == 0.0 {
        return;
    }
    let alpha = a[[p, p]].re;
    let beta = a[[q, q]].re;
    let theta = (alpha - beta) / (2.0 * gamma);
    let t = if theta >= 0.0 {
        -1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        1.0 / (-theta + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = apq / gamma * (t * c);

    let n = a.nrows();
    for j in 0..n {
        let ajp = a[[j, p]];
        let ajq = a[[j, q]];
        a[[j, p]] = ajp * c - ajq * s.conj();
        a[[j, q]] = ajp * s + ajq * c;
    }
    for j in 0..n {
        let apj = a[[p, j]];
        let aqj = a[[q, j]];
        a[[p, j]] = apj * c - aqj * s;
        a[[q, j]] = apj * s.conj() + aqj * c;
    }
    for j in 0..n {
        let vjp = v[[j, p]];
        let vjq = v[[j, q]];
        v[[j, p]] = vjp * c - vjq * s.conj();
        v[[j, q]] = vjp * s + vjq * c;
    }
}

/// Diagonalize a complex Hermitian matrix by cyclic Jacobi sweeps.
///
/// Every sweep rotates each upper-triangle pivot once; the off-diagonal
/// Frobenius mass decreases monotonically and the iteration stops when it
/// falls below `1e-14 · N · max|H|`. Eigenvalues come back ascending with
/// phase-fixed eigenvector columns.
pub fn diagonalize_hermitian(h: &CMatrix) -> Result<SpectralDecomposition> {
    let (rows, cols) = h.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(Error::EmptySpectrum);
    }
    let scale = max_norm(h);
    let deviation = hermiticity_deviation(h);
    if scale > 0.0 && deviation > 1e-12 * scale {
        return Err(Error::NonHermitianInput {
            deviation,
            tolerance: 1e-12 * scale,
        });
    }

    let n = rows;
    let mut a = h.clone();
    let mut v = identity(n);
    let threshold = 1e-14 * scale.max(f64::MIN_POSITIVE) * n as f64;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        if off_diagonal_mass(&a) <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
    }
    if !converged && off_diagonal_mass(&a) > threshold {
        return Err(Error::NoConvergence {
            sweeps,
            off: off_diagonal_mass(&a),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[i, i]].re.total_cmp(&a[[j, j]].re));
    let eigenvalues = order.iter().map(|&i| a[[i, i]].re).collect();
    let eigenvectors = Array2::from_shape_fn((n, n), |(j, k)| v[[j, order[k]]]);
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors: phase_fix_columns(&eigenvectors),
    })
}

/// Assemble `H(ε)` from a validated problem and diagonalize it exactly.
pub fn exact_spectrum(p: &ValidatedProblem, eps: f64) -> Result<SpectralDecomposition> {
    diagonalize_hermitian(&p.hamiltonian_at(eps))
}

/// Outcome of [`match_eigenpairs`]: `permutation[k]` is the exact level
/// paired with series level `k`, with the per-level discrepancies.
#[derive(Debug, Clone)]
pub struct MatchReport {
    pub permutation: Vec<usize>,
    /// `|E_series − E_exact|` per series level.
    pub energy_errors: Vec<f64>,
    /// `‖v_series − v_exact‖₂` per series level, after aligning the global
    /// phase of the series column to the exact one.
    pub vector_distances: Vec<f64>,
}

/// Pair each series level with an exact level by maximal eigenvector
/// overlap `|⟨v_exact|v_series⟩|`, falling back to nearest energy when the
/// top overlaps tie within `1e-6`. Fails when the assignment would claim an
/// exact level twice.
pub fn match_eigenpairs(
    series_energies: &[f64],
    series_vectors: &CMatrix,
    exact: &SpectralDecomposition,
) -> Result<MatchReport> {
    let n = exact.eigenvalues.len();
    if series_energies.len() != n || series_vectors.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: series_energies.len().min(series_vectors.nrows()),
        });
    }

    let overlap = |j: usize, k: usize| -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..n {
            acc += exact.eigenvectors[[l, j]].conj() * series_vectors[[l, k]];
        }
        acc
    };

    let mut permutation = Vec::with_capacity(n);
    let mut claimed = vec![false; n];
    for (k, &e_series) in series_energies.iter().enumerate() {
        let magnitudes: Vec<f64> = (0..n).map(|j| overlap(j, k).norm()).collect();
        let best = magnitudes.iter().cloned().fold(0.0, f64::max);
        // Every exact level within 1e-6 of the best overlap is a candidate;
        // ties are broken by energy proximity.
        let chosen = (0..n)
            .filter(|&j| magnitudes[j] >= best - 1e-6)
            .min_by(|&a, &b| {
                let da = (exact.eigenvalues[a] - e_series).abs();
                let db = (exact.eigenvalues[b] - e_series).abs();
                da.total_cmp(&db)
            })
            .expect("at least one candidate attains the maximum");
        if claimed[chosen] {
            return Err(Error::AmbiguousMatch { index: chosen });
        }
        claimed[chosen] = true;
        permutation.push(chosen);
    }

    let mut energy_errors = Vec::with_capacity(n);
    let mut vector_distances = Vec::with_capacity(n);
    for k in 0..n {
        let j = permutation[k];
        energy_errors.push((exact.eigenvalues[j] - series_energies[k]).abs());
        let o = overlap(j, k);
        let phase = if o.norm() > 0.0 {
            o / o.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        let mut dist = 0.0;
        for l in 0..n {
            dist += (series_vectors[[l, k]] * phase.conj() - exact.eigenvectors[[l, j]]).norm_sqr();
        }
        vector_distances.push(dist.sqrt());
    }
    Ok(MatchReport {
        permutation,
        energy_errors,
        vector_distances,
    })
}

fn require_clear_of_singularity(s: &PhaseSpaceState, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (q, p) = s.cartesian_coords();
    let required = 10.0 * h;
    for n in 0..q.len() {
        let action = 0.5 * (q[n] * q[n] + p[n] * p[n]);
        if action < required {
            return Err(Error::SingularRegion {
                index: n,
                value: action,
                required,
            });
        }
    }
    Ok((q, p))
}

/// Central-difference Poisson bracket in the cartesian chart:
/// `Σₖ (∂f/∂qₖ ∂g/∂pₖ − ∂f/∂pₖ ∂g/∂qₖ)`, each derivative `O(h²)` accurate.
///
/// The state must keep every action at least `10h` away from the chart
/// singularity at the mode origin.
pub fn fd_poisson_bracket(
    f: &QuadraticObservable,
    g: &QuadraticObservable,
    s: &PhaseSpaceState,
    h: f64,
) -> Result<f64> {
    let (q, p) = require_clear_of_singularity(s, h)?;
    let n = q.len();
    let eval = |obs: &QuadraticObservable, q: &[f64], p: &[f64]| -> Result<f64> {
        obs.evaluate(&PhaseSpaceState::cartesian(q.to_vec(), p.to_vec())?)
    };
    let mut bracket = 0.0;
    let mut qa = q.clone();
    let mut pa = p.clone();
    for k in 0..n {
        qa[k] = q[k] + h;
        let fqp = eval(f, &qa, &p)?;
        let gqp = eval(g, &qa, &p)?;
        qa[k] = q[k] - h;
        let fqm = eval(f, &qa, &p)?;
        let gqm = eval(g, &qa, &p)?;
        qa[k] = q[k];

        pa[k] = p[k] + h;
        let fpp = eval(f, &q, &pa)?;
        let gpp = eval(g, &q, &pa)?;
        pa[k] = p[k] - h;
        let fpm = eval(f, &q, &pa)?;
        let gpm = eval(g, &q, &pa)?;
        pa[k] = p[k];

        let df_dq = (fqp - fqm) / (2.0 * h);
        let dg_dq = (gqp - gqm) / (2.0 * h);
        let df_dp = (fpp - fpm) / (2.0 * h);
        let dg_dp = (gpp - gpm) / (2.0 * h);
        bracket += df_dq * dg_dp - df_dp * dg_dq;
    }
    Ok(bracket)
}

/// Signed angle difference wrapped to `(−π, π]`, so finite differences of
/// `θ` across the branch cut stay small.
fn wrap_angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Central-difference evaluation of `{θ_k, I_l}` through the chart
/// transition functions; equals `δ_kl` when the chart is canonical.
pub fn fd_canonical_pair(s: &PhaseSpaceState, k: usize, l: usize, h: f64) -> Result<f64> {
    let (q, p) = require_clear_of_singularity(s, h)?;
    let n = q.len();
    let theta_of = |q: &[f64], p: &[f64]| -> Result<f64> {
        Ok(to_action_angle(q, p)?.0[k])
    };
    let action_of = |q: &[f64], p: &[f64]| -> Result<f64> {
        Ok(to_action_angle(q, p)?.1[l])
    };
    let mut qa = q.clone();
    let mut pa = p.clone();
    let mut bracket = 0.0;
    for j in 0..n {
        qa[j] = q[j] + h;
        let tqp = theta_of(&qa, &p)?;
        let aqp = action_of(&qa, &p)?;
        qa[j] = q[j] - h;
        let tqm = theta_of(&qa, &p)?;
        let aqm = action_of(&qa, &p)?;
        qa[j] = q[j];

        pa[j] = p[j] + h;
        let tpp = theta_of(&q, &pa)?;
        let app = action_of(&q, &pa)?;
        pa[j] = p[j] - h;
        let tpm = theta_of(&q, &pa)?;
        let apm = action_of(&q, &pa)?;
        pa[j] = p[j];

        let dt_dq = wrap_angle_difference(tqp, tqm) / (2.0 * h);
        let dt_dp = wrap_angle_difference(tpp, tpm) / (2.0 * h);
        let da_dq = (aqp - aqm) / (2.0 * h);
        let da_dp = (app - apm) / (2.0 * h);
        bracket += dt_dq * da_dp - dt_dp * da_dq;
    }
    Ok(bracket)
}

/// Midpoint-rule discretization of the time average
/// `(1/T)∫₀ᵀ e^{−iH₀t} X e^{iH₀t} dt` for diagonal `H₀ = diag(e0)`.
///
/// Entrywise the integrand is `X[j][k] e^{−i(E_j−E_k)t}`, so each entry is
/// the midpoint sum `(1/m) Σ e^{−iω(j+½)T/m}`, evaluated here in closed
/// form (the sum is geometric); entries whose phase step aliases the grid
/// fall back to direct accumulation. Converges to the diagonal of `x` at
/// rate `O(1/(T·gap))`; `samples` only controls discretization error and
/// should stay ≥ 10³ for the documented accuracy.
pub fn numeric_pi(x: &CMatrix, e0: &[f64], horizon: f64, samples: usize) -> Result<CMatrix> {
    let (rows, cols) = x.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows != e0.len() {
        return Err(Error::DimensionMismatch {
            expected: e0.len(),
            found: rows,
        });
    }
    assert!(samples > 0, "midpoint rule needs at least one sample");
    let m = samples as f64;
    let h = horizon / m;
    Ok(Array2::from_shape_fn((rows, cols), |(j, k)| {
        let omega = e0[j] - e0[k];
        if omega == 0.0 {
            return x[[j, k]];
        }
        let half_step = (omega * h / 2.0).sin();
        let mean = if half_step.abs() > 1e-12 {
            // (1/m)·Σ_{l<m} e^{−iω(l+½)h} = (1 − e^{−iωT}) / (2i·m·sin(ωh/2))
            let numerator = C64::new(1.0, 0.0) - C64::new(0.0, -omega * horizon).exp();
            numerator / (C64::new(0.0, 2.0) * m * half_step)
        } else {
            let mut acc = C64::new(0.0, 0.0);
            for l in 0..samples {
                acc += C64::new(0.0, -omega * (l as f64 + 0.5) * h).exp();
            }
            acc / m
        };
        x[[j, k]] * mean
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{dagger, diag_matrix, pauli_x, HermitianOperator};
    use crate::problem::PerturbationProblem;
    use crate::vvp::vvp_expand;

    fn herm4() -> CMatrix {
        let entries = [
            [(1.7, 0.0), (0.4, -0.9), (0.0, 0.3), (-0.6, 0.1)],
            [(0.4, 0.9), (-2.2, 0.0), (1.1, 0.0), (0.2, -0.8)],
            [(0.0, -0.3), (1.1, 0.0), (0.5, 0.0), (-0.4, 0.4)],
            [(-0.6, -0.1), (0.2, 0.8), (-0.4, -0.4), (3.0, 0.0)],
        ];
        let flat: Vec<C64> = entries
            .iter()
            .flat_map(|row| row.iter().map(|&(re, im)| C64::new(re, im)))
            .collect();
        CMatrix::from_shape_vec((4, 4), flat).unwrap()
    }

    #[test]
    fn diagonal_matrix_is_its_own_spectrum() {
        let d = diag_matrix(&[3.0, -1.0, 2.0]);
        let s = diagonalize_hermitian(&d).unwrap();
        assert_eq!(s.eigenvalues, vec![-1.0, 2.0, 3.0]);
        // Columns are basis vectors permuted into ascending order.
        for (k, &level) in [1usize, 2, 0].iter().enumerate() {
            assert!((s.eigenvectors[[level, k]] - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn two_level_closed_form_eigenvalues() {
        let h = diag_matrix(&[1.0, 2.0]) + pauli_x().mapv(|z| z * 0.1);
        let s = diagonalize_hermitian(&h).unwrap();
        let root = 1.04_f64.sqrt();
        assert!((s.eigenvalues[0] - (3.0 - root) / 2.0).abs() < 1e-13);
        assert!((s.eigenvalues[1] - (3.0 + root) / 2.0).abs() < 1e-13);

        let s = diagonalize_hermitian(&pauli_x()).unwrap();
        assert!((s.eigenvalues[0] + 1.0).abs() < 1e-14);
        assert!((s.eigenvalues[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn decomposition_reconstructs_the_input() {
        let h = herm4();
        let s = diagonalize_hermitian(&h).unwrap();
        let lambda = diag_matrix(&s.eigenvalues);
        let rebuilt = s.eigenvectors.dot(&lambda).dot(&dagger(&s.eigenvectors));
        let scale = max_norm(&h);
        assert!(max_norm(&(rebuilt - &h)) <= 1e-11 * scale);

        let gram = dagger(&s.eigenvectors).dot(&s.eigenvectors);
        assert!(max_norm(&(gram - identity(4))) <= 1e-12);

        for k in 0..4 {
            let v = s.eigenvectors.column(k).to_owned();
            let hv = h.dot(&v);
            let residual: f64 = hv
                .iter()
                .zip(v.iter())
                .map(|(a, b)| (a - b * s.eigenvalues[k]).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(residual <= 1e-11 * scale);
        }
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let mut h = pauli_x();
        h[[0, 1]] += C64::new(1e-6, 0.0);
        assert!(matches!(
            diagonalize_hermitian(&h),
            Err(Error::NonHermitianInput { .. })
        ));
    }

    fn two_level_problem() -> ValidatedProblem {
        PerturbationProblem::new(vec![1.0, 2.0], 2)
            .with_perturbation(1, HermitianOperator::new(pauli_x()).unwrap())
            .validated()
            .unwrap()
    }

    #[test]
    fn matching_at_zero_coupling_is_the_identity() {
        let p = two_level_problem();
        let sol = vvp_expand(&p).unwrap();
        let exact = exact_spectrum(&p, 0.0).unwrap();
        let report =
            match_eigenpairs(&sol.energies(0.0), &sol.eigenvectors(0.0), &exact).unwrap();
        assert_eq!(report.permutation, vec![0, 1]);
        assert!(report.energy_errors.iter().all(|&e| e < 1e-14));
        assert!(report.vector_distances.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn matching_reports_the_known_truncation_error() {
        let p = two_level_problem();
        let sol = vvp_expand(&p).unwrap();
        let exact = exact_spectrum(&p, 0.1).unwrap();
        let report =
            match_eigenpairs(&sol.energies(0.1), &sol.eigenvectors(0.1), &exact).unwrap();
        // |0.99 − (3 − √1.04)/2| ≈ 9.8e-5.
        assert!((8e-5..1.1e-4).contains(&report.energy_errors[0]));
        assert!((8e-5..1.1e-4).contains(&report.energy_errors[1]));
    }

    #[test]
    fn matching_recovers_a_swapped_ordering() {
        let p = two_level_problem();
        let sol = vvp_expand(&p).unwrap();
        let exact = exact_spectrum(&p, 0.1).unwrap();
        let u = sol.eigenvectors(0.1);
        let energies = sol.energies(0.1);
        let swapped_energies = vec![energies[1], energies[0]];
        let swapped_vectors =
            Array2::from_shape_fn((2, 2), |(j, k)| u[[j, 1 - k]]);
        let report = match_eigenpairs(&swapped_energies, &swapped_vectors, &exact).unwrap();
        assert_eq!(report.permutation, vec![1, 0]);
    }

    fn obs(m: CMatrix) -> QuadraticObservable {
        QuadraticObservable::new(m).unwrap()
    }

    #[test]
    fn fd_bracket_is_antisymmetric_and_matches_closed_form() {
        let f = obs(pauli_x());
        let s = PhaseSpaceState::action_angle(vec![0.0, 0.0], vec![1.0, 0.25]).unwrap();
        assert!(fd_poisson_bracket(&f, &f, &s, FD_STEP).unwrap().abs() < 1e-8);

        // {f_x, f_y} = 2·(σ_z observable): at I = (1, 0.25) the value is
        // 2(I₁ − I₂) = 1.5.
        let g = obs(crate::matrix::pauli_y());
        let fd = fd_poisson_bracket(&f, &g, &s, FD_STEP).unwrap();
        assert!((fd - 1.5).abs() < 1e-6, "fd bracket {fd} vs closed form 1.5");
    }

    #[test]
    fn fd_bracket_of_total_action_vanishes() {
        let total = QuadraticObservable::from_diagonal(&[1.0, 1.0]);
        let g = obs(pauli_x() + crate::matrix::pauli_z());
        let s = PhaseSpaceState::action_angle(vec![1.2, 4.0], vec![0.7, 0.4]).unwrap();
        let fd = fd_poisson_bracket(&total, &g, &s, FD_STEP).unwrap();
        assert!(fd.abs() < 1e-7);
    }

    #[test]
    fn fd_bracket_guards_the_chart_singularity() {
        let f = obs(pauli_x());
        let s = PhaseSpaceState::action_angle(vec![0.0, 0.0], vec![1.0, 1e-6]).unwrap();
        assert!(matches!(
            fd_poisson_bracket(&f, &f, &s, FD_STEP),
            Err(Error::SingularRegion { index: 1, .. })
        ));
    }

    #[test]
    fn chart_variables_are_canonical_pairs() {
        // {θ_k, I_l} = δ_kl, including at angles near the branch cut.
        let states = [
            PhaseSpaceState::action_angle(vec![0.4, 2.0], vec![0.5, 0.8]).unwrap(),
            PhaseSpaceState::action_angle(vec![TAU - 3e-3, 3.1], vec![0.3, 1.1]).unwrap(),
        ];
        for s in &states {
            for k in 0..2 {
                for l in 0..2 {
                    let val = fd_canonical_pair(s, k, l, FD_STEP).unwrap();
                    let expected = if k == l { 1.0 } else { 0.0 };
                    assert!(
                        (val - expected).abs() < 1e-6,
                        "{{θ_{k}, I_{l}}} = {val}, expected {expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn time_average_fixes_diagonals_exactly() {
        let d = diag_matrix(&[0.3, -1.0, 2.0]);
        let avg = numeric_pi(&d, &[1.0, 2.0, 3.0], 17.0, 1000).unwrap();
        assert_eq!(max_norm(&(avg - &d)), 0.0);
    }

    #[test]
    fn time_average_suppresses_off_diagonals_at_long_horizon() {
        // Entry bound |∫₀ᵀ e^{−iωt} dt| / T ≤ 2/(ωT), ω = 1 here.
        let avg = numeric_pi(&pauli_x(), &[1.0, 2.0], 1e4, 100_000).unwrap();
        assert!(avg[[0, 1]].norm() <= 2e-4);
        assert!(avg[[1, 0]].norm() <= 2e-4);
    }

    #[test]
    fn closed_form_midpoint_sum_matches_direct_accumulation() {
        let x = herm4();
        let e0 = [0.9, 2.1, 3.7, 5.3];
        let horizon = 37.3;
        let samples = 2048;
        let fast = numeric_pi(&x, &e0, horizon, samples).unwrap();
        let mut slow: CMatrix = Array2::zeros((4, 4));
        let h = horizon / samples as f64;
        for l in 0..samples {
            let t = (l as f64 + 0.5) * h;
            let phase = Array2::from_shape_fn((4, 4), |(j, k)| {
                x[[j, k]] * C64::new(0.0, -(e0[j] - e0[k]) * t).exp()
            });
            slow += &phase;
        }
        slow /= C64::new(samples as f64, 0.0);
        assert!(max_norm(&(fast - slow)) < 1e-12);
    }
}
