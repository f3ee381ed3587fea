//! Runnable property suite.
//!
//! Bundles every cross-module invariant — series algebra laws, projection
//! laws, homological residuals, bracket correspondences, engine equivalence,
//! convergence slopes — into named checks over seeded random inputs, so the
//! same evidence backing the test suite is available at runtime against a
//! user's problem. Randomness is deterministic per seed.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classical::{
    angle_average, classical_lie_transform, hori_expand, poisson_bracket, ObservableSeries,
    PhaseSpaceState, QuadraticObservable,
};
use crate::matrix::{
    commutator, dagger, diag_matrix, identity, max_norm, trace, CMatrix, HermitianOperator, C64,
};
use crate::oracle::{
    diagonalize_hermitian, exact_spectrum, fd_canonical_pair, fd_poisson_bracket, numeric_pi,
    FD_STEP,
};
use crate::problem::{PerturbationProblem, ValidatedProblem};
use crate::series::{lie_transform, OperatorSeries};
use crate::vvp::{pi_projection, vvp_expand};
use crate::Result;

use std::f64::consts::TAU;

/// Outcome of one named property check. `worst` is the largest deviation
/// (or margin) observed; the check passes when `worst ≤ tolerance`.
#[derive(Debug, Clone)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub cases: usize,
}

impl PropertyCheck {
    fn new(name: &'static str, worst: f64, tolerance: f64, cases: usize) -> Self {
        Self {
            name,
            worst,
            tolerance,
            passed: worst <= tolerance,
            cases,
        }
    }
}

/// All checks of one suite run.
#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub checks: Vec<PropertyCheck>,
    pub seed: u64,
    pub cases: usize,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

// ---------------------------------------------------------------------------
// Seeded random inputs
// ---------------------------------------------------------------------------

/// Random Hermitian matrix with entries of magnitude up to ~`scale`.
pub fn random_hermitian(rng: &mut impl Rng, dim: usize, scale: f64) -> CMatrix {
    let a = Array2::from_shape_fn((dim, dim), |_| {
        C64::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    });
    (&a + &dagger(&a)).mapv(|z| z * 0.5)
}

/// Random square matrix without any symmetry.
pub fn random_matrix(rng: &mut impl Rng, dim: usize, scale: f64) -> CMatrix {
    Array2::from_shape_fn((dim, dim), |_| {
        C64::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    })
}

/// Random well-gapped problem: ascending energies with gaps in `[0.7, 1.6)`,
/// a full-strength first-order perturbation, and coin-flipped higher orders.
pub fn random_problem(rng: &mut impl Rng, dim: usize, max_order: usize) -> ValidatedProblem {
    let mut e = rng.random_range(-2.0..2.0);
    let mut e0 = Vec::with_capacity(dim);
    for _ in 0..dim {
        e0.push(e);
        e += rng.random_range(0.7..1.6);
    }
    let mut p = PerturbationProblem::new(e0, max_order).with_perturbation(
        1,
        HermitianOperator::new(random_hermitian(rng, dim, 1.0)).expect("symmetrized"),
    );
    for order in 2..=max_order {
        if rng.random_bool(0.5) {
            p = p.with_perturbation(
                order,
                HermitianOperator::new(random_hermitian(rng, dim, 0.5)).expect("symmetrized"),
            );
        }
    }
    p.validated().expect("generated spectra are well-gapped")
}

/// Random state with every action in `[min_action, 1)`.
pub fn random_state(rng: &mut impl Rng, dim: usize, min_action: f64) -> PhaseSpaceState {
    let theta = (0..dim).map(|_| rng.random_range(0.0..TAU)).collect();
    let action = (0..dim)
        .map(|_| rng.random_range(min_action..1.0))
        .collect();
    PhaseSpaceState::action_angle(theta, action).expect("actions are non-negative")
}

// ---------------------------------------------------------------------------
// Individual checks
// ---------------------------------------------------------------------------

fn series_ring_laws(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=5);
        let order = rng.random_range(1..=4);
        let mut trio = Vec::with_capacity(3);
        for _ in 0..3 {
            let coeffs = (0..=order).map(|_| random_matrix(rng, dim, 1.0)).collect();
            trio.push(OperatorSeries::from_coeffs(coeffs, order)?);
        }
        let (a, b, c) = (&trio[0], &trio[1], &trio[2]);
        let assoc = a.mul(b)?.mul(c)?.sub(&a.mul(&b.mul(c)?)?)?;
        let distrib = a.mul(&b.add(c)?)?.sub(&a.mul(b)?.add(&a.mul(c)?)?)?;
        worst = worst.max(assoc.max_norm()).max(distrib.max_norm());
    }
    Ok(PropertyCheck::new("series-ring-laws", worst, 1e-12, cases))
}

fn hermitian_series(rng: &mut impl Rng, order: usize) -> Result<(OperatorSeries, OperatorSeries)> {
    let dim = rng.random_range(2..=4);
    let mut w = OperatorSeries::zero(dim, order);
    for n in 1..=order {
        w.set_coeff(n, random_hermitian(rng, dim, 1.0))?;
    }
    let x_coeffs = (0..=order).map(|_| random_hermitian(rng, dim, 1.0)).collect();
    let x = OperatorSeries::from_coeffs(x_coeffs, order)?;
    Ok((w, x))
}

fn lie_transform_laws(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let order = rng.random_range(1..=4);
        let (w, x) = hermitian_series(rng, order)?;
        let t = lie_transform(&w, &x, order)?;
        for n in 0..=order {
            worst = worst.max(crate::matrix::hermiticity_deviation(&t.coeff(n)));
            worst = worst.max((trace(&t.coeff(n)) - trace(&x.coeff(n))).norm());
        }
        let back = lie_transform(&w.scale(C64::new(-1.0, 0.0)), &t, order)?;
        worst = worst.max(back.sub(&x)?.max_norm());
    }
    Ok(PropertyCheck::new("lie-transform-laws", worst, 1e-10, cases))
}

fn projection_laws(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=6);
        let x = random_matrix(rng, dim, 1.0);
        let px = pi_projection(&x)?;
        // Idempotence, and the fixed points are exactly the diagonal
        // matrices — equivalently those commuting with a non-degenerate H₀.
        worst = worst.max(max_norm(&(pi_projection(&px)? - &px)));
        let e0: Vec<f64> = (0..dim).map(|n| n as f64 + 1.0).collect();
        let h0 = diag_matrix(&e0);
        worst = worst.max(max_norm(&commutator(&h0, &px)?));
        worst = worst.max(max_norm(&pi_projection(&commutator(&h0, &x)?)?));
        let off = &x - &px;
        let mut off_mass = 0.0_f64;
        for j in 0..dim {
            for k in 0..dim {
                if j != k {
                    off_mass = off_mass.max(x[[j, k]].norm());
                }
            }
        }
        worst = worst.max((max_norm(&off) - off_mass).abs());
    }
    Ok(PropertyCheck::new("projection-laws", worst, 1e-12, cases))
}

fn numeric_time_average(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let e0: [f64; 3] = [
            rng.random_range(0.5..1.5),
            rng.random_range(2.2..3.2),
            rng.random_range(4.4..5.4),
        ];
        let mut min_gap = f64::MAX;
        for j in 0..3 {
            for k in (j + 1)..3 {
                min_gap = min_gap.min((e0[j] - e0[k]).abs());
            }
        }
        let x = random_matrix(rng, 3, 1.0);
        let avg = numeric_pi(&x, &e0, 1e4 / min_gap, 1_000_000)?;
        worst = worst.max(max_norm(&(avg - pi_projection(&x)?)));
    }
    Ok(PropertyCheck::new("numeric-time-average", worst, 1e-3, cases))
}

fn second_order_textbook(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=5);
        let mut p = random_problem(rng, dim, 2);
        // Restrict to a pure first-order perturbation.
        let mut raw = PerturbationProblem::new(p.e0().to_vec(), 2);
        if let Some(v1) = p.perturbation(1) {
            raw = raw.with_perturbation(1, HermitianOperator::new(v1.clone())?);
        }
        p = raw.validated()?;
        let sol = vvp_expand(&p)?;
        let k2 = sol.k_diagonal(2);
        let v1 = p.perturbation(1).expect("generator always adds order 1");
        for n in 0..dim {
            let mut closed = 0.0;
            for m in 0..dim {
                if m != n {
                    closed += v1[[n, m]].norm_sqr() / (p.e0()[n] - p.e0()[m]);
                }
            }
            worst = worst.max((k2[n] - closed).abs());
        }
    }
    Ok(PropertyCheck::new("second-order-textbook", worst, 1e-10, cases))
}

fn convergence_slope(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let eps_grid = [1e-1, 1e-2, 1e-3];
    let mut worst_margin = f64::NEG_INFINITY;
    let mut used = 0;
    let mut attempts = 0;
    while used < cases && attempts < 10 * cases.max(1) {
        attempts += 1;
        let dim = rng.random_range(2..=4);
        let max_order = rng.random_range(1..=3);
        let p = random_problem(rng, dim, max_order);
        let sol = vvp_expand(&p)?;
        let mut errs = Vec::with_capacity(eps_grid.len());
        for &eps in &eps_grid {
            let exact = exact_spectrum(&p, eps)?;
            let series = sol.energies(eps);
            let err = series
                .iter()
                .zip(&exact.eigenvalues)
                .map(|(s, x)| (s - x).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // Skip draws whose next-order term is so small the measurement sits
        // on the rounding floor instead of the truncation slope.
        if errs.iter().any(|&e| e < 1e-13) {
            continue;
        }
        used += 1;
        let slope = log_log_slope(&eps_grid, &errs);
        let required = (max_order + 1) as f64 - 0.2;
        worst_margin = worst_margin.max(required - slope);
    }
    let worst = if used == 0 { 0.0 } else { worst_margin };
    Ok(PropertyCheck::new("convergence-slope-margin", worst, 0.0, used))
}

/// Least-squares slope of `ln err` against `ln eps`.
pub fn log_log_slope(eps: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}

fn homological_residuals(
    problems: &[ValidatedProblem],
    rng: &mut impl Rng,
) -> Result<(PropertyCheck, PropertyCheck)> {
    let mut worst_q = 0.0_f64;
    let mut worst_c = 0.0_f64;
    for p in problems {
        let sol = vvp_expand(p)?;
        let r = sol.residuals(0.1);
        for h in &r.homological {
            worst_q = worst_q.max(*h);
        }
        worst_q = worst_q.max(r.k_commutator);

        let hori = hori_expand(p)?;
        for n in 1..=p.max_order() {
            let residual = hori.homological_residual(n)?;
            worst_c = worst_c.max(residual.max_norm());
            for _ in 0..10 {
                let s = random_state(rng, p.dim(), 0.0);
                worst_c = worst_c.max(residual.evaluate(&s)?.abs());
            }
        }
    }
    Ok((
        PropertyCheck::new("homological-residual-quantum", worst_q, 1e-10, problems.len()),
        PropertyCheck::new("homological-residual-classical", worst_c, 1e-10, problems.len()),
    ))
}

fn engine_equivalence(problems: &[ValidatedProblem]) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for p in problems {
        let quantum = vvp_expand(p)?;
        let classical = hori_expand(p)?;
        for n in 1..=p.max_order() {
            let dw = max_norm(
                &(classical.w_star_series().coeff(n).coeff() - &quantum.w_series().coeff(n)),
            );
            worst = worst.max(dw);
            let k = quantum.k_diagonal(n);
            for (a, b) in classical.energy_coefficients(n)?.iter().zip(&k) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(PropertyCheck::new("engine-equivalence", worst, 1e-10, problems.len()))
}

fn bracket_correspondence(rng: &mut impl Rng, cases: usize) -> Result<(PropertyCheck, PropertyCheck)> {
    let mut worst_q = 0.0_f64;
    let mut worst_fd = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=5);
        let fm = random_hermitian(rng, dim, 1.0);
        let gm = random_hermitian(rng, dim, 1.0);
        let f = QuadraticObservable::new(fm.clone())?;
        let g = QuadraticObservable::new(gm.clone())?;
        let fg = poisson_bracket(&f, &g)?;

        // Quantum side: {f, g}(s) = −i⟨ψ|[F, G]|ψ⟩ at the matching state.
        let s = random_state(rng, dim, 0.0);
        let psi = s.state_vector();
        let comm = commutator(&fm, &gm)?;
        let mut expect = C64::new(0.0, 0.0);
        for m in 0..dim {
            for n in 0..dim {
                expect += psi[m].conj() * comm[[m, n]] * psi[n];
            }
        }
        let quantum_value = (expect * C64::new(0.0, -1.0)).re;
        worst_q = worst_q.max((fg.evaluate(&s)? - quantum_value).abs());

        // Coordinate side: central differences in the cartesian chart,
        // bounded away from the origin of every mode.
        let s = random_state(rng, dim, 0.1);
        let fd = fd_poisson_bracket(&f, &g, &s, FD_STEP)?;
        worst_fd = worst_fd.max((fg.evaluate(&s)? - fd).abs());
    }
    Ok((
        PropertyCheck::new("bracket-quantum-correspondence", worst_q, 1e-10, cases),
        PropertyCheck::new("bracket-coordinate-agreement", worst_fd, 1e-6, cases),
    ))
}

fn canonical_pairs(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=3);
        let s = random_state(rng, dim, 0.1);
        for k in 0..dim {
            for l in 0..dim {
                let val = fd_canonical_pair(&s, k, l, FD_STEP)?;
                let expected = if k == l { 1.0 } else { 0.0 };
                worst = worst.max((val - expected).abs());
            }
        }
    }
    Ok(PropertyCheck::new("canonical-pairs", worst, 1e-6, cases))
}

fn jacobi_identity(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=5);
        let f = QuadraticObservable::new(random_hermitian(rng, dim, 1.0))?;
        let g = QuadraticObservable::new(random_hermitian(rng, dim, 1.0))?;
        let h = QuadraticObservable::new(random_hermitian(rng, dim, 1.0))?;
        let cyc = poisson_bracket(&f, &poisson_bracket(&g, &h)?)?
            .add(&poisson_bracket(&g, &poisson_bracket(&h, &f)?)?)?
            .add(&poisson_bracket(&h, &poisson_bracket(&f, &g)?)?)?;
        worst = worst.max(cyc.max_norm());
    }
    Ok(PropertyCheck::new("jacobi-identity", worst, 1e-12, cases))
}

fn secular_elimination(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=5);
        let psi = QuadraticObservable::new(random_hermitian(rng, dim, 1.0))?;
        let centered = psi.sub(&angle_average(&psi))?;
        worst = worst.max(angle_average(&centered).max_norm());
    }
    Ok(PropertyCheck::new("secular-elimination", worst, 0.0, cases))
}

fn normal_form_diagonality(problems: &[ValidatedProblem]) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for p in problems {
        let sol = hori_expand(p)?;
        let mut h = ObservableSeries::zero(p.dim(), p.max_order());
        h.set_coeff(0, QuadraticObservable::from_diagonal(&p.shifted_e0()))?;
        for m in 1..=p.max_order() {
            if let Some(v) = p.perturbation(m) {
                h.set_coeff(m, QuadraticObservable::new(v.clone())?)?;
            }
        }
        let transformed = classical_lie_transform(sol.w_star_series(), &h, p.max_order())?;
        for n in 0..=p.max_order() {
            let c = transformed.coeff(n);
            worst = worst.max(c.sub(&angle_average(&c))?.max_norm());
        }
    }
    Ok(PropertyCheck::new("normal-form-diagonality", worst, 1e-10, problems.len()))
}

fn unitarity_and_action_conservation(
    problems: &[ValidatedProblem],
    rng: &mut impl Rng,
) -> Result<(PropertyCheck, PropertyCheck)> {
    let mut worst_u = 0.0_f64;
    let mut worst_a = 0.0_f64;
    for p in problems {
        let sol = vvp_expand(p)?;
        for &eps in &[0.0, 0.1, 0.5] {
            let u = sol.transform_unitary(eps);
            let gram = dagger(&u).dot(&u);
            worst_u = worst_u.max(max_norm(&(gram - identity(p.dim()))));

            let s = random_state(rng, p.dim(), 0.0);
            let psi = s.state_vector();
            let mapped: Vec<C64> = (0..p.dim())
                .map(|j| (0..p.dim()).map(|k| u[[j, k]] * psi[k]).sum())
                .collect();
            let before = s.total_action();
            let after = PhaseSpaceState::from_state_vector(&mapped).total_action();
            worst_a = worst_a.max((after - before).abs());
        }
    }
    Ok((
        PropertyCheck::new("transform-unitarity", worst_u, 1e-12, problems.len()),
        PropertyCheck::new("action-conservation", worst_a, 1e-12, problems.len()),
    ))
}

fn eigensolver_self_consistency(rng: &mut impl Rng, cases: usize) -> Result<PropertyCheck> {
    let mut worst = 0.0_f64;
    for _ in 0..cases {
        let dim = rng.random_range(2..=6);
        let h = random_hermitian(rng, dim, 2.0);
        let s = diagonalize_hermitian(&h)?;
        let rebuilt = s
            .eigenvectors
            .dot(&diag_matrix(&s.eigenvalues))
            .dot(&dagger(&s.eigenvectors));
        let scale = max_norm(&h).max(f64::MIN_POSITIVE);
        worst = worst.max(max_norm(&(rebuilt - &h)) / scale);
    }
    Ok(PropertyCheck::new("eigensolver-self-consistency", worst, 1e-11, cases))
}

// ---------------------------------------------------------------------------
// The suite
// ---------------------------------------------------------------------------

/// Run every property check.
///
/// `base` (typically the user's problem) joins the per-problem checks as an
/// extra case; `cases` random problems/inputs are drawn per check from a
/// generator seeded with `seed`. With `cases = 0` the random coverage is
/// vacuous and only the base problem (if any) is exercised.
pub fn run_property_suite(
    base: Option<&ValidatedProblem>,
    seed: u64,
    cases: usize,
) -> Result<VerificationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut problems: Vec<ValidatedProblem> = Vec::new();
    if let Some(p) = base {
        problems.push(p.clone());
    }
    for _ in 0..cases {
        let dim = rng.random_range(2..=6);
        let max_order = rng.random_range(1..=4);
        problems.push(random_problem(&mut rng, dim, max_order));
    }

    let mut checks = vec![
        series_ring_laws(&mut rng, cases)?,
        lie_transform_laws(&mut rng, cases)?,
        projection_laws(&mut rng, cases)?,
        numeric_time_average(&mut rng, cases.min(5))?,
        second_order_textbook(&mut rng, cases)?,
        convergence_slope(&mut rng, cases)?,
    ];
    let (hq, hc) = homological_residuals(&problems, &mut rng)?;
    checks.push(hq);
    checks.push(hc);
    checks.push(engine_equivalence(&problems)?);
    checks.push(normal_form_diagonality(&problems)?);
    let (bq, bfd) = bracket_correspondence(&mut rng, cases)?;
    checks.push(bq);
    checks.push(bfd);
    checks.push(canonical_pairs(&mut rng, cases.min(10))?);
    checks.push(jacobi_identity(&mut rng, cases)?);
    checks.push(secular_elimination(&mut rng, cases)?);
    let (u, a) = unitarity_and_action_conservation(&problems, &mut rng)?;
    checks.push(u);
    checks.push(a);
    checks.push(eigensolver_self_consistency(&mut rng, cases)?);

    Ok(VerificationReport {
        checks,
        seed,
        cases,
    })
}
