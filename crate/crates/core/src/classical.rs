//! The phase-space engine.
//!
//! Expectation values of Hermitian operators, seen as functions of the state,
//! form the quadratic class `f(θ,I) = Σₙₘ √(IₙIₘ) Gₘₙ e^{i(θₘ−θₙ)}` on
//! action-angle phase space. The class is closed under the Poisson bracket
//! (which reduces to `−i` times the commutator of coefficient matrices), the
//! unperturbed Hamiltonian is the quasiharmonic `Σ Eₙ⁰ Iₙ`, and canonical
//! perturbation theory runs verbatim: a Lie-series transform generated by
//! `W*(ε)` pushes all angle dependence out of the Hamiltonian order by order,
//! leaving the normal form `H* = Σ Eₙ Iₙ`.
//!
//! Everything here is built on bracket arithmetic only — no code is shared
//! with the operator engine — so agreement between the two is a genuine
//! cross-check, not a tautology.

use ndarray::Array2;

use crate::matrix::{diag_matrix, hermiticity_deviation, max_norm, CMatrix, C64};
use crate::problem::ValidatedProblem;
use crate::{Error, Result};

use std::f64::consts::TAU;

// ---------------------------------------------------------------------------
// Phase-space states
// ---------------------------------------------------------------------------

/// Forward chart map: `Iₙ = (qₙ² + pₙ²)/2`, `θₙ = atan2(−pₙ, qₙ) mod 2π`.
///
/// At `Iₙ = 0` the angle is undefined; it is set to 0 by convention.
pub fn to_action_angle(q: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            found: p.len(),
        });
    }
    let mut theta = Vec::with_capacity(q.len());
    let mut action = Vec::with_capacity(q.len());
    for (&qn, &pn) in q.iter().zip(p) {
        let i = 0.5 * (qn * qn + pn * pn);
        let t = if i == 0.0 {
            0.0
        } else {
            let raw = (-pn).atan2(qn);
            if raw < 0.0 {
                raw + TAU
            } else {
                raw
            }
        };
        theta.push(t);
        action.push(i);
    }
    Ok((theta, action))
}

/// Inverse chart map: `qₙ = √(2Iₙ) cos θₙ`, `pₙ = −√(2Iₙ) sin θₙ`.
pub fn from_action_angle(theta: &[f64], action: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if theta.len() != action.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            found: action.len(),
        });
    }
    for (n, &i) in action.iter().enumerate() {
        if i < 0.0 {
            return Err(Error::NegativeAction { index: n, value: i });
        }
    }
    let q = theta
        .iter()
        .zip(action)
        .map(|(&t, &i)| (2.0 * i).sqrt() * t.cos())
        .collect();
    let p = theta
        .iter()
        .zip(action)
        .map(|(&t, &i)| -(2.0 * i).sqrt() * t.sin())
        .collect();
    Ok((q, p))
}

/// A point of phase space in either chart.
///
/// The two charts agree wherever all actions are positive; at `Iₙ = 0` the
/// cartesian chart is the faithful one and the angle is conventional.
#[derive(Debug, Clone)]
pub enum PhaseSpaceState {
    Cartesian { q: Vec<f64>, p: Vec<f64> },
    ActionAngle { theta: Vec<f64>, action: Vec<f64> },
}

impl PhaseSpaceState {
    pub fn cartesian(q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        if q.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                found: p.len(),
            });
        }
        Ok(Self::Cartesian { q, p })
    }

    pub fn action_angle(theta: Vec<f64>, action: Vec<f64>) -> Result<Self> {
        if theta.len() != action.len() {
            return Err(Error::DimensionMismatch {
                expected: theta.len(),
                found: action.len(),
            });
        }
        for (n, &i) in action.iter().enumerate() {
            if i < 0.0 {
                return Err(Error::NegativeAction { index: n, value: i });
            }
        }
        Ok(Self::ActionAngle { theta, action })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Cartesian { q, .. } => q.len(),
            Self::ActionAngle { theta, .. } => theta.len(),
        }
    }

    /// The state in the action-angle chart.
    pub fn angles_actions(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Cartesian { q, p } => to_action_angle(q, p).expect("lengths agree"),
            Self::ActionAngle { theta, action } => (theta.clone(), action.clone()),
        }
    }

    /// The state in the cartesian chart.
    pub fn cartesian_coords(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Cartesian { q, p } => (q.clone(), p.clone()),
            Self::ActionAngle { theta, action } => {
                from_action_angle(theta, action).expect("validated at construction")
            }
        }
    }

    /// The corresponding quantum amplitude vector `ψₙ = (qₙ + ipₙ)/√2
    /// = √Iₙ e^{−iθₙ}`.
    pub fn state_vector(&self) -> Vec<C64> {
        let (q, p) = self.cartesian_coords();
        q.iter()
            .zip(&p)
            .map(|(&qn, &pn)| C64::new(qn, pn) / C64::new(2.0_f64.sqrt(), 0.0))
            .collect()
    }

    /// Build the phase-space image of a quantum amplitude vector.
    pub fn from_state_vector(psi: &[C64]) -> Self {
        let q = psi.iter().map(|z| 2.0_f64.sqrt() * z.re).collect();
        let p = psi.iter().map(|z| 2.0_f64.sqrt() * z.im).collect();
        Self::Cartesian { q, p }
    }

    /// `Σₙ Iₙ`, which equals the quantum norm `⟨ψ|ψ⟩`.
    pub fn total_action(&self) -> f64 {
        match self {
            Self::Cartesian { q, p } => q
                .iter()
                .zip(p)
                .map(|(&qn, &pn)| 0.5 * (qn * qn + pn * pn))
                .sum(),
            Self::ActionAngle { action, .. } => action.iter().sum(),
        }
    }
}

// ---------------------------------------------------------------------------
// Quadratic observables and their bracket algebra
// ---------------------------------------------------------------------------

/// A phase-space function `f(θ,I) = Σₙₘ √(IₙIₘ) Gₘₙ e^{i(θₘ−θₙ)}` with
/// Hermitian coefficient matrix `G` — exactly the functions arising as
/// quantum expectation values `⟨ψ|Ĝ|ψ⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObservable {
    coeff: CMatrix,
}

impl QuadraticObservable {
    /// Wrap a coefficient matrix, checking shape and Hermiticity.
    pub fn new(coeff: CMatrix) -> Result<Self> {
        let (rows, cols) = coeff.dim();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        let scale = max_norm(&coeff);
        let deviation = hermiticity_deviation(&coeff);
        let tolerance = 1e-12 * scale.max(f64::MIN_POSITIVE);
        if scale > 0.0 && deviation > tolerance {
            return Err(Error::NonHermitianInput {
                deviation,
                tolerance,
            });
        }
        Ok(Self { coeff })
    }

    /// Internal constructor for results that are Hermitian by construction.
    fn wrap(coeff: CMatrix) -> Self {
        Self { coeff }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            coeff: Array2::zeros((dim, dim)),
        }
    }

    /// The angle-independent observable `Σₙ gₙ Iₙ`.
    pub fn from_diagonal(entries: &[f64]) -> Self {
        Self {
            coeff: diag_matrix(entries),
        }
    }

    pub fn dim(&self) -> usize {
        self.coeff.nrows()
    }

    pub fn coeff(&self) -> &CMatrix {
        &self.coeff
    }

    pub fn max_norm(&self) -> f64 {
        max_norm(&self.coeff)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Self::wrap(&self.coeff + &other.coeff))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(Self::wrap(&self.coeff - &other.coeff))
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::wrap(self.coeff.mapv(|z| z * factor))
    }

    /// Evaluate the double sum at a state. Equals `⟨ψ|G|ψ⟩` for the state's
    /// amplitude vector, hence real for Hermitian `G` (up to rounding).
    pub fn evaluate(&self, s: &PhaseSpaceState) -> Result<f64> {
        if s.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: s.dim(),
            });
        }
        let psi = s.state_vector();
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..self.dim() {
            for n in 0..self.dim() {
                acc += psi[m].conj() * self.coeff[[m, n]] * psi[n];
            }
        }
        Ok(acc.re)
    }
}

/// Poisson bracket on the quadratic class.
///
/// In the `(q,p)` chart `{f,g} = Σₖ (∂f/∂qₖ ∂g/∂pₖ − ∂f/∂pₖ ∂g/∂qₖ)`; on
/// coefficient matrices this closes to `−i(FG − GF)`, again a quadratic
/// observable. The finite-difference oracle checks the two forms agree.
pub fn poisson_bracket(
    f: &QuadraticObservable,
    g: &QuadraticObservable,
) -> Result<QuadraticObservable> {
    if f.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: f.dim(),
            found: g.dim(),
        });
    }
    let fg = f.coeff.dot(&g.coeff);
    let gf = g.coeff.dot(&f.coeff);
    Ok(QuadraticObservable::wrap(
        (fg - gf).mapv(|z| z * C64::new(0.0, -1.0)),
    ))
}

/// Average over the torus of angles: only the `m = n` terms survive, so the
/// result is `⟨f⟩ = Σₙ Gₙₙ Iₙ` — diagonal extraction, performed exactly.
pub fn angle_average(f: &QuadraticObservable) -> QuadraticObservable {
    let dim = f.dim();
    QuadraticObservable::wrap(Array2::from_shape_fn((dim, dim), |(j, k)| {
        if j == k {
            f.coeff[[j, j]]
        } else {
            C64::new(0.0, 0.0)
        }
    }))
}

/// Split a source `ψ` into its angle average and the generator `w*` solving
/// `{w*, H₀} = ψ − ⟨ψ⟩` for the quasiharmonic `H₀ = Σ Eₙ Iₙ`.
///
/// Fourier mode `e^{i(θₘ−θₙ)}` of `w*` picks up the divisor `Eₘ − Eₙ`:
/// off-diagonal entries are `wₘₙ = −i ψₘₙ/(Eₘ − Eₙ)` and the diagonal is
/// zero. Only simple energy differences ever appear, so non-degeneracy alone
/// rules out small divisors; the energies themselves must additionally be
/// nonzero (the caller supplies shifted energies to guarantee it).
pub fn solve_homological_classical(
    psi: &QuadraticObservable,
    e0: &[f64],
    gap_tol: f64,
) -> Result<(QuadraticObservable, QuadraticObservable)> {
    let dim = psi.dim();
    if dim != e0.len() {
        return Err(Error::DimensionMismatch {
            expected: e0.len(),
            found: dim,
        });
    }
    for (level, &e) in e0.iter().enumerate() {
        if e.abs() < gap_tol {
            return Err(Error::ZeroShiftRejected {
                shift: 0.0,
                level,
                shifted: e,
                tolerance: gap_tol,
            });
        }
    }
    let avg = angle_average(psi);
    let mut w = Array2::zeros((dim, dim));
    for m in 0..dim {
        for n in 0..dim {
            if m == n {
                continue;
            }
            let gap = e0[m] - e0[n];
            if gap.abs() <= gap_tol {
                return Err(Error::DegenerateSpectrum {
                    i: m.min(n),
                    j: m.max(n),
                    gap: gap.abs(),
                    tolerance: gap_tol,
                });
            }
            w[[m, n]] = psi.coeff[[m, n]] * C64::new(0.0, -1.0 / gap);
        }
    }
    Ok((avg, QuadraticObservable::wrap(w)))
}

// ---------------------------------------------------------------------------
// Series of observables and the classical Lie transform
// ---------------------------------------------------------------------------

/// A truncated power series `f(ε) = Σₙ εⁿ fₙ` of quadratic observables.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    dim: usize,
    coeffs: Vec<QuadraticObservable>,
}

impl ObservableSeries {
    pub fn zero(dim: usize, max_order: usize) -> Self {
        Self {
            dim,
            coeffs: vec![QuadraticObservable::zero(dim); max_order + 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient of `εⁿ`; zero observable beyond the truncation order.
    pub fn coeff(&self, n: usize) -> QuadraticObservable {
        self.coeffs
            .get(n)
            .cloned()
            .unwrap_or_else(|| QuadraticObservable::zero(self.dim))
    }

    pub fn set_coeff(&mut self, n: usize, f: QuadraticObservable) -> Result<()> {
        if f.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: f.dim(),
            });
        }
        if n >= self.coeffs.len() {
            return Err(Error::MissingLowerOrder {
                order: n,
                required: n + 1,
                available: self.coeffs.len(),
            });
        }
        self.coeffs[n] = f;
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let order = self.max_order().min(other.max_order());
        let coeffs = (0..=order)
            .map(|n| self.coeffs[n].add(&other.coeffs[n]))
            .collect::<Result<_>>()?;
        Ok(Self {
            dim: self.dim,
            coeffs,
        })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|f| f.scale(factor)).collect(),
        }
    }

    pub fn truncated(&self, max_order: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.truncate(max_order + 1);
        while coeffs.len() < max_order + 1 {
            coeffs.push(QuadraticObservable::zero(self.dim));
        }
        Self {
            dim: self.dim,
            coeffs,
        }
    }

    /// Series bracket: `{f, g}ₙ = Σ_{a+b=n} {fₐ, g_b}`, truncated.
    pub fn bracket(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let order = self.max_order().min(other.max_order());
        let mut coeffs = vec![QuadraticObservable::zero(self.dim); order + 1];
        for a in 0..=order {
            for b in 0..=(order - a) {
                let term = poisson_bracket(&self.coeffs[a], &other.coeffs[b])?;
                coeffs[a + b] = coeffs[a + b].add(&term)?;
            }
        }
        Ok(Self {
            dim: self.dim,
            coeffs,
        })
    }

    pub fn max_norm(&self) -> f64 {
        self.coeffs
            .iter()
            .map(QuadraticObservable::max_norm)
            .fold(0.0, f64::max)
    }
}

/// Classical Lie transform `Σₖ (1/k!) 𝔇ᵏ(f)` with `𝔇(f) = {f, w}`,
/// truncated at `max_order`.
///
/// The generator must have no constant term, so `𝔇` raises the minimum
/// ε-order and the sum terminates at `k = max_order`.
pub fn classical_lie_transform(
    w: &ObservableSeries,
    f: &ObservableSeries,
    max_order: usize,
) -> Result<ObservableSeries> {
    let w0 = w.coeff(0).max_norm();
    if w0 > 0.0 {
        return Err(Error::NonzeroConstantTerm { magnitude: w0 });
    }
    let w = w.truncated(max_order);
    let mut term = f.truncated(max_order);
    let mut sum = term.clone();
    for k in 1..=max_order {
        // term_k = (1/k){term_{k-1}, w} carries the accumulated 1/k!.
        term = term.bracket(&w)?.scale(1.0 / k as f64);
        sum = sum.add(&term)?;
    }
    Ok(sum)
}

// ---------------------------------------------------------------------------
// The Hori recursion
// ---------------------------------------------------------------------------

/// Result of [`hori_expand`]: generator series, per-order normal-form
/// energy corrections, and the retained sources.
#[derive(Debug, Clone)]
pub struct HoriSolution {
    problem: ValidatedProblem,
    w_star_series: ObservableSeries,
    normal_form: Vec<Vec<f64>>,
    psi_log: Vec<QuadraticObservable>,
}

/// Normalize the quasiharmonic Hamiltonian of a validated problem to
/// `p.max_order()`.
///
/// The recursion runs on shifted energies `Eₙ⁰ + zero_shift` (all nonzero by
/// validation); the shift is inert — it never reaches the generators or the
/// corrections, and reported energies are un-shifted. Order `n` extracts the
/// source `Ψₙ` as the `εⁿ` coefficient of the Lie transform with the known
/// generators `W₁*…Wₙ₋₁*` (and `Wₙ*` zeroed), then splits it with
/// [`solve_homological_classical`].
pub fn hori_expand(p: &ValidatedProblem) -> Result<HoriSolution> {
    let dim = p.dim();
    let max_order = p.max_order();
    let shifted = p.shifted_e0();

    let mut h = ObservableSeries::zero(dim, max_order);
    h.set_coeff(0, QuadraticObservable::from_diagonal(&shifted))?;
    for m in 1..=max_order {
        if let Some(v) = p.perturbation(m) {
            h.set_coeff(m, QuadraticObservable::new(v.clone())?)?;
        }
    }

    let mut w_star_series = ObservableSeries::zero(dim, max_order);
    let mut normal_form = Vec::with_capacity(max_order);
    let mut psi_log = Vec::with_capacity(max_order);
    for n in 1..=max_order {
        let psi = classical_lie_transform(&w_star_series, &h, n)?.coeff(n);
        let (avg, w_star) = solve_homological_classical(&psi, &shifted, p.gap_tol())?;
        normal_form.push((0..dim).map(|l| avg.coeff()[[l, l]].re).collect());
        w_star_series.set_coeff(n, w_star)?;
        psi_log.push(psi);
    }
    Ok(HoriSolution {
        problem: p.clone(),
        w_star_series,
        normal_form,
        psi_log,
    })
}

impl HoriSolution {
    pub fn problem(&self) -> &ValidatedProblem {
        &self.problem
    }

    /// The generator series `W*(ε) = Σₙ εⁿ Wₙ*` (zero constant term).
    pub fn w_star_series(&self) -> &ObservableSeries {
        &self.w_star_series
    }

    /// The retained sources `Ψ₁ … Ψ_max_order` (index 0 holds `Ψ₁`).
    pub fn psi_log(&self) -> &[QuadraticObservable] {
        &self.psi_log
    }

    /// Order-`m` normal-form corrections `k_{m,n}` per level (`m ≥ 1`).
    pub fn energy_coefficients(&self, order: usize) -> Result<&[f64]> {
        if order == 0 || order > self.normal_form.len() {
            return Err(Error::OrderOutOfRange {
                requested: order,
                max_order: self.normal_form.len(),
            });
        }
        Ok(&self.normal_form[order - 1])
    }

    /// Normal-form energies `Eₙ(ε) = Eₙ⁰ + Σₘ εᵐ k_{m,n}`, reported against
    /// the *un-shifted* unperturbed energies.
    pub fn energies(&self, eps: f64) -> Vec<f64> {
        let dim = self.problem.dim();
        (0..dim)
            .map(|n| {
                let mut acc = 0.0;
                for m in (1..=self.normal_form.len()).rev() {
                    acc = acc * eps + self.normal_form[m - 1][n];
                }
                self.problem.e0()[n] + acc * eps
            })
            .collect()
    }

    /// The defect observable `{Wₙ*, H₀} − Ψₙ + ⟨Ψₙ⟩` for one order; its
    /// coefficient matrix should vanish to rounding error, so evaluating it
    /// anywhere on phase space gives (near-)zero.
    pub fn homological_residual(&self, n: usize) -> Result<QuadraticObservable> {
        if n == 0 || n > self.psi_log.len() {
            return Err(Error::OrderOutOfRange {
                requested: n,
                max_order: self.psi_log.len(),
            });
        }
        let h0 = QuadraticObservable::from_diagonal(&self.problem.shifted_e0());
        let psi = &self.psi_log[n - 1];
        let avg = angle_average(psi);
        poisson_bracket(&self.w_star_series.coeff(n), &h0)?
            .sub(psi)?
            .add(&avg)
    }
}

// ---------------------------------------------------------------------------
// Resonance scanning
// ---------------------------------------------------------------------------

/// One integer vector `k` with `k · E⁰ ≈ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Resonance {
    pub k: Vec<i64>,
    /// `Σ |kₙ|`.
    pub order: usize,
    /// The (near-zero) value of `k · E⁰`.
    pub dot: f64,
    /// Whether `k` is of the form `eₘ − eₙ` — the only resonances that can
    /// obstruct the quadratic-class expansion.
    pub mode_difference: bool,
}

/// Output of [`resonance_scan`].
#[derive(Debug, Clone)]
pub struct ResonanceScan {
    pub resonances: Vec<Resonance>,
    /// Threshold applied to `|k · E⁰|`.
    pub tolerance: f64,
    pub any_mode_difference: bool,
}

/// Brute-force scan of the integer lattice for resonances `k · E⁰ ≈ 0`.
///
/// Enumerates every `k` with `0 < Σ|kₙ| ≤ max_order` and `|kₙ| ≤ k_bound`
/// (default `max_order`), reporting those with `|k·E⁰|` below the tolerance
/// (default `1e-9 · max|Eₙ⁰|`). Both a resonance and its sign-flipped
/// partner are listed. Requires `max_order ≥ 2` — order 1 would merely
/// restate which energies are zero.
pub fn resonance_scan(
    e0: &[f64],
    max_order: usize,
    k_bound: Option<usize>,
    tolerance: Option<f64>,
) -> Result<ResonanceScan> {
    if max_order < 2 {
        return Err(Error::ScanOrderTooLow {
            requested: max_order,
        });
    }
    if e0.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let bound = k_bound.unwrap_or(max_order).min(max_order) as i64;
    let max_abs = e0.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let tol = tolerance.unwrap_or(1e-9 * max_abs);

    let mut resonances = Vec::new();
    let mut k = vec![0_i64; e0.len()];
    scan_recursive(e0, bound, max_order as i64, tol, 0, 0, 0.0, &mut k, &mut resonances);
    let any_mode_difference = resonances.iter().any(|r| r.mode_difference);
    Ok(ResonanceScan {
        resonances,
        tolerance: tol,
        any_mode_difference,
    })
}

#[allow(clippy::too_many_arguments)]
fn scan_recursive(
    e0: &[f64],
    bound: i64,
    budget: i64,
    tol: f64,
    index: usize,
    weight: i64,
    dot: f64,
    k: &mut Vec<i64>,
    out: &mut Vec<Resonance>,
) {
    if index == e0.len() {
        if weight > 0 && dot.abs() < tol {
            let plus = k.iter().filter(|&&v| v == 1).count();
            let minus = k.iter().filter(|&&v| v == -1).count();
            out.push(Resonance {
                k: k.clone(),
                order: weight as usize,
                dot,
                mode_difference: weight == 2 && plus == 1 && minus == 1,
            });
        }
        return;
    }
    let room = (budget - weight).min(bound);
    for v in -room..=room {
        k[index] = v;
        scan_recursive(
            e0,
            bound,
            budget,
            tol,
            index + 1,
            weight + v.abs(),
            dot + v as f64 * e0[index],
            k,
            out,
        );
    }
    k[index] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{pauli_x, pauli_y, pauli_z, HermitianOperator};
    use crate::problem::PerturbationProblem;
    use crate::vvp::vvp_expand;

    fn obs(m: CMatrix) -> QuadraticObservable {
        QuadraticObservable::new(m).unwrap()
    }

    fn assert_obs_close(a: &QuadraticObservable, b: &QuadraticObservable, tol: f64) {
        let diff = max_norm(&(a.coeff() - b.coeff()));
        assert!(diff <= tol, "coefficients differ by {diff:.3e} > {tol:.3e}");
    }

    #[test]
    fn chart_maps_reproduce_reference_points() {
        let (theta, action) = to_action_angle(&[2.0_f64.sqrt()], &[0.0]).unwrap();
        assert!(theta[0].abs() < 1e-15 && (action[0] - 1.0).abs() < 1e-15);

        let (theta, action) = to_action_angle(&[0.0], &[-(2.0_f64.sqrt())]).unwrap();
        assert!((theta[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert!((action[0] - 1.0).abs() < 1e-15);

        let (theta, action) = to_action_angle(&[0.0], &[0.0]).unwrap();
        assert_eq!((theta[0], action[0]), (0.0, 0.0));
    }

    #[test]
    fn chart_round_trip_is_lossless_away_from_the_origin() {
        let q = [0.7, -1.3, 0.4];
        let p = [0.2, 0.9, -1.1];
        let (theta, action) = to_action_angle(&q, &p).unwrap();
        assert!(theta.iter().all(|&t| (0.0..TAU).contains(&t)));
        let (q2, p2) = from_action_angle(&theta, &action).unwrap();
        for n in 0..3 {
            assert!((q[n] - q2[n]).abs() < 1e-14);
            assert!((p[n] - p2[n]).abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_chart_rejects_negative_action() {
        assert!(matches!(
            from_action_angle(&[0.0], &[-0.1]),
            Err(Error::NegativeAction { index: 0, .. })
        ));
    }

    #[test]
    fn total_action_equals_quantum_norm() {
        let s = PhaseSpaceState::cartesian(vec![0.7, -1.3], vec![0.2, 0.9]).unwrap();
        let psi = s.state_vector();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((s.total_action() - norm).abs() < 1e-14);
    }

    #[test]
    fn state_vector_round_trips() {
        let s = PhaseSpaceState::action_angle(vec![0.4, 5.1], vec![0.3, 0.7]).unwrap();
        let psi = s.state_vector();
        let back = PhaseSpaceState::from_state_vector(&psi);
        let (t1, a1) = s.angles_actions();
        let (t2, a2) = back.angles_actions();
        for n in 0..2 {
            assert!((t1[n] - t2[n]).abs() < 1e-13);
            assert!((a1[n] - a2[n]).abs() < 1e-14);
        }
    }

    #[test]
    fn evaluation_reproduces_reference_values() {
        // Diagonal coefficients: Σ Eₙ Iₙ.
        let h0 = QuadraticObservable::from_diagonal(&[1.0, 2.0]);
        let s = PhaseSpaceState::action_angle(vec![0.8, 2.1], vec![0.25, 0.5]).unwrap();
        assert!((h0.evaluate(&s).unwrap() - (0.25 + 1.0)).abs() < 1e-14);

        // Off-diagonal pair at zero angles: 2·√(I₁I₂).
        let fx = obs(pauli_x());
        let s = PhaseSpaceState::action_angle(vec![0.0, 0.0], vec![0.5, 0.5]).unwrap();
        assert!((fx.evaluate(&s).unwrap() - 1.0).abs() < 1e-14);

        // Identity coefficient: the total action.
        let one = QuadraticObservable::from_diagonal(&[1.0, 1.0]);
        let s = PhaseSpaceState::action_angle(vec![1.0, 4.0], vec![0.4, 0.6]).unwrap();
        assert!((one.evaluate(&s).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn evaluation_matches_the_quantum_expectation() {
        let g = obs(pauli_y());
        let s = PhaseSpaceState::action_angle(vec![0.9, 2.7], vec![0.3, 0.7]).unwrap();
        let psi = s.state_vector();
        let mut expect = C64::new(0.0, 0.0);
        for m in 0..2 {
            for n in 0..2 {
                expect += psi[m].conj() * g.coeff()[[m, n]] * psi[n];
            }
        }
        assert!(expect.im.abs() < 1e-14);
        assert!((g.evaluate(&s).unwrap() - expect.re).abs() < 1e-14);
    }

    #[test]
    fn bracket_is_antisymmetric_and_matches_pauli_algebra() {
        let f = obs(pauli_x());
        assert_eq!(poisson_bracket(&f, &f).unwrap().max_norm(), 0.0);

        // {f_x, f_y} has coefficient −i[σ_x, σ_y] = 2σ_z; at θ=(0,0),
        // I=(1,0) its value is 2·I₁ = 2.
        let g = obs(pauli_y());
        let fg = poisson_bracket(&f, &g).unwrap();
        assert_obs_close(&fg, &obs(pauli_z().mapv(|z| z * 2.0)), 1e-14);
        let s = PhaseSpaceState::action_angle(vec![0.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert!((fg.evaluate(&s).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bracket_with_quasiharmonic_scales_entries_by_gaps() {
        // {h₀, g} with h₀ = diag(E): entry (j,k) of the coefficient becomes
        // −i(E_j − E_k) g_jk; the diagonal stays zero.
        let h0 = QuadraticObservable::from_diagonal(&[1.0, 2.0]);
        let g = obs(pauli_y());
        let b = poisson_bracket(&h0, &g).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                let expected = g.coeff()[[j, k]] * C64::new(0.0, -(1.0 + j as f64 - 1.0 - k as f64));
                assert!((b.coeff()[[j, k]] - expected).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobi_identity_holds_on_the_quadratic_class() {
        let f = obs(pauli_x());
        let g = obs(pauli_y());
        let h = obs(pauli_z() + pauli_x());
        let cyc = poisson_bracket(&f, &poisson_bracket(&g, &h).unwrap())
            .unwrap()
            .add(&poisson_bracket(&g, &poisson_bracket(&h, &f).unwrap()).unwrap())
            .unwrap()
            .add(&poisson_bracket(&h, &poisson_bracket(&f, &g).unwrap()).unwrap())
            .unwrap();
        assert!(cyc.max_norm() < 1e-12);
    }

    #[test]
    fn angle_average_is_diagonal_extraction() {
        assert_eq!(angle_average(&obs(pauli_x())).max_norm(), 0.0);

        let g = obs(CMatrix::from_shape_vec(
            (2, 2),
            vec![
                C64::new(1.0, 0.0),
                C64::new(2.0, 0.0),
                C64::new(2.0, 0.0),
                C64::new(4.0, 0.0),
            ],
        )
        .unwrap());
        let avg = angle_average(&g);
        let s = PhaseSpaceState::action_angle(vec![1.3, 0.2], vec![0.2, 0.3]).unwrap();
        assert!((avg.evaluate(&s).unwrap() - (0.2 + 4.0 * 0.3)).abs() < 1e-14);
    }

    #[test]
    fn angle_average_agrees_with_torus_quadrature() {
        // 64 uniform points per angle integrate every e^{i(θₘ−θₙ)} factor
        // exactly, so the quadrature reproduces the diagonal extraction.
        let g = obs(pauli_z() + pauli_x());
        let actions = vec![0.3, 0.7];
        let points = 64;
        let mut quad = 0.0;
        for a in 0..points {
            for b in 0..points {
                let theta = vec![TAU * a as f64 / points as f64, TAU * b as f64 / points as f64];
                let s = PhaseSpaceState::action_angle(theta, actions.clone()).unwrap();
                quad += g.evaluate(&s).unwrap();
            }
        }
        quad /= (points * points) as f64;
        let s0 = PhaseSpaceState::action_angle(vec![0.0, 0.0], actions).unwrap();
        let exact = angle_average(&g).evaluate(&s0).unwrap();
        assert!((exact - (0.3 - 0.7)).abs() < 1e-14);
        assert!((quad - exact).abs() < 1e-10);
    }

    #[test]
    fn secular_part_is_removed_exactly() {
        let psi = obs(pauli_z() + pauli_y());
        let avg = angle_average(&psi);
        let residual = angle_average(&psi.sub(&avg).unwrap());
        assert_eq!(residual.max_norm(), 0.0);
    }

    #[test]
    fn homological_solve_reproduces_hand_examples() {
        let psi = obs(pauli_x());
        let (avg, w) = solve_homological_classical(&psi, &[1.0, 2.0], 1e-9).unwrap();
        assert_eq!(avg.max_norm(), 0.0);
        assert_obs_close(&w, &obs(pauli_y().mapv(|z| -z)), 1e-15);

        let (_, w) = solve_homological_classical(&psi, &[2.0, 1.0], 1e-9).unwrap();
        assert_obs_close(&w, &obs(pauli_y()), 1e-15);

        let psi = QuadraticObservable::from_diagonal(&[5.0, 7.0]);
        let (avg, w) = solve_homological_classical(&psi, &[1.0, 2.0], 1e-9).unwrap();
        assert_eq!(w.max_norm(), 0.0);
        assert_obs_close(&avg, &psi, 0.0);
    }

    #[test]
    fn homological_solve_satisfies_the_defining_bracket() {
        let psi = obs(pauli_x() + pauli_z());
        let e0 = [1.0, 2.5];
        let (avg, w) = solve_homological_classical(&psi, &e0, 1e-9).unwrap();
        let h0 = QuadraticObservable::from_diagonal(&e0);
        let residual = poisson_bracket(&w, &h0)
            .unwrap()
            .sub(&psi)
            .unwrap()
            .add(&avg)
            .unwrap();
        assert!(residual.max_norm() < 1e-14);
    }

    #[test]
    fn homological_solve_rejects_zero_energies() {
        assert!(matches!(
            solve_homological_classical(&obs(pauli_x()), &[0.0, 1.0], 1e-9),
            Err(Error::ZeroShiftRejected { level: 0, .. })
        ));
    }

    fn two_level_problem(max_order: usize) -> ValidatedProblem {
        PerturbationProblem::new(vec![1.0, 2.0], max_order)
            .with_perturbation(1, HermitianOperator::new(pauli_x()).unwrap())
            .validated()
            .unwrap()
    }

    #[test]
    fn worked_two_level_normalization() {
        let sol = hori_expand(&two_level_problem(2)).unwrap();
        assert_obs_close(&sol.w_star_series().coeff(1), &obs(pauli_y().mapv(|z| -z)), 1e-14);
        assert_eq!(sol.energy_coefficients(1).unwrap(), &[0.0, 0.0]);
        let k2 = sol.energy_coefficients(2).unwrap();
        assert!((k2[0] + 1.0).abs() < 1e-14 && (k2[1] - 1.0).abs() < 1e-14);
        let e = sol.energies(0.1);
        assert!((e[0] - 0.99).abs() < 1e-14 && (e[1] - 2.01).abs() < 1e-14);
    }

    #[test]
    fn zero_perturbation_yields_trivial_normal_form() {
        let p = PerturbationProblem::new(vec![1.0, 2.0, 3.5], 3)
            .validated()
            .unwrap();
        let sol = hori_expand(&p).unwrap();
        assert_eq!(sol.w_star_series().max_norm(), 0.0);
        assert_eq!(sol.energies(0.7), vec![1.0, 2.0, 3.5]);
    }

    #[test]
    fn diagonal_perturbation_is_already_normal() {
        let p = PerturbationProblem::new(vec![1.0, 2.0], 2)
            .with_perturbation(1, HermitianOperator::from_diagonal(&[0.7, -0.3]))
            .validated()
            .unwrap();
        let sol = hori_expand(&p).unwrap();
        assert_eq!(sol.w_star_series().max_norm(), 0.0);
        assert_eq!(sol.energy_coefficients(1).unwrap(), &[0.7, -0.3]);
        assert_eq!(sol.energy_coefficients(2).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn shifted_spectrum_reports_unshifted_energies() {
        // e0 = (0, 1) forces zero_shift = 1; the corrections must be
        // identical to the operator engine's on the same problem, and the
        // reported energies must be un-shifted.
        let p = PerturbationProblem::new(vec![0.0, 1.0], 2)
            .with_perturbation(1, HermitianOperator::new(pauli_x()).unwrap())
            .validated()
            .unwrap();
        assert_eq!(p.zero_shift(), 1.0);
        let classical = hori_expand(&p).unwrap();
        let quantum = vvp_expand(&p).unwrap();
        for eps in [0.0, 0.05, 0.2] {
            let ec = classical.energies(eps);
            let eq = quantum.energies(eps);
            for n in 0..2 {
                assert!((ec[n] - eq[n]).abs() < 1e-13);
            }
        }
    }

    fn herm(entries: [[(f64, f64); 3]; 3]) -> CMatrix {
        let flat: Vec<C64> = entries
            .iter()
            .flat_map(|row| row.iter().map(|&(re, im)| C64::new(re, im)))
            .collect();
        CMatrix::from_shape_vec((3, 3), flat).unwrap()
    }

    fn three_level_problem() -> ValidatedProblem {
        let v1 = herm([
            [(0.3, 0.0), (0.5, -0.2), (0.1, 0.4)],
            [(0.5, 0.2), (-0.7, 0.0), (0.6, -0.3)],
            [(0.1, -0.4), (0.6, 0.3), (0.2, 0.0)],
        ]);
        let v2 = herm([
            [(-0.4, 0.0), (0.2, 0.6), (0.0, -0.5)],
            [(0.2, -0.6), (0.9, 0.0), (0.3, 0.1)],
            [(0.0, 0.5), (0.3, -0.1), (-0.1, 0.0)],
        ]);
        let v3 = herm([
            [(0.8, 0.0), (-0.3, 0.2), (0.4, 0.0)],
            [(-0.3, -0.2), (0.1, 0.0), (0.0, 0.7)],
            [(0.4, 0.0), (0.0, -0.7), (-0.6, 0.0)],
        ]);
        PerturbationProblem::new(vec![1.0, 2.3, 4.1], 3)
            .with_perturbation(1, HermitianOperator::new(v1).unwrap())
            .with_perturbation(2, HermitianOperator::new(v2).unwrap())
            .with_perturbation(3, HermitianOperator::new(v3).unwrap())
            .validated()
            .unwrap()
    }

    #[test]
    fn generic_sources_match_the_explicit_low_order_formulas() {
        // Independent cross-check of the coefficient extraction against the
        // explicit bracket expressions
        //   Ψ₂ = V₂ + {V₁,W₁} + ½{{H₀,W₁},W₁}
        //   Ψ₃ = V₃ + {V₂,W₁} + {V₁,W₂} + ½{{V₁,W₁},W₁}
        //        + ½{{H₀,W₁},W₂} + ½{{H₀,W₂},W₁} + ⅙{{{H₀,W₁},W₁},W₁}
        // using the expansion's own generators.
        let p = three_level_problem();
        let sol = hori_expand(&p).unwrap();
        let h0 = QuadraticObservable::from_diagonal(&p.shifted_e0());
        let v1 = obs(p.perturbation(1).unwrap().clone());
        let v2 = obs(p.perturbation(2).unwrap().clone());
        let v3 = obs(p.perturbation(3).unwrap().clone());
        let w1 = sol.w_star_series().coeff(1);
        let w2 = sol.w_star_series().coeff(2);
        let pb = |a: &QuadraticObservable, b: &QuadraticObservable| poisson_bracket(a, b).unwrap();

        let psi2 = v2
            .add(&pb(&v1, &w1))
            .unwrap()
            .add(&pb(&pb(&h0, &w1), &w1).scale(0.5))
            .unwrap();
        assert_obs_close(&psi2, &sol.psi_log()[1], 1e-13);

        let psi3 = v3
            .add(&pb(&v2, &w1))
            .unwrap()
            .add(&pb(&v1, &w2))
            .unwrap()
            .add(&pb(&pb(&v1, &w1), &w1).scale(0.5))
            .unwrap()
            .add(&pb(&pb(&h0, &w1), &w2).scale(0.5))
            .unwrap()
            .add(&pb(&pb(&h0, &w2), &w1).scale(0.5))
            .unwrap()
            .add(&pb(&pb(&pb(&h0, &w1), &w1), &w1).scale(1.0 / 6.0))
            .unwrap();
        assert_obs_close(&psi3, &sol.psi_log()[2], 1e-13);
    }

    #[test]
    fn full_transform_reaches_the_normal_form() {
        // Applying the complete generator series to the Hamiltonian must
        // leave every ε-coefficient angle-independent (diagonal).
        let p = three_level_problem();
        let sol = hori_expand(&p).unwrap();
        let shifted = p.shifted_e0();
        let mut h = ObservableSeries::zero(3, 3);
        h.set_coeff(0, QuadraticObservable::from_diagonal(&shifted))
            .unwrap();
        for m in 1..=3 {
            h.set_coeff(m, obs(p.perturbation(m).unwrap().clone()))
                .unwrap();
        }
        let transformed = classical_lie_transform(sol.w_star_series(), &h, 3).unwrap();
        for n in 0..=3 {
            let c = transformed.coeff(n);
            let off = c.sub(&angle_average(&c)).unwrap();
            assert!(
                off.max_norm() < 1e-12,
                "order {n} retains angle dependence {:.3e}",
                off.max_norm()
            );
        }
    }

    #[test]
    fn homological_residuals_vanish_on_phase_space() {
        let sol = hori_expand(&three_level_problem()).unwrap();
        let states = [
            PhaseSpaceState::action_angle(vec![0.3, 2.9, 4.4], vec![0.2, 0.5, 0.3]).unwrap(),
            PhaseSpaceState::action_angle(vec![5.8, 1.1, 0.0], vec![0.9, 0.05, 0.05]).unwrap(),
            PhaseSpaceState::cartesian(vec![0.4, -0.8, 0.1], vec![-0.2, 0.3, 0.9]).unwrap(),
        ];
        for n in 1..=3 {
            let residual = sol.homological_residual(n).unwrap();
            assert!(residual.max_norm() <= 1e-10);
            for s in &states {
                assert!(residual.evaluate(s).unwrap().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn classical_lie_transform_rejects_constant_generator() {
        let mut w = ObservableSeries::zero(2, 2);
        w.set_coeff(0, obs(pauli_x())).unwrap();
        let f = ObservableSeries::zero(2, 2);
        assert!(matches!(
            classical_lie_transform(&w, &f, 2),
            Err(Error::NonzeroConstantTerm { .. })
        ));
    }

    #[test]
    fn resonance_scan_finds_known_lattice_points() {
        // (1, 1, −1)·(1, 2, 3) = 0 at order 3, plus the sign-flipped twin.
        let scan = resonance_scan(&[1.0, 2.0, 3.0], 3, None, None).unwrap();
        assert!(scan.resonances.iter().any(|r| r.k == vec![1, 1, -1] && r.order == 3));
        assert!(scan.resonances.iter().any(|r| r.k == vec![-1, -1, 1]));
        assert!(!scan.any_mode_difference);

        // (2, −1)·(1, 2) = 0 at order 3; no order-2 resonance exists.
        let scan = resonance_scan(&[1.0, 2.0], 3, None, None).unwrap();
        assert!(scan.resonances.iter().any(|r| r.k == vec![2, -1]));
        assert!(scan.resonances.iter().all(|r| r.order == 3));
        assert!(!scan.any_mode_difference);

        // Irrational ratio: nothing up to order 6.
        let scan = resonance_scan(&[1.0, 2.0_f64.sqrt()], 6, None, None).unwrap();
        assert!(scan.resonances.is_empty());
    }

    #[test]
    fn resonance_scan_flags_mode_differences() {
        // Equal energies make e₂ − e₁ resonant — the one form that matters
        // for the quadratic class.
        let scan = resonance_scan(&[1.0, 1.0], 2, None, None).unwrap();
        assert!(scan.any_mode_difference);
        assert!(scan
            .resonances
            .iter()
            .any(|r| r.k == vec![1, -1] && r.mode_difference));
    }

    #[test]
    fn resonance_scan_respects_bounds_and_minimum_order() {
        assert!(matches!(
            resonance_scan(&[1.0, 2.0], 1, None, None),
            Err(Error::ScanOrderTooLow { requested: 1 })
        ));
        // k_bound = 1 excludes the (2, −1) resonance.
        let scan = resonance_scan(&[1.0, 2.0], 3, Some(1), None).unwrap();
        assert!(scan.resonances.is_empty());
    }
}
