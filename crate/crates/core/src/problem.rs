//! Problem statement and the validation gatekeeper.
//!
//! A [`PerturbationProblem`] is plain data: unperturbed energies, the
//! perturbation matrices by order, a truncation order, and optional
//! tolerance/shift overrides. [`validate_problem`] is the single entry point
//! that checks every invariant and resolves the defaults; both engines and
//! the oracle accept only the resulting [`ValidatedProblem`].

use std::collections::BTreeMap;

use crate::matrix::{diag_matrix, CMatrix, HermitianOperator, C64};
use crate::series::OperatorSeries;
use crate::{Error, Result};

/// How many integer multiples of the mean spacing the zero-shift search
/// scans on each side of zero before giving up. Each energy can disqualify
/// at most two candidates, so `2·dim + 2` always leaves survivors.
fn shift_scan_radius(dim: usize) -> i64 {
    2 * dim as i64 + 2
}

/// An unvalidated perturbation problem `H(ε) = diag(e0) + Σₘ εᵐ Vₘ`.
#[derive(Debug, Clone)]
pub struct PerturbationProblem {
    /// Unperturbed energies `Eₙ⁰` (the diagonal of `H₀` in its own eigenbasis).
    pub e0: Vec<f64>,
    /// Perturbation matrices keyed by their order `m ≥ 1`.
    pub perturbations: BTreeMap<usize, HermitianOperator>,
    /// Truncation order of the expansion.
    pub max_order: usize,
    /// Degeneracy tolerance; `None` means `1e-9 · max(1, max|Eₙ⁰|)`.
    pub gap_tol: Option<f64>,
    /// Constant added to every energy for the classical engine; `None`
    /// requests the automatic choice described in [`validate_problem`].
    pub zero_shift: Option<f64>,
}

impl PerturbationProblem {
    pub fn new(e0: Vec<f64>, max_order: usize) -> Self {
        Self {
            e0,
            perturbations: BTreeMap::new(),
            max_order,
            gap_tol: None,
            zero_shift: None,
        }
    }

    pub fn with_perturbation(mut self, order: usize, v: HermitianOperator) -> Self {
        self.perturbations.insert(order, v);
        self
    }

    pub fn with_gap_tol(mut self, tol: f64) -> Self {
        self.gap_tol = Some(tol);
        self
    }

    pub fn with_zero_shift(mut self, shift: f64) -> Self {
        self.zero_shift = Some(shift);
        self
    }

    /// Shorthand for [`validate_problem`].
    pub fn validated(self) -> Result<ValidatedProblem> {
        validate_problem(self)
    }
}

/// A problem that passed [`validate_problem`]: non-degenerate spectrum,
/// shape-checked perturbations, and concrete `gap_tol` / `zero_shift`.
#[derive(Debug, Clone)]
pub struct ValidatedProblem {
    e0: Vec<f64>,
    perturbations: BTreeMap<usize, HermitianOperator>,
    max_order: usize,
    gap_tol: f64,
    zero_shift: f64,
}

/// Check all problem invariants and resolve defaulted fields.
///
/// On success the returned problem guarantees:
///
/// - every perturbation order is ≥ 1 and every matrix is `dim × dim`;
/// - `|Eₙ⁰ − Eₘ⁰| > gap_tol` for all `n ≠ m`;
/// - `|Eₙ⁰ + zero_shift| ≥ gap_tol` for all `n`, with `zero_shift` chosen as
///   the smallest integer multiple of the mean level spacing
///   `(max − min)/(N−1)` (spacing 1 when `N = 1`) when the caller left it
///   unset. "Smallest" orders candidates `0, s, −s, 2s, −2s, …`.
pub fn validate_problem(p: PerturbationProblem) -> Result<ValidatedProblem> {
    let dim = p.e0.len();
    if dim == 0 {
        return Err(Error::EmptySpectrum);
    }
    for (&order, v) in &p.perturbations {
        if order == 0 {
            return Err(Error::ZeroOrderPerturbation);
        }
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
    }

    let max_abs = p.e0.iter().fold(0.0_f64, |acc, e| acc.max(e.abs()));
    let gap_tol = p.gap_tol.unwrap_or(1e-9 * max_abs.max(1.0));

    for i in 0..dim {
        for j in (i + 1)..dim {
            let gap = (p.e0[i] - p.e0[j]).abs();
            if gap <= gap_tol {
                return Err(Error::DegenerateSpectrum {
                    i,
                    j,
                    gap,
                    tolerance: gap_tol,
                });
            }
        }
    }

    let admissible = |shift: f64| {
        p.e0.iter()
            .enumerate()
            .find(|(_, &e)| (e + shift).abs() < gap_tol)
    };
    let zero_shift = match p.zero_shift {
        Some(shift) => {
            if let Some((level, &e)) = admissible(shift) {
                return Err(Error::ZeroShiftRejected {
                    shift,
                    level,
                    shifted: e + shift,
                    tolerance: gap_tol,
                });
            }
            shift
        }
        None => {
            let spacing = if dim >= 2 {
                let max = p.e0.iter().cloned().fold(f64::MIN, f64::max);
                let min = p.e0.iter().cloned().fold(f64::MAX, f64::min);
                (max - min) / (dim - 1) as f64
            } else {
                1.0
            };
            let radius = shift_scan_radius(dim);
            let mut found = None;
            for step in 0..=radius {
                for candidate in [step, -step] {
                    let shift = candidate as f64 * spacing;
                    if admissible(shift).is_none() {
                        found = Some(shift);
                        break;
                    }
                }
                if found.is_some() {
                    break;
                }
            }
            found.ok_or(Error::ZeroShiftSearchFailed {
                candidates: (2 * radius + 1) as usize,
            })?
        }
    };

    Ok(ValidatedProblem {
        e0: p.e0,
        perturbations: p.perturbations,
        max_order: p.max_order,
        gap_tol,
        zero_shift,
    })
}

impl ValidatedProblem {
    pub fn dim(&self) -> usize {
        self.e0.len()
    }

    pub fn e0(&self) -> &[f64] {
        &self.e0
    }

    /// Energies seen by the classical engine: `Eₙ⁰ + zero_shift`, all nonzero.
    pub fn shifted_e0(&self) -> Vec<f64> {
        self.e0.iter().map(|e| e + self.zero_shift).collect()
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn gap_tol(&self) -> f64 {
        self.gap_tol
    }

    pub fn zero_shift(&self) -> f64 {
        self.zero_shift
    }

    pub fn perturbations(&self) -> &BTreeMap<usize, HermitianOperator> {
        &self.perturbations
    }

    /// The matrix of `Vₘ`, or `None` when that order was not supplied.
    pub fn perturbation(&self, order: usize) -> Option<&CMatrix> {
        self.perturbations.get(&order).map(|v| v.matrix())
    }

    /// `H(ε)` as an operator series truncated at `max_order`:
    /// coefficient 0 is `diag(e0)`, coefficient `m` is `Vₘ`.
    pub fn hamiltonian_series(&self) -> OperatorSeries {
        let mut h = OperatorSeries::zero(self.dim(), self.max_order);
        h.set_coeff(0, diag_matrix(&self.e0)).unwrap();
        for (&order, v) in &self.perturbations {
            if order <= self.max_order {
                h.set_coeff(order, v.matrix().clone()).unwrap();
            }
        }
        h
    }

    /// The full Hamiltonian at a concrete `ε`, including perturbation
    /// orders beyond `max_order` (the expansion truncates; `H` does not).
    pub fn hamiltonian_at(&self, eps: f64) -> CMatrix {
        let mut h = diag_matrix(&self.e0);
        for (&order, v) in &self.perturbations {
            let weight = eps.powi(order as i32);
            h = h + v.matrix().mapv(|z| z * C64::new(weight, 0.0));
        }
        h
    }

    /// Largest order with a supplied perturbation matrix (0 when none).
    pub fn highest_supplied_order(&self) -> usize {
        self.perturbations.keys().max().copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{max_norm, pauli_x};

    fn sx() -> HermitianOperator {
        HermitianOperator::new(pauli_x()).unwrap()
    }

    #[test]
    fn well_gapped_problem_is_accepted_with_zero_shift_zero() {
        let p = PerturbationProblem::new(vec![1.0, 2.0], 2).with_perturbation(1, sx());
        let v = validate_problem(p).unwrap();
        assert_eq!(v.zero_shift(), 0.0);
        assert!((v.gap_tol() - 2e-9).abs() < 1e-24);
    }

    #[test]
    fn near_degenerate_spectrum_is_rejected() {
        let p = PerturbationProblem::new(vec![1.0, 1.0 + 1e-12], 2).with_perturbation(1, sx());
        assert!(matches!(
            validate_problem(p),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }

    #[test]
    fn zero_energy_gets_shifted_by_one_spacing() {
        // e0 = (0, 1): spacing 1, shift 0 leaves a zero energy, shift 1
        // moves the spectrum to (1, 2).
        let p = PerturbationProblem::new(vec![0.0, 1.0], 2).with_perturbation(1, sx());
        let v = validate_problem(p).unwrap();
        assert_eq!(v.zero_shift(), 1.0);
        assert_eq!(v.shifted_e0(), vec![1.0, 2.0]);
    }

    #[test]
    fn single_level_uses_unit_spacing_fallback() {
        let p = PerturbationProblem::new(vec![0.0], 1);
        let v = validate_problem(p).unwrap();
        assert_eq!(v.zero_shift(), 1.0);
    }

    #[test]
    fn explicit_bad_shift_is_rejected() {
        let p = PerturbationProblem::new(vec![1.0, 2.0], 2).with_zero_shift(-1.0);
        assert!(matches!(
            validate_problem(p),
            Err(Error::ZeroShiftRejected { shift, level: 0, .. }) if shift == -1.0
        ));
    }

    #[test]
    fn order_zero_perturbation_is_rejected() {
        let p = PerturbationProblem::new(vec![1.0, 2.0], 2).with_perturbation(0, sx());
        assert!(matches!(
            validate_problem(p),
            Err(Error::ZeroOrderPerturbation)
        ));
    }

    #[test]
    fn mismatched_perturbation_dimension_is_rejected() {
        let p = PerturbationProblem::new(vec![1.0, 2.0, 3.0], 2).with_perturbation(1, sx());
        assert!(matches!(
            validate_problem(p),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn hamiltonian_assembly_matches_direct_sum() {
        let p = PerturbationProblem::new(vec![1.0, 2.0], 2).with_perturbation(1, sx());
        let v = validate_problem(p).unwrap();
        let eps = 0.3;
        let direct = diag_matrix(&[1.0, 2.0]) + pauli_x().mapv(|z| z * C64::new(eps, 0.0));
        assert!(max_norm(&(v.hamiltonian_at(eps) - &direct)) < 1e-15);
        assert!(max_norm(&(v.hamiltonian_series().evaluate(eps) - direct)) < 1e-15);
    }
}
