//! Problem-file ingestion.
//!
//! A problem file is a JSON document describing one perturbation problem:
//!
//! ```json
//! {
//!   "dim": 2,
//!   "e0": [1.0, 2.0],
//!   "perturbations": [
//!     { "order": 1, "matrix_real": [[0.0, 1.0], [1.0, 0.0]] }
//!   ],
//!   "max_order": 2,
//!   "epsilons": [0.1]
//! }
//! ```
//!
//! `matrix_imag` defaults to zeros; `tolerances` and `zero_shift` are
//! optional overrides. Shape errors are reported with the offending field's
//! path; physical validation (Hermiticity, degeneracy, zero shifts) is
//! delegated to the library and surfaces as a run failure, not a parse one.

use ndarray::Array2;
use num_complex::Complex64;
use serde::Deserialize;
use std::path::Path;

use perturb_core::matrix::HermitianOperator;
use perturb_core::problem::{PerturbationProblem, ValidatedProblem};

/// How a command invocation failed, which fixes the process exit code:
/// `Parse` exits 2, `Run` exits 1.
#[derive(Debug)]
pub enum Failure {
    Parse(String),
    Run(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Parse(_) => 2,
            Failure::Run(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Parse(m) | Failure::Run(m) => m,
        }
    }
}

impl From<perturb_core::Error> for Failure {
    fn from(e: perturb_core::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub dim: usize,
    pub e0: Vec<f64>,
    pub perturbations: Vec<PerturbationEntry>,
    pub max_order: usize,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub zero_shift: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationEntry {
    pub order: usize,
    pub matrix_real: Vec<Vec<f64>>,
    #[serde(default)]
    pub matrix_imag: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Minimum allowed unperturbed gap (absolute).
    pub gap_tol: Option<f64>,
    /// Relative Hermiticity acceptance for input matrices.
    pub hermiticity_tol: Option<f64>,
    /// Threshold on `|k · E⁰|` for resonance reporting.
    pub resonance_tol: Option<f64>,
}

/// A parsed and physically validated problem plus the request parameters
/// that ride along in the file.
#[derive(Debug)]
pub struct LoadedProblem {
    pub problem: ValidatedProblem,
    pub epsilons: Vec<f64>,
    pub resonance_tol: Option<f64>,
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    let file: ProblemFile = serde_json::from_str(&text)
        .map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    build(file).map_err(|f| match f {
        Failure::Parse(m) => Failure::Parse(format!("{}: {m}", path.display())),
        Failure::Run(m) => Failure::Run(format!("{}: {m}", path.display())),
    })
}

fn build(file: ProblemFile) -> Result<LoadedProblem, Failure> {
    if file.e0.len() != file.dim {
        return Err(Failure::Parse(format!(
            "e0: expected {} entries to match dim, found {}",
            file.dim,
            file.e0.len()
        )));
    }

    let mut problem = PerturbationProblem::new(file.e0, file.max_order);
    let mut seen = Vec::new();
    for (index, entry) in file.perturbations.iter().enumerate() {
        if seen.contains(&entry.order) {
            return Err(Failure::Parse(format!(
                "perturbations[{index}].order: duplicate order {}",
                entry.order
            )));
        }
        seen.push(entry.order);
        let matrix = assemble_matrix(index, file.dim, entry)?;
        let operator = match file.tolerances.hermiticity_tol {
            Some(tol) => HermitianOperator::with_tolerance(matrix, tol),
            None => HermitianOperator::new(matrix),
        }
        .map_err(|e| Failure::Run(format!("perturbations[{index}]: {e}")))?;
        problem = problem.with_perturbation(entry.order, operator);
    }
    if let Some(tol) = file.tolerances.gap_tol {
        problem = problem.with_gap_tol(tol);
    }
    if let Some(shift) = file.zero_shift {
        problem = problem.with_zero_shift(shift);
    }

    Ok(LoadedProblem {
        problem: problem.validated()?,
        epsilons: file.epsilons,
        resonance_tol: file.tolerances.resonance_tol,
    })
}

fn assemble_matrix(
    index: usize,
    dim: usize,
    entry: &PerturbationEntry,
) -> Result<Array2<Complex64>, Failure> {
    let check = |field: &str, rows: &[Vec<f64>]| -> Result<(), Failure> {
        if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
            return Err(Failure::Parse(format!(
                "perturbations[{index}].{field}: expected a {dim}x{dim} array"
            )));
        }
        Ok(())
    };
    check("matrix_real", &entry.matrix_real)?;
    if let Some(imag) = &entry.matrix_imag {
        check("matrix_imag", imag)?;
    }
    Ok(Array2::from_shape_fn((dim, dim), |(j, k)| {
        let re = entry.matrix_real[j][k];
        let im = entry
            .matrix_imag
            .as_ref()
            .map_or(0.0, |rows| rows[j][k]);
        Complex64::new(re, im)
    }))
}
