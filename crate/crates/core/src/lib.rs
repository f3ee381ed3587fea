//! Dual-engine time-independent perturbation theory for finite-dimensional
//! quantum Hamiltonians.
//!
//! Two independent engines solve the same problem:
//!
//! - [`vvp`] works at the operator level: it seeks a unitary `U = exp(iW)`
//!   conjugating `H = H0 + Σ εⁿ Vₙ` into `H0 + K` with `[H0, K] = 0`, order
//!   by order in `ε`.
//! - [`classical`] works on action-angle phase space: expectation values of
//!   Hermitian operators become quadratic functions `Σ √(IₙIₘ) Gₘₙ
//!   e^{i(θₘ−θₙ)}`, the commutator becomes a Poisson bracket, and the same
//!   expansion runs as a Lie-series (Hori) normalization of a quasiharmonic
//!   Hamiltonian.
//!
//! On this class of phase-space functions the two expansions agree term by
//! term; the crate exposes both so the agreement can be checked rather than
//! assumed. The [`oracle`] module supplies independent ground truth (a
//! self-contained Hermitian eigensolver, finite-difference brackets, numeric
//! time averages) used only for validation, and [`verify`] bundles the
//! property checks into a runnable suite.

pub mod classical;
pub mod matrix;
pub mod oracle;
pub mod problem;
pub mod series;
pub mod verify;
pub mod vvp;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("input is not Hermitian (deviation {deviation:.3e} exceeds tolerance {tolerance:.3e})")]
    NonHermitianInput { deviation: f64, tolerance: f64 },

    #[error("degenerate spectrum: levels {i} and {j} are separated by {gap:.3e} (tolerance {tolerance:.3e})")]
    DegenerateSpectrum {
        i: usize,
        j: usize,
        gap: f64,
        tolerance: f64,
    },

    #[error("perturbation order 0 is reserved for the unperturbed Hamiltonian")]
    ZeroOrderPerturbation,

    #[error("zero shift {shift} leaves level {level} at {shifted:.3e}, within {tolerance:.3e} of zero")]
    ZeroShiftRejected {
        shift: f64,
        level: usize,
        shifted: f64,
        tolerance: f64,
    },

    #[error("no admissible zero shift found after scanning {candidates} multiples of the mean spacing")]
    ZeroShiftSearchFailed { candidates: usize },

    #[error("series has a nonzero constant term (max magnitude {magnitude:.3e}); the generator must start at first order")]
    NonzeroConstantTerm { magnitude: f64 },

    #[error("missing lower-order generators: order {order} requires {required}, only {available} available")]
    MissingLowerOrder {
        order: usize,
        required: usize,
        available: usize,
    },

    #[error("requested expansion order {requested} exceeds the computed maximum {max_order}")]
    OrderOutOfRange { requested: usize, max_order: usize },

    #[error("negative action {value:.3e} at mode {index}")]
    NegativeAction { index: usize, value: f64 },

    #[error("state is too close to a chart singularity: action {value:.3e} at mode {index} is below {required:.3e}")]
    SingularRegion {
        index: usize,
        value: f64,
        required: f64,
    },

    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal mass {off:.3e})")]
    NoConvergence { sweeps: usize, off: f64 },

    #[error("resonance scan order must be at least 2 (got {requested})")]
    ScanOrderTooLow { requested: usize },

    #[error("eigenpair matching is not a permutation: exact level {index} claimed more than once")]
    AmbiguousMatch { index: usize },

    #[error("empty spectrum: dimension must be at least 1")]
    EmptySpectrum,
}

pub type Result<T> = std::result::Result<T, Error>;
