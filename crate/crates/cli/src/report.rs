//! Report assembly and emission.
//!
//! `solve` produces one [`SpectralReport`]: problem summary, per-order
//! energy coefficients, a resonance scan, and one flat record per
//! `(epsilon, level, order)` triple. The flat records are exactly the rows
//! of the CSV encoding, so the two formats carry identical numeric content.
//!
//! Every floating-point value is printed as `{:.16e}` — 17 significant
//! digits — in both encodings, which round-trips any finite `f64`
//! losslessly and makes repeated runs byte-identical.

use serde::ser::Serialize;
use serde::Deserialize;
use std::io::{self, Write};

use perturb_core::classical::{hori_expand, resonance_scan, HoriSolution};
use perturb_core::matrix::{dagger, diag_matrix, expm, max_norm, C64};
use perturb_core::oracle::{exact_spectrum, match_eigenpairs};
use perturb_core::problem::ValidatedProblem;
use perturb_core::vvp::{vvp_expand, VvpSolution};

use crate::input::Failure;

#[derive(Debug, serde::Serialize, Deserialize)]
pub struct SpectralReport {
    pub problem: ProblemSummary,
    /// Per-order energy corrections (the shift-operator diagonals), orders
    /// `1..=max_order`.
    pub energy_coefficients: Vec<OrderCoefficients>,
    pub resonances: ResonanceReport,
    /// One row per `(epsilon, level, order)`, ordered exactly like the CSV.
    pub records: Vec<Record>,
}

#[derive(Debug, serde::Serialize, Deserialize)]
pub struct ProblemSummary {
    pub dim: usize,
    pub max_order: usize,
    pub e0: Vec<f64>,
    /// Identity shift applied internally to keep energies away from zero.
    pub zero_shift: f64,
}

#[derive(Debug, serde::Serialize, Deserialize)]
pub struct OrderCoefficients {
    pub order: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, serde::Serialize, Deserialize)]
pub struct ResonanceReport {
    pub scan_order: usize,
    pub tolerance: f64,
    pub any_mode_difference: bool,
    pub entries: Vec<ResonanceEntry>,
}

#[derive(Debug, serde::Serialize, Deserialize)]
pub struct ResonanceEntry {
    pub k: Vec<i64>,
    pub order: usize,
    pub dot: f64,
    pub mode_difference: bool,
}

#[derive(Debug, serde::Serialize, Deserialize)]
pub struct Record {
    pub epsilon: f64,
    pub level: usize,
    pub order: usize,
    /// Energy of this level summed through `order`.
    pub e_series: f64,
    /// Matched eigenvalue from the diagonalization oracle.
    pub e_exact: f64,
    pub abs_err: f64,
    /// `‖U H U† − H₀ − K‖_max` with the series truncated at `order`.
    pub residual_conj: f64,
    /// Energy difference between the operator and action-angle engines at
    /// the same truncation.
    pub equiv_delta: f64,
}

/// Solved pair of engines, reused across records.
pub struct Engines {
    pub vvp: VvpSolution,
    pub hori: HoriSolution,
}

pub fn solve_engines(p: &ValidatedProblem) -> Result<Engines, Failure> {
    Ok(Engines {
        vvp: vvp_expand(p)?,
        hori: hori_expand(p)?,
    })
}

/// Hori energies truncated at `order` (the engine itself stores per-order
/// coefficients; this just Horner-sums the prefix).
fn hori_energies_at_order(hori: &HoriSolution, eps: f64, order: usize) -> Result<Vec<f64>, Failure> {
    let p = hori.problem();
    let mut energies = p.e0().to_vec();
    for (level, e) in energies.iter_mut().enumerate() {
        let mut acc = 0.0;
        for m in (1..=order).rev() {
            acc = acc * eps + hori.energy_coefficients(m)?[level];
        }
        *e += acc * eps;
    }
    Ok(energies)
}

/// `‖U H(ε) U† − H₀ − K(ε)‖_max` with every series truncated at `order`.
fn conjugation_residual(p: &ValidatedProblem, vvp: &VvpSolution, eps: f64, order: usize) -> f64 {
    let w = vvp.w_series().truncated(order).evaluate(eps);
    let u = expm(&w.mapv(|z| z * C64::new(0.0, 1.0)));
    let k = vvp.k_series().truncated(order).evaluate(eps);
    let conjugated = u.dot(&p.hamiltonian_at(eps)).dot(&dagger(&u));
    max_norm(&(&conjugated - &diag_matrix(p.e0()) - &k))
}

pub fn build_report(
    p: &ValidatedProblem,
    epsilons: &[f64],
    resonance_tol: Option<f64>,
) -> Result<SpectralReport, Failure> {
    let engines = solve_engines(p)?;
    let max_order = p.max_order();

    let energy_coefficients = (1..=max_order)
        .map(|order| OrderCoefficients {
            order,
            values: engines.vvp.k_diagonal(order),
        })
        .collect();

    let scan_order = max_order.max(2);
    let scan = resonance_scan(p.e0(), scan_order, None, resonance_tol)?;
    let resonances = ResonanceReport {
        scan_order,
        tolerance: scan.tolerance,
        any_mode_difference: scan.any_mode_difference,
        entries: scan
            .resonances
            .iter()
            .map(|r| ResonanceEntry {
                k: r.k.clone(),
                order: r.order,
                dot: r.dot,
                mode_difference: r.mode_difference,
            })
            .collect(),
    };

    let mut sorted_eps = epsilons.to_vec();
    sorted_eps.sort_by(f64::total_cmp);

    let mut records = Vec::new();
    for &eps in &sorted_eps {
        let exact = exact_spectrum(p, eps)?;
        let matched = match_eigenpairs(
            &engines.vvp.energies(eps),
            &engines.vvp.eigenvectors(eps),
            &exact,
        )?;
        // The conjugation residual is level-independent; compute it once
        // per truncation order.
        let residual_conj: Vec<f64> = (0..=max_order)
            .map(|order| conjugation_residual(p, &engines.vvp, eps, order))
            .collect();
        let mut series_by_order = Vec::with_capacity(max_order + 1);
        let mut hori_by_order = Vec::with_capacity(max_order + 1);
        for order in 0..=max_order {
            series_by_order.push(engines.vvp.energies_at_order(eps, order)?);
            hori_by_order.push(hori_energies_at_order(&engines.hori, eps, order)?);
        }
        for level in 0..p.dim() {
            let e_exact = exact.eigenvalues[matched.permutation[level]];
            for order in 0..=max_order {
                let e_series = series_by_order[order][level];
                records.push(Record {
                    epsilon: eps,
                    level,
                    order,
                    e_series,
                    e_exact,
                    abs_err: (e_series - e_exact).abs(),
                    residual_conj: residual_conj[order],
                    equiv_delta: (e_series - hori_by_order[order][level]).abs(),
                });
            }
        }
    }

    Ok(SpectralReport {
        problem: ProblemSummary {
            dim: p.dim(),
            max_order,
            e0: p.e0().to_vec(),
            zero_shift: p.zero_shift(),
        },
        energy_coefficients,
        resonances,
        records,
    })
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

/// Pretty JSON with every float rendered as `{:.16e}`.
struct SciFormatter {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl SciFormatter {
    fn new() -> Self {
        Self {
            inner: serde_json::ser::PrettyFormatter::new(),
        }
    }
}

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_array(writer)
    }

    fn end_array<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object(writer)
    }

    fn end_object<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W>(&mut self, writer: &mut W, first: bool) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object_key(writer, first)
    }

    fn end_object_key<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object_key(writer)
    }

    fn begin_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W>(&mut self, writer: &mut W) -> io::Result<()>
    where
        W: ?Sized + Write,
    {
        self.inner.end_object_value(writer)
    }
}

pub fn write_json<W: Write>(report: &SpectralReport, mut writer: W) -> io::Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(&mut writer, SciFormatter::new());
    report.serialize(&mut ser).map_err(io::Error::other)?;
    writeln!(writer)
}

pub const CSV_HEADER: &str =
    "epsilon,level,order,E_series,E_exact,abs_err,residual_conj,equiv_delta";

pub fn write_csv<W: Write>(report: &SpectralReport, mut writer: W) -> io::Result<()> {
    writeln!(writer, "{CSV_HEADER}")?;
    for r in &report.records {
        writeln!(
            writer,
            "{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.epsilon, r.level, r.order, r.e_series, r.e_exact, r.abs_err, r.residual_conj,
            r.equiv_delta
        )?;
    }
    Ok(())
}
