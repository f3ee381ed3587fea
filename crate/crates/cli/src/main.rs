//! `perturb` — perturbative spectra of finite quantum systems, solved two
//! independent ways and cross-checked against exact diagonalization.
//!
//! Subcommands:
//! - `solve`      expand, diagonalize, and emit a JSON or CSV report
//! - `verify`     run the full invariant suite on a problem plus random cases
//! - `resonances` scan the unperturbed energies for integer resonances
//! - `sweep`      tabulate series-vs-exact error across an ε grid
//!
//! Exit codes: 0 success, 1 validation or property failure, 2 input parse
//! error. Output is deterministic: identical inputs (and `--seed`) produce
//! byte-identical reports.

mod input;
mod report;

use clap::{Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use perturb_core::classical::resonance_scan;
use perturb_core::oracle::{exact_spectrum, match_eigenpairs};
use perturb_core::verify::run_property_suite;
use perturb_core::vvp::vvp_expand;

use input::{load_problem, Failure};

#[derive(Parser)]
#[command(
    name = "perturb",
    version,
    about = "Dual-engine perturbation theory for finite quantum spectra"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Expand to max_order, diagonalize exactly, and report energies with
    /// residual and cross-engine checks
    Solve {
        /// Problem file (JSON)
        file: PathBuf,
        /// Report encoding
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Write the report to this path instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every library invariant on the given problem plus seeded random
    /// problems; exits nonzero if any property fails
    Verify {
        /// Problem file (JSON)
        file: PathBuf,
        /// Seed for the random-case generator
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Random cases per property (0 leaves only the file's problem)
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
    /// List integer vectors k with k·E⁰ ≈ 0 up to a given order
    Resonances {
        /// Problem file (JSON)
        file: PathBuf,
        /// Highest Σ|kₙ| to scan (minimum 2)
        #[arg(long)]
        l: usize,
        /// Bound on each |kₙ| (defaults to --l)
        #[arg(long)]
        kbound: Option<usize>,
    },
    /// Emit CSV of worst-level truncation error against ε for slope plots
    Sweep {
        /// Problem file (JSON)
        file: PathBuf,
        /// Geometric grid START:STOP:POINTS (positive endpoints)
        #[arg(long = "eps-grid")]
        eps_grid: String,
        /// Truncation order (defaults to the file's max_order)
        #[arg(long)]
        order: Option<usize>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Solve { file, format, out } => cmd_solve(&file, format, out.as_deref()),
        Command::Verify { file, seed, cases } => cmd_verify(&file, seed, cases),
        Command::Resonances { file, l, kbound } => cmd_resonances(&file, l, kbound),
        Command::Sweep {
            file,
            eps_grid,
            order,
        } => cmd_sweep(&file, &eps_grid, order),
    }
}

fn cmd_solve(
    file: &std::path::Path,
    format: Format,
    out: Option<&std::path::Path>,
) -> Result<ExitCode, Failure> {
    let loaded = load_problem(file)?;
    let spectral = report::build_report(&loaded.problem, &loaded.epsilons, loaded.resonance_tol)?;

    let emit = |writer: &mut dyn Write| -> std::io::Result<()> {
        match format {
            Format::Json => report::write_json(&spectral, writer),
            Format::Csv => report::write_csv(&spectral, writer),
        }
    };
    match out {
        Some(path) => {
            let mut writer = BufWriter::new(
                File::create(path)
                    .map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?,
            );
            emit(&mut writer).map_err(|e| Failure::Run(e.to_string()))?;
            writer.flush().map_err(|e| Failure::Run(e.to_string()))?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut writer = BufWriter::new(stdout.lock());
            emit(&mut writer).map_err(|e| Failure::Run(e.to_string()))?;
            writer.flush().map_err(|e| Failure::Run(e.to_string()))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(file: &std::path::Path, seed: u64, cases: usize) -> Result<ExitCode, Failure> {
    let loaded = load_problem(file)?;
    if cases == 0 {
        eprintln!("warning: --cases 0 skips random coverage; only the supplied problem is checked");
    }
    let suite = run_property_suite(Some(&loaded.problem), seed, cases)?;
    for check in &suite.checks {
        println!(
            "property {:<34} {}  worst {:>12.3e}  tolerance {:>9.1e}  cases {}",
            check.name,
            if check.passed { "PASS" } else { "FAIL" },
            check.worst,
            check.tolerance,
            check.cases,
        );
    }
    let passed = suite.checks.iter().filter(|c| c.passed).count();
    let total = suite.checks.len();
    println!(
        "verification: {passed}/{total} properties passed (seed {seed}, cases {cases})"
    );
    if passed == total {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn cmd_resonances(
    file: &std::path::Path,
    l: usize,
    kbound: Option<usize>,
) -> Result<ExitCode, Failure> {
    if l < 2 {
        return Err(Failure::Parse(
            "--l: minimum order for a resonance scan is 2".into(),
        ));
    }
    let loaded = load_problem(file)?;
    let scan = resonance_scan(loaded.problem.e0(), l, kbound, loaded.resonance_tol)?;
    println!(
        "resonance scan: {} levels, order <= {l}, |k_n| <= {}, tolerance {:.3e}",
        loaded.problem.dim(),
        kbound.unwrap_or(l).min(l),
        scan.tolerance
    );
    if scan.resonances.is_empty() {
        println!("none");
    } else {
        for r in &scan.resonances {
            let k: Vec<String> = r.k.iter().map(|v| v.to_string()).collect();
            println!(
                "k = ({})   order {}   k.E0 = {:.3e}{}",
                k.join(", "),
                r.order,
                r.dot,
                if r.mode_difference {
                    "   [mode difference]"
                } else {
                    ""
                }
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    file: &std::path::Path,
    eps_grid: &str,
    order: Option<usize>,
) -> Result<ExitCode, Failure> {
    let loaded = load_problem(file)?;
    let p = &loaded.problem;
    let order = order.unwrap_or(p.max_order());
    if order > p.max_order() {
        return Err(Failure::Run(format!(
            "--order {order} exceeds the file's max_order {}",
            p.max_order()
        )));
    }
    let grid = parse_grid(eps_grid)?;
    let sol = vvp_expand(p)?;

    let stdout = std::io::stdout();
    let mut w = BufWriter::new(stdout.lock());
    writeln!(w, "epsilon,order,max_abs_err").map_err(|e| Failure::Run(e.to_string()))?;
    for &eps in &grid {
        let exact = exact_spectrum(p, eps)?;
        let matched = match_eigenpairs(&sol.energies(eps), &sol.eigenvectors(eps), &exact)?;
        let series = sol.energies_at_order(eps, order)?;
        let mut err = 0.0_f64;
        for (level, e_series) in series.iter().enumerate() {
            err = err.max((e_series - exact.eigenvalues[matched.permutation[level]]).abs());
        }
        writeln!(w, "{eps:.16e},{order},{err:.16e}").map_err(|e| Failure::Run(e.to_string()))?;
    }
    w.flush().map_err(|e| Failure::Run(e.to_string()))?;
    Ok(ExitCode::SUCCESS)
}

/// Parse `START:STOP:POINTS` into a geometric grid from START to STOP.
fn parse_grid(text: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = text.split(':').collect();
    let parse_err = || Failure::Parse(format!("--eps-grid: expected START:STOP:POINTS, got `{text}`"));
    if parts.len() != 3 {
        return Err(parse_err());
    }
    let start: f64 = parts[0].parse().map_err(|_| parse_err())?;
    let stop: f64 = parts[1].parse().map_err(|_| parse_err())?;
    let points: usize = parts[2].parse().map_err(|_| parse_err())?;
    if points == 0 {
        return Err(Failure::Parse("--eps-grid: POINTS must be at least 1".into()));
    }
    if start <= 0.0 || stop <= 0.0 {
        return Err(Failure::Parse(
            "--eps-grid: endpoints must be positive for a geometric grid".into(),
        ));
    }
    if points == 1 {
        return Ok(vec![start]);
    }
    let ratio = (stop / start).powf(1.0 / (points - 1) as f64);
    Ok((0..points).map(|i| start * ratio.powi(i as i32)).collect())
}
