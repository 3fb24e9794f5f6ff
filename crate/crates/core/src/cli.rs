//! Command-line front end. Exit status: 0 when every certificate passes, 1 on
//! a mathematical failure, 2 on I/O or format errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::diag::{diagonalize, DiagonalizeOptions, FillOrder, ModuleOperator, SpectralDecomposition};
use crate::dyadic::{dyadic_coefficients, dyadic_grid, dyadic_operator};
use crate::error::Error;
use crate::io::{self, Encoding, OperatorFieldFile};
use crate::magnetic::{self, bloch_grid, best_convergent, gap_report, spectrum_sweep, MagneticModel};
use crate::module::tail_profile;
use crate::quadform::{kyfan_value, maximize_on_ball, MaximizeOptions, QuadraticForm};
use crate::tol;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CERTIFICATE: i32 = 1;
pub const EXIT_IO: i32 = 2;

/// Largest tolerated projection defect of `⟨x★, x★⟩`.
pub const PROJECTION_DEFECT: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "modspec", version, about = "Spectral decomposition of self-adjoint operators on Hilbert C*-modules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Fill {
    Ascending,
    Descending,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FileEncoding {
    Decimal,
    Base64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Diagonalize an operator field file and write the eigenvalue fields and certificates.
    Diagonalize {
        /// Operator field file.
        #[arg(required_unless_present = "example35", conflicts_with = "example35")]
        input: Option<PathBuf>,
        /// Use the dyadic example operator with this many levels instead of a file.
        #[arg(long, value_name = "K")]
        example35: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        target: f64,
        #[arg(long)]
        max_terms: Option<usize>,
        /// Residual tolerance for the exit status.
        #[arg(long, default_value_t = tol::RESIDUAL)]
        tol: f64,
        #[arg(long, value_enum, default_value_t = Fill::Ascending)]
        fill: Fill,
        /// Directory receiving eigenvalues.csv and report.txt.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Maximize the quadratic form of a positive operator on the unit ball.
    Quadform {
        input: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 0x5eed)]
        seed: u64,
    },
    /// Spectrum of the magnetic operator over a flux range, as CSV, with gap reports.
    Butterfly {
        /// Coefficient file of k,l,re,im records.
        coeff_file: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        theta_min: f64,
        #[arg(long, default_value_t = 0.95)]
        theta_max: f64,
        #[arg(long, default_value_t = 19)]
        steps: usize,
        #[arg(long, default_value_t = magnetic::Q_MAX)]
        q_max: u64,
        #[arg(long, default_value_t = 32)]
        osc_dim: usize,
        /// Bloch points per direction.
        #[arg(long, default_value_t = 2)]
        bloch: usize,
        /// CSV destination; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Gap report destination; stderr when absent.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reproduce the dyadic example and optionally write its operator file.
    Example35 {
        #[arg(long, default_value_t = 12)]
        levels: usize,
        #[arg(long)]
        write: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = FileEncoding::Decimal)]
        encoding: FileEncoding,
    },
    /// Gap inclusion check at the given flux values.
    Gaps {
        coeff_file: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = magnetic::Q_MAX)]
        q_max: u64,
        #[arg(long, default_value_t = 32)]
        osc_dim: usize,
        #[arg(long, default_value_t = 2)]
        bloch: usize,
    },
}

/// Failure carrying its exit status.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn io(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_IO, message: e.to_string() }
    }

    fn math(e: impl std::fmt::Display) -> Self {
        Failure { code: EXIT_CERTIFICATE, message: e.to_string() }
    }
}

/// Errors from loading inputs are format failures; the rest are mathematical.
fn classify(e: Error) -> Failure {
    match e {
        Error::Io(_)
        | Error::Parse { .. }
        | Error::InvalidGrid(_)
        | Error::ShapeMismatch(_)
        | Error::NotHermitian { .. }
        | Error::InvalidParameter(_) => Failure::io(e),
        _ => Failure::math(e),
    }
}

/// Applies `MODSPEC_THREADS` to the global rayon pool.
pub fn configure_threads(err: &mut dyn Write) {
    let Ok(v) = std::env::var("MODSPEC_THREADS") else { return };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                let _ = writeln!(err, "warning: MODSPEC_THREADS ignored: {e}");
            }
        }
        _ => {
            let _ = writeln!(err, "warning: MODSPEC_THREADS={v:?} is not a positive integer; ignored");
        }
    }
}

pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_IO;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_PASS;
        }
    };
    let result = match cli.command {
        Command::Diagonalize { input, example35, target, max_terms, tol, fill, output } => {
            cmd_diagonalize(input.as_deref(), example35, target, max_terms, tol, fill, output.as_deref(), out)
        }
        Command::Quadform { input, iters, tol, seed } => cmd_quadform(&input, iters, tol, seed, out),
        Command::Butterfly { coeff_file, theta_min, theta_max, steps, q_max, osc_dim, bloch, output, report } => {
            cmd_butterfly(
                &coeff_file,
                (theta_min, theta_max, steps),
                q_max,
                osc_dim,
                bloch,
                output.as_deref(),
                report.as_deref(),
                out,
                err,
            )
        }
        Command::Example35 { levels, write, encoding } => cmd_example35(levels, write.as_deref(), encoding, out),
        Command::Gaps { coeff_file, theta, q_max, osc_dim, bloch } => {
            cmd_gaps(&coeff_file, &theta, q_max, osc_dim, bloch, out, err)
        }
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn dyadic_example(levels: usize) -> Result<ModuleOperator, Failure> {
    let g = dyadic_grid(levels).map_err(Failure::io)?;
    dyadic_operator(&g, &dyadic_coefficients(levels)).map_err(Failure::io)
}

/// Comparison of the top term with the closed form, and the tail verdict of
/// its eigenvector.
fn example35_section(dec: &SpectralDecomposition, levels: usize) -> String {
    let b = dyadic_coefficients(levels);
    let mut s = format!("example35 levels {levels}\n");
    let Some(top) = dec.terms.first() else {
        s.push_str("no positive term\n");
        return s;
    };
    let dev = (0..levels).map(|k| (top.eigenvalue.fiber(k)[(0, 0)].re - b[k]).abs()).fold(0.0, f64::max);
    s.push_str(&format!("max |lambda_1 - b_k| {dev:.3e}\n"));
    let tails = tail_profile(&top.vector);
    let sup: Vec<String> = tails.sup_tails.iter().map(|t| format!("{t:.6}")).collect();
    s.push_str(&format!("sup tails {}\n", sup.join(" ")));
    s.push_str(&format!("tail-profile verdict: {}\n", tails.verdict));
    s
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagonalize(
    input: Option<&Path>,
    example35: Option<usize>,
    target: f64,
    max_terms: Option<usize>,
    tol: f64,
    fill: Fill,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32, Failure> {
    let k = match (input, example35) {
        (_, Some(levels)) => dyadic_example(levels)?,
        (Some(path), None) => io::read_operator_file(path).and_then(|f| f.to_operator()).map_err(classify)?,
        (None, None) => return Err(Failure::io("no input")),
    };
    let fill = match fill {
        Fill::Ascending => FillOrder::Ascending,
        Fill::Descending => FillOrder::Descending,
    };
    let opts = DiagonalizeOptions { target, max_terms, fill, ..Default::default() };
    let dec = diagonalize(&k, &opts).map_err(classify)?;
    let mut report = io::certificate_report(&dec);
    if let Some(levels) = example35 {
        report.push_str(&example35_section(&dec, levels));
    }
    let ok = dec.certificates.passed() && dec.certificates.max_residual <= tol;
    if let Some(dir) = output {
        fs::create_dir_all(dir).map_err(Failure::io)?;
        let csv = fs::File::create(dir.join("eigenvalues.csv")).map_err(Failure::io)?;
        io::write_eigenvalues_csv(std::io::BufWriter::new(csv), &dec).map_err(Failure::io)?;
        fs::write(dir.join("report.txt"), &report).map_err(Failure::io)?;
    }
    out.write_all(report.as_bytes()).map_err(Failure::io)?;
    Ok(if ok { EXIT_PASS } else { EXIT_CERTIFICATE })
}

fn cmd_quadform(input: &Path, iters: usize, tol: f64, seed: u64, out: &mut dyn Write) -> Result<i32, Failure> {
    let k = io::read_operator_file(input).and_then(|f| f.to_operator()).map_err(classify)?;
    let form = QuadraticForm::new(k);
    let m = maximize_on_ball(&form, &MaximizeOptions { iters, tol, seed }).map_err(Failure::math)?;
    let ky = kyfan_value(&form).map_err(Failure::math)?;
    let diff = m.value - ky.value;
    let w = |out: &mut dyn Write, s: String| out.write_all(s.as_bytes()).map_err(Failure::io);
    w(out, format!("Q* {:.12e}\n", m.value))?;
    w(out, format!("tau(lambda_1) {:.12e}\n", ky.value))?;
    w(out, format!("difference {diff:.3e}\n"))?;
    w(out, format!("projection defect {:.3e}\n", m.projection_defect))?;
    w(out, format!("residual {:.3e} after {} iterations\n", m.residual, m.iterations))?;
    if !ky.separated {
        w(out, "warning: leading eigenvalue fields are not separated\n".to_string())?;
    }
    let ok = m.certified && m.projection_defect <= PROJECTION_DEFECT;
    w(out, format!("certificates {}\n", if ok { "PASS" } else { "FAIL" }))?;
    Ok(if ok { EXIT_PASS } else { EXIT_CERTIFICATE })
}

/// Evenly spaced flux values replaced by their best convergents with
/// denominator at most `q_max`, without repeats.
pub fn snapped_thetas(min: f64, max: f64, steps: usize, q_max: u64) -> (Vec<f64>, Vec<String>) {
    let mut thetas: Vec<(u64, u64)> = Vec::new();
    let mut notices = Vec::new();
    for i in 0..steps {
        let t = if steps == 1 { min } else { min + (max - min) * i as f64 / (steps - 1) as f64 };
        match best_convergent(t, q_max) {
            Some(pq) => {
                if !thetas.iter().any(|&(p, q)| p * pq.1 == q * pq.0) {
                    thetas.push(pq);
                }
            }
            None => notices.push(format!("theta = {t}: no convergent with q <= {q_max}")),
        }
    }
    thetas.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)));
    (thetas.into_iter().map(|(p, q)| p as f64 / q as f64).collect(), notices)
}

fn gap_lines(
    coeffs: &magnetic::Coefficients,
    thetas: &[f64],
    q_max: u64,
    osc_dim: usize,
    bloch: usize,
    notices: &mut Vec<String>,
) -> Result<(String, bool), Failure> {
    let mut report = String::new();
    let mut failed = false;
    for &theta in thetas {
        match MagneticModel::new(theta, osc_dim, coeffs.clone(), bloch_grid(bloch, bloch), q_max) {
            Ok(model) => {
                let g = gap_report(&model);
                failed |= g.applicable && !g.passed();
                report.push_str(&g.summary());
                report.push('\n');
            }
            Err(e @ Error::DenominatorOverflow { .. }) => notices.push(e.to_string()),
            Err(e) => return Err(classify(e)),
        }
    }
    Ok((report, failed))
}

#[allow(clippy::too_many_arguments)]
fn cmd_butterfly(
    coeff_file: &Path,
    range: (f64, f64, usize),
    q_max: u64,
    osc_dim: usize,
    bloch: usize,
    output: Option<&Path>,
    report_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    let (min, max, steps) = range;
    if !(0.0 < min && min <= max && max < 1.0) || steps == 0 || bloch == 0 || osc_dim == 0 {
        return Err(Failure::io("need 0 < theta_min <= theta_max < 1 and positive steps, bloch, osc_dim"));
    }
    let coeffs = io::read_coefficients(coeff_file).map_err(classify)?;
    let (thetas, mut notices) = snapped_thetas(min, max, steps, q_max);
    let Some(&first) = thetas.first() else {
        for n in &notices {
            let _ = writeln!(err, "warning: {n}");
        }
        return Err(Failure::io("no flux value survives snapping"));
    };
    let model = MagneticModel::new(first, osc_dim, coeffs.clone(), bloch_grid(bloch, bloch), q_max).map_err(classify)?;
    let sweep = spectrum_sweep(&model, &thetas, q_max);
    notices.extend(sweep.notices.iter().cloned());
    match output {
        Some(p) => {
            let f = fs::File::create(p).map_err(Failure::io)?;
            io::write_sweep_csv(std::io::BufWriter::new(f), &sweep).map_err(Failure::io)?;
        }
        None => io::write_sweep_csv(&mut *out, &sweep).map_err(Failure::io)?,
    }
    let (report, failed) = gap_lines(&coeffs, &thetas, q_max, osc_dim, bloch, &mut notices)?;
    match report_path {
        Some(p) => fs::write(p, &report).map_err(Failure::io)?,
        None => err.write_all(report.as_bytes()).map_err(Failure::io)?,
    }
    for n in &notices {
        let _ = writeln!(err, "warning: {n}");
    }
    Ok(if failed { EXIT_CERTIFICATE } else { EXIT_PASS })
}

fn cmd_gaps(
    coeff_file: &Path,
    thetas: &[f64],
    q_max: u64,
    osc_dim: usize,
    bloch: usize,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, Failure> {
    if bloch == 0 || osc_dim == 0 {
        return Err(Failure::io("bloch and osc_dim must be positive"));
    }
    let coeffs = io::read_coefficients(coeff_file).map_err(classify)?;
    let mut notices = Vec::new();
    let (report, failed) = gap_lines(&coeffs, thetas, q_max, osc_dim, bloch, &mut notices)?;
    out.write_all(report.as_bytes()).map_err(Failure::io)?;
    for n in &notices {
        let _ = writeln!(err, "warning: {n}");
    }
    Ok(if failed { EXIT_CERTIFICATE } else { EXIT_PASS })
}

fn cmd_example35(levels: usize, write: Option<&Path>, encoding: FileEncoding, out: &mut dyn Write) -> Result<i32, Failure> {
    let k = dyadic_example(levels)?;
    if let Some(p) = write {
        let enc = match encoding {
            FileEncoding::Decimal => Encoding::Decimal,
            FileEncoding::Base64 => Encoding::Base64,
        };
        io::write_operator_file(p, &OperatorFieldFile::from_operator(&k, enc)).map_err(Failure::io)?;
    }
    let dec = diagonalize(&k, &DiagonalizeOptions::default()).map_err(classify)?;
    let mut report = io::certificate_report(&dec);
    report.push_str(&example35_section(&dec, levels));
    out.write_all(report.as_bytes()).map_err(Failure::io)?;
    Ok(if dec.certificates.passed() { EXIT_PASS } else { EXIT_CERTIFICATE })
}
