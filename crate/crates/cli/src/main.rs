#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod data;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gini_cov::efficiency::AreConfig;
use gini_cov::elliptical::parse_family;
use gini_cov::influence::IFCurve;
use gini_cov::sim::{run_table2, Table2Config};
use gini_cov::{
    CConvention, EllipticalSpec, Error, EstimatorConfig, EstimatorKind, FixedPointReport, Sample,
    ScaleKind, Seed,
};
use nalgebra::DMatrix;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gini-cov",
    version,
    about = "Gini covariance and robust scatter estimation"
)]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a scatter matrix from CSV data.
    Estimate(EstimateArgs),
    /// Estimate and normalise to trace d.
    Shape(EstimateArgs),
    /// Leave-one-out spatial ranks of every row.
    Rank(InputArgs),
    /// Mean pairwise Euclidean distance.
    Gmd(InputArgs),
    /// Draw from an elliptical distribution.
    Sample(SampleArgs),
    /// Tabulate influence function coefficients alpha(r) and beta(r).
    IfCurves(IfArgs),
    /// Asymptotic relative efficiencies.
    Are(TableArgs),
    /// Finite-sample relative efficiencies.
    Fre(TableArgs),
}

#[derive(Args)]
struct InputArgs {
    /// CSV file, or `-` for standard input.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum EstimatorName {
    Cov,
    Gcm,
    Sscm,
    Rcm,
    TrGini,
    Kotz,
    Tyler,
    Duembgen,
    Mrcm,
    MrcmQn,
}

impl EstimatorName {
    fn label(self) -> String {
        self.to_possible_value()
            .map(|v| v.get_name().to_string())
            .unwrap_or_default()
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    io: InputArgs,
    #[arg(long, value_enum)]
    estimator: EstimatorName,
    /// `auto`, or comma separated coordinates (required for kotz and tyler).
    #[arg(long, default_value = "auto")]
    location: String,
    /// `normal`, `none` or a positive constant c.
    #[arg(long, default_value = "normal")]
    c_convention: String,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

#[derive(Args)]
struct SampleArgs {
    /// normal, t or kotz.
    #[arg(long)]
    family: String,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    d: usize,
    #[arg(long)]
    n: usize,
    /// Comma separated location (default 0).
    #[arg(long)]
    mu: Option<String>,
    /// Row-major comma separated scatter matrix (default I).
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct IfArgs {
    /// Comma separated list from cov, tyler, kotz, tr-gini.
    #[arg(long, value_delimiter = ',', default_value = "cov,tyler,kotz,tr-gini")]
    estimator: Vec<EstimatorName>,
    #[arg(long, default_value = "normal")]
    family: String,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 10.0)]
    rmax: f64,
    #[arg(long, default_value_t = 101)]
    points: usize,
    /// Monte Carlo draws for the TR-Gini coefficients.
    #[arg(long, default_value_t = 100_000)]
    mc: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TableArgs {
    /// JSON configuration; the desk default grid when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; written after the rendered table on stdout if omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    NotConverged,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::NotConverged => 3,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Invalid arguments are usage errors; everything else is about the data.
fn lib_err(e: Error) -> Failure {
    match e {
        Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
        _ => Failure::Data(e.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Estimate(a) => cmd_estimate(&a, false),
        Command::Shape(a) => cmd_estimate(&a, true),
        Command::Rank(a) => cmd_rank(&a),
        Command::Gmd(a) => cmd_gmd(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::IfCurves(a) => cmd_if_curves(&a),
        Command::Are(a) => cmd_are(&a),
        Command::Fre(a) => cmd_fre(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Data(m) => eprintln!("error: {m}"),
                Failure::NotConverged => eprintln!("error: iteration did not converge"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Failure::Usage(format!("bad {what} value '{t}'")))
        })
        .collect()
}

fn parse_c(s: &str) -> Result<CConvention, Failure> {
    match s {
        "normal" => Ok(CConvention::NormalConstant),
        "none" => Ok(CConvention::None),
        v => match v.parse::<f64>() {
            Ok(c) if c > 0.0 && c.is_finite() => Ok(CConvention::Explicit(c)),
            _ => Err(Failure::Usage(format!(
                "--c-convention must be normal, none or a positive number, got '{v}'"
            ))),
        },
    }
}

#[derive(Serialize)]
struct MatrixJson {
    estimator: String,
    d: usize,
    n: usize,
    matrix: Vec<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    (0..d * d).map(|k| m[(k / d, k % d)]).collect()
}

fn cmd_estimate(a: &EstimateArgs, shape: bool) -> Result<(), Failure> {
    let config = EstimatorConfig::default()
        .with_tolerance(a.tol)
        .with_max_iter(a.max_iter)
        .with_c(parse_c(&a.c_convention)?);
    config.validate().map_err(lib_err)?;
    let needs_location = matches!(a.estimator, EstimatorName::Kotz | EstimatorName::Tyler);
    let location = if a.location == "auto" {
        if needs_location {
            return Err(Failure::Usage(format!(
                "{} requires an explicit --location (the true centre); auto is not supported",
                a.estimator.label()
            )));
        }
        None
    } else {
        if !needs_location {
            return Err(Failure::Usage(format!(
                "{} does not take a location",
                a.estimator.label()
            )));
        }
        Some(parse_list(&a.location, "location")?)
    };
    let sample = data::read_sample(&a.io.input).map_err(Failure::Data)?;
    if let Some(loc) = &location {
        if loc.len() != sample.d() {
            return Err(Failure::Usage(format!(
                "location has {} coordinates, data has {}",
                loc.len(),
                sample.d()
            )));
        }
    }
    let (matrix, iterations, residual, converged) =
        fit(a.estimator, &sample, location.as_deref(), &config)?;
    let matrix = if shape {
        let tr = matrix.trace();
        if !(tr > 0.0) {
            return Err(lib_err(Error::ZeroTrace));
        }
        &matrix * (sample.d() as f64 / tr)
    } else {
        matrix
    };
    let json = MatrixJson {
        estimator: a.estimator.label(),
        d: sample.d(),
        n: sample.n(),
        matrix: row_major(&matrix),
        iterations,
        residual,
        converged,
    };
    let mut out = data::output(a.io.output.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &json).map_err(|e| Failure::Data(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    if converged {
        Ok(())
    } else {
        Err(Failure::NotConverged)
    }
}

fn fit(
    name: EstimatorName,
    sample: &Sample,
    location: Option<&[f64]>,
    config: &EstimatorConfig,
) -> Result<(DMatrix<f64>, usize, f64, bool), Failure> {
    let direct = |m: gini_cov::Result<gini_cov::ScatterMatrix>| {
        m.map(|s| (s.into_matrix(), 0, 0.0, true)).map_err(lib_err)
    };
    let iterated = |r: gini_cov::Result<FixedPointReport>| {
        r.map(|r| {
            (
                r.estimate.into_matrix(),
                r.iterations,
                r.final_residual,
                r.converged,
            )
        })
        .map_err(lib_err)
    };
    let loc = || location.expect("checked by caller");
    match name {
        EstimatorName::Cov => direct(gini_cov::sample_covariance(sample)),
        EstimatorName::Gcm => direct(gini_cov::sample_gcm(sample)),
        EstimatorName::Sscm => direct(gini_cov::sample_sscm(sample)),
        EstimatorName::Rcm => direct(gini_cov::sample_rcm(sample)),
        EstimatorName::Mrcm => direct(gini_cov::mrcm(sample, ScaleKind::Mad)),
        EstimatorName::MrcmQn => direct(gini_cov::mrcm(sample, ScaleKind::Qn)),
        EstimatorName::TrGini => iterated(gini_cov::tr_gini(sample, config)),
        EstimatorName::Duembgen => iterated(gini_cov::duembgen(sample, config)),
        EstimatorName::Kotz => iterated(gini_cov::kotz_m(sample, loc(), config)),
        EstimatorName::Tyler => iterated(gini_cov::tyler_m(sample, loc(), config)),
    }
}

fn cmd_rank(a: &InputArgs) -> Result<(), Failure> {
    let sample = data::read_sample(&a.input).map_err(Failure::Data)?;
    let ranks = gini_cov::spatial::sample_ranks(&sample).map_err(lib_err)?;
    let mut out = data::output(a.output.as_deref())?;
    data::write_rows(&mut out, ranks.iter().map(|r| r.as_slice()))?;
    out.flush()?;
    Ok(())
}

fn cmd_gmd(a: &InputArgs) -> Result<(), Failure> {
    let sample = data::read_sample(&a.input).map_err(Failure::Data)?;
    let g = gini_cov::multivariate_gmd(&sample).map_err(lib_err)?;
    let mut out = data::output(a.output.as_deref())?;
    writeln!(out, "{g:.16e}")?;
    out.flush()?;
    Ok(())
}

fn cmd_sample(a: &SampleArgs) -> Result<(), Failure> {
    let usage = |e: Error| Failure::Usage(e.to_string());
    let family = parse_family(&a.family, a.nu).map_err(usage)?;
    if a.d == 0 {
        return Err(Failure::Usage("--d must be positive".into()));
    }
    if let Some(nu) = family.nu() {
        if nu <= 1.0 {
            eprintln!(
                "warning: t({nu}) has no finite first moment; pairwise estimators such as tr-gini are not \
                 consistent for this law"
            );
        }
    }
    let mu = match &a.mu {
        Some(s) => parse_list(s, "mu")?,
        None => vec![0.0; a.d],
    };
    let sigma = match &a.sigma {
        Some(s) => {
            let v = parse_list(s, "sigma")?;
            if v.len() != a.d * a.d {
                return Err(Failure::Usage(format!(
                    "--sigma needs {} values, got {}",
                    a.d * a.d,
                    v.len()
                )));
            }
            DMatrix::from_row_slice(a.d, a.d, &v)
        }
        None => DMatrix::identity(a.d, a.d),
    };
    let spec = EllipticalSpec::new(family, mu, sigma).map_err(usage)?;
    let sample = spec.draw(a.n, Seed(a.seed)).map_err(usage)?;
    let mut out = data::output(a.output.as_deref())?;
    data::write_rows(&mut out, sample.rows())?;
    out.flush()?;
    Ok(())
}

fn cmd_if_curves(a: &IfArgs) -> Result<(), Failure> {
    let family = parse_family(&a.family, a.nu).map_err(lib_err)?;
    if a.points < 2 || !(a.rmax > 0.0) {
        return Err(Failure::Usage("need --points >= 2 and --rmax > 0".into()));
    }
    let grid: Vec<f64> = (0..a.points)
        .map(|i| a.rmax * i as f64 / (a.points - 1) as f64)
        .collect();
    let mut out = data::output(a.output.as_deref())?;
    for (i, &name) in a.estimator.iter().enumerate() {
        let kind = match name {
            EstimatorName::Cov => EstimatorKind::Cov,
            EstimatorName::Tyler => EstimatorKind::Tyler,
            EstimatorName::Kotz => EstimatorKind::KotzM,
            EstimatorName::TrGini => EstimatorKind::TrGini,
            other => {
                return Err(Failure::Usage(format!(
                    "no influence curve for {}",
                    other.label()
                )))
            }
        };
        let curve =
            IFCurve::compute(kind, family, a.d, &grid, a.mc, Seed(a.seed)).map_err(lib_err)?;
        curve.write_csv(&mut out, i == 0)?;
    }
    out.flush()?;
    Ok(())
}

fn read_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&Path>,
) -> Result<T, Failure> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("bad config {}: {e}", p.display())))
        }
    }
}

fn emit_table(
    rendered: &str,
    output: Option<&Path>,
    csv: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let mut stdout = std::io::stdout().lock();
    write!(stdout, "{rendered}")?;
    match output {
        Some(p) => {
            let mut out = data::output(Some(p))?;
            csv(&mut out)?;
            out.flush()?;
        }
        None => {
            writeln!(stdout)?;
            csv(&mut stdout)?;
        }
    }
    stdout.flush()?;
    Ok(())
}

fn cmd_are(a: &TableArgs) -> Result<(), Failure> {
    let config: AreConfig = read_config(a.config.as_deref())?;
    let report = config.run().map_err(|e| Failure::Usage(e.to_string()))?;
    emit_table(&report.render(), a.output.as_deref(), |mut w| {
        report.write_csv(&mut w)
    })
}

fn cmd_fre(a: &TableArgs) -> Result<(), Failure> {
    let config: Table2Config = read_config(a.config.as_deref())?;
    let report = run_table2(&config).map_err(|e| Failure::Usage(e.to_string()))?;
    emit_table(&report.render(), a.output.as_deref(), |mut w| {
        report.write_csv(&mut w)
    })
}
