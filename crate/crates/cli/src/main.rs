//! `qddlab` command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage, configuration and I/O errors,
//! 3 for numerical failures.

mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rug::Float;
use serde::Serialize;
use thiserror::Error;

use qddlab::analysis::{estimate_suppression_order, AnalysisError, FitReport, SlopeFit};
use qddlab::engine::{
    comparison_csv, run_comparison, run_experiment, EngineError, RunOptions, SequenceSpec,
    SweepVariable,
};
use qddlab::hpmath::{to_sci_string, HpError, Precision};
use qddlab::model::ModelError;
use qddlab::sequences::{PulseAxis, PulseSequence, Scheme, SequenceError};

use config::{Overrides, RunConfig};
use output::{ensure_dir, write_file, write_json, ManifestBuilder};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn math_code(e: &HpError) -> u8 {
    match e {
        HpError::Parse(_) | HpError::PrecisionTooLow(_) => 2,
        _ => 3,
    }
}

fn engine_code(e: &EngineError) -> u8 {
    match e {
        EngineError::Math(m) => math_code(m),
        EngineError::Model(ModelError::Math(m)) => math_code(m),
        EngineError::InvalidState(_) => 3,
        EngineError::Point { source, .. } => engine_code(source),
        _ => 2,
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Engine(e) => engine_code(e),
            CliError::Analysis(AnalysisError::Engine(e)) => engine_code(e),
            CliError::Analysis(AnalysisError::TooFewPoints(_))
            | CliError::Analysis(AnalysisError::NonPositive(..)) => 3,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "qddlab", version, about = "Quadratic dynamical decoupling simulator")]
struct Cli {
    /// output directory
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// bath seed, overrides the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// working precision in decimal digits (flag > config > QDDLAB_DIGITS > 120)
    #[arg(long, global = true)]
    digits: Option<u32>,
    /// worker threads; 1 runs sequentially
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the pulse schedule of a built-in scheme as `time,axis` CSV
    Sequence(SequenceArgs),
    /// Run a parameter sweep described by a JSON config
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare schemes at fixed coupling
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Estimate the suppression order from a J sweep in regime R1
    CheckOrder(CheckOrderArgs),
}

#[derive(Args, Debug)]
struct SequenceArgs {
    #[arg(long)]
    scheme: String,
    /// outer order (QDD only); defaults to n
    #[arg(short)]
    m: Option<usize>,
    #[arg(short)]
    n: usize,
    /// total duration
    #[arg(short = 'T', default_value = "1")]
    total: String,
    /// UDD pulse axis
    #[arg(long, default_value = "X")]
    axis: String,
    /// spectral bound of the bath operators, for the convergence check
    #[arg(long)]
    lambda: Option<String>,
}

#[derive(Args, Debug)]
struct CheckOrderArgs {
    /// sweep settings; defaults to a J sweep over [1e-7, 1e-5] at beta = 1e-8
    #[arg(long)]
    config: Option<PathBuf>,
    /// external `time,axis` schedule
    #[arg(long, conflicts_with_all = ["scheme", "m", "n"])]
    sequence: Option<PathBuf>,
    /// end of the imported schedule; defaults to the last pulse time
    #[arg(short = 'T', requires = "sequence")]
    total: Option<String>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(short)]
    m: Option<usize>,
    #[arg(short)]
    n: Option<usize>,
}

/// Reads a `time,axis` schedule; without `total`, the last pulse closes it.
pub fn import_sequence(
    text: &str,
    total: Option<Float>,
    prec: Precision,
) -> Result<PulseSequence, CliError> {
    let total = match total {
        Some(t) => t,
        None => {
            let last = text
                .lines()
                .map(str::trim)
                .rfind(|l| !l.is_empty())
                .and_then(|l| l.split(',').next())
                .unwrap_or("");
            prec.parse(last.trim()).map_err(|_| {
                CliError::Usage("cannot infer the total time from the schedule; pass -T".into())
            })?
        }
    };
    Ok(PulseSequence::from_csv(text, &total, prec)?)
}

fn parse_real(prec: Precision, what: &str, text: &str) -> Result<Float, CliError> {
    prec.parse(text)
        .map_err(|_| CliError::Usage(format!("{what}: cannot parse {text:?} as a number")))
}

fn run_options(cli: &Cli) -> Result<RunOptions, CliError> {
    if cli.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    Ok(RunOptions { jobs: cli.jobs })
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        seed: cli.seed,
        digits: cli.digits,
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn sequence(cli: &Cli, args: &SequenceArgs) -> Result<(), CliError> {
    let prec = Precision::new(config::resolve_digits(cli.digits, None)?)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let scheme: Scheme = args.scheme.parse()?;
    let axis: PulseAxis = args.axis.parse()?;
    let m = args.m.unwrap_or(args.n);
    let total = parse_real(prec, "-T", &args.total)?;
    if total <= 0 {
        return Err(CliError::Usage("-T must be positive".into()));
    }
    let seq = SequenceSpec::Scheme {
        scheme,
        m,
        n: args.n,
        axis,
    }
    .build(prec)?;
    let nominal = scheme.nominal_pulses(m, args.n, axis, prec)?;

    ensure_dir(&cli.out)?;
    let name = match scheme {
        Scheme::Qdd => format!("qdd_m{m}_n{}.csv", args.n),
        s => format!("{s}_n{}.csv", args.n),
    };
    let path = cli.out.join(name);
    write_file(&path, &seq.to_csv(&total))?;

    let duration = seq.total_duration();
    println!("sequence            {}", seq.label());
    println!("nominal pulses      {nominal}");
    println!("physical pulses     {}", seq.pulse_count());
    println!("intervals           {}", seq.interval_count());
    println!("normalized duration {}", to_sci_string(&duration, 12));
    if let Some(lambda) = &args.lambda {
        let lambda = parse_real(prec, "--lambda", lambda)?;
        let bound = Float::with_val(prec.bits(), &lambda * &total);
        let verdict = if bound < 1 { "converges" } else { "may diverge" };
        println!("lambda T            {} ({verdict})", to_sci_string(&bound, 6));
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn sweep(cli: &Cli, config_path: &Path) -> Result<(), CliError> {
    let manifest = ManifestBuilder::start("sweep");
    let opts = run_options(cli)?;
    let resolved = config::load(config_path)?.resolve(overrides(cli), &config_dir(config_path))?;
    let sweep = resolved
        .sweep
        .clone()
        .ok_or_else(|| CliError::Config {
            path: "sweep".into(),
            message: "a sweep is required".into(),
        })?;
    let orders = resolved.orders();
    let label = resolved
        .scheme
        .map(|s| s.name().to_string())
        .unwrap_or_else(|| "external".into());

    let runs: Vec<(String, String, usize)> = if sweep.variable == SweepVariable::N {
        vec![(format!("{label}_n.csv"), label.clone(), orders[0])]
    } else if resolved.external.is_some() {
        vec![(format!("{label}.csv"), label.clone(), 0)]
    } else {
        orders
            .iter()
            .map(|&n| (format!("{label}_n{n}.csv"), format!("{label} n={n}"), n))
            .collect()
    };

    ensure_dir(&cli.out)?;
    let mut outputs = Vec::new();
    let mut series = Vec::new();
    for (file, title, n) in runs {
        let result = run_experiment(&resolved.experiment(n), opts)?;
        let diverging = result.points.iter().filter(|p| !p.converged).count();
        if diverging > 0 {
            eprintln!(
                "warning: {title}: {diverging} of {} points are outside the convergence region",
                result.points.len()
            );
        }
        let path = cli.out.join(&file);
        write_file(&path, &result.to_csv())?;
        println!("wrote {}", path.display());
        series.push((title, path.clone()));
        outputs.push(path);
    }

    let crossing = match sweep.variable {
        SweepVariable::J => Some(resolved.params.beta.to_f64()),
        SweepVariable::Beta => Some(resolved.params.j.to_f64()),
        SweepVariable::N => None,
    };
    let script = cli.out.join("sweep.gp");
    write_file(&script, &output::sweep_script(sweep.variable, &series, crossing))?;
    outputs.push(script);
    let manifest_path = cli.out.join("manifest.json");
    let m = manifest.finish(
        resolved.echo(),
        Some(resolved.bath.seed),
        resolved.precision.digits(),
        cli.jobs,
        &outputs,
    );
    write_json(&manifest_path, &m)?;
    Ok(())
}

fn compare(cli: &Cli, config_path: Option<&Path>) -> Result<(), CliError> {
    let manifest = ManifestBuilder::start("compare");
    let opts = run_options(cli)?;
    let (cfg, dir) = match config_path {
        Some(p) => (config::load(p)?, config_dir(p)),
        None => {
            let c = RunConfig {
                n: config::Orders::Many(vec![0, 1, 2, 3, 4]),
                ..RunConfig::default()
            };
            (c, PathBuf::new())
        }
    };
    let resolved = cfg.resolve(overrides(cli), &dir)?;
    if resolved.external.is_some() {
        return Err(CliError::Config {
            path: "scheme".into(),
            message: "compare works on built-in schemes".into(),
        });
    }
    let schemes = resolved
        .config
        .schemes
        .clone()
        .unwrap_or_else(|| Scheme::ALL.to_vec());
    let orders = resolved.orders();
    let mut entries = Vec::new();
    for &scheme in &schemes {
        if scheme == Scheme::Free {
            entries.push((scheme, 0));
            continue;
        }
        entries.extend(orders.iter().filter(|&&n| n > 0).map(|&n| (scheme, n)));
    }
    if entries.is_empty() {
        return Err(CliError::Config {
            path: "schemes".into(),
            message: "nothing to compare".into(),
        });
    }

    let mut base = resolved.experiment(orders.first().copied().unwrap_or(1));
    base.sweep = None;
    let rows = run_comparison(&base, &entries, opts)?;
    for row in &rows {
        println!(
            "{:>5} n={} pulses {:>4}  D = {}",
            row.scheme,
            row.n,
            row.point.pulse_count,
            to_sci_string(&row.point.mean, 6)
        );
    }
    ensure_dir(&cli.out)?;
    let csv = cli.out.join("comparison.csv");
    write_file(&csv, &comparison_csv(&rows))?;
    let names: Vec<String> = schemes.iter().map(|s| s.name().to_string()).collect();
    let script = cli.out.join("comparison.gp");
    write_file(&script, &output::comparison_script(&csv, &names))?;
    let outputs = vec![csv, script];
    let m = manifest.finish(
        resolved.echo(),
        Some(resolved.bath.seed),
        resolved.precision.digits(),
        cli.jobs,
        &outputs,
    );
    write_json(&cli.out.join("manifest.json"), &m)?;
    println!("wrote {}", outputs[0].display());
    Ok(())
}

#[derive(Serialize)]
struct OrderReport {
    sequence: String,
    physical_pulses: usize,
    normalized_duration: f64,
    #[serde(flatten)]
    report: FitReport,
    fit: SlopeFit,
}

const CHECK_ORDER_DEFAULT: &str = r#"{
    "beta": "1e-8",
    "sweep": {"variable": "J", "from": "1e-7", "to": "1e-5", "per_decade": 7}
}"#;

fn check_order(cli: &Cli, args: &CheckOrderArgs) -> Result<(), CliError> {
    let opts = run_options(cli)?;
    let (mut cfg, dir) = match &args.config {
        Some(p) => (config::load(p)?, config_dir(p)),
        None => (config::parse(CHECK_ORDER_DEFAULT)?, PathBuf::new()),
    };
    if let Some(seq) = &args.sequence {
        cfg.scheme = "external".into();
        cfg.sequence_file = Some(std::env::current_dir().unwrap_or_default().join(seq));
        cfg.total_time = args.total.clone();
    } else {
        if let Some(s) = &args.scheme {
            cfg.scheme = s.clone();
        }
        if let Some(n) = args.n {
            cfg.n = config::Orders::One(n);
        }
        if args.m.is_some() {
            cfg.m = args.m;
        }
    }
    let resolved = cfg.resolve(overrides(cli), &dir)?;
    let orders = resolved.orders();
    if orders.len() != 1 {
        return Err(CliError::Config {
            path: "n".into(),
            message: "check-order takes a single order".into(),
        });
    }
    let experiment = resolved.experiment(orders[0]);
    let seq = experiment.sequence.build(resolved.precision)?;
    let estimate = estimate_suppression_order(&experiment, opts)?;
    let report = OrderReport {
        sequence: seq.label().to_string(),
        physical_pulses: seq.pulse_count(),
        normalized_duration: seq.total_duration().to_f64(),
        report: estimate.report(),
        fit: estimate.fit.clone(),
    };
    println!(
        "{}: order {} (slope {:.4} +- {:.4}, residual {:.3}, window [{:e}, {:e}])",
        report.sequence,
        estimate.order,
        estimate.fit.slope,
        estimate.fit.stderr,
        estimate.residual,
        estimate.fit.window.0,
        estimate.fit.window.1
    );
    if estimate.unreliable {
        eprintln!("warning: slope is far from an integer; the estimate is unreliable");
    }
    if !estimate.converged {
        eprintln!("warning: some grid points are outside the convergence region");
    }
    ensure_dir(&cli.out)?;
    let path = cli.out.join("order_report.json");
    write_json(&path, &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Sequence(args) => sequence(cli, args),
        Command::Sweep { config } => sweep(cli, config),
        Command::Compare { config } => compare(cli, config.as_deref()),
        Command::CheckOrder(args) => check_order(cli, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
