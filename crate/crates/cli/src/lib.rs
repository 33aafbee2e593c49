//! `ampflow`: run solvers, Monte-Carlo benchmarks and the CDP image demo from
//! the command line.
//!
//! Every command resolves its settings from built-in defaults, then an
//! optional `--spec` file of `key = value` lines, then flags. Outputs go to
//! `--out`: `results.csv`, a `manifest.txt` that can be fed back as a spec
//! file, and a readable `report.txt`.

pub mod acceptance;
pub mod imageio;
pub mod settings;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use amplitude_flow::bench::{self, BenchReport, BenchSpec, Experiment};
use amplitude_flow::init::InitMethod;
use amplitude_flow::model::{
    export_problem, gaussian_operator, generate_measurements, import_problem, random_signal, DenseOperator,
    ExportableOperator, MeasurementSet, OperatorKind, SensingOperator,
};
use amplitude_flow::rng::TrialSeed;
use amplitude_flow::solver::{solve, SolveResult, SolverConfig};
use amplitude_flow::{Field, Scalar};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;

use crate::imageio::{load_image, save_image, Image};
use crate::settings::Settings;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "ampflow", version, about = "Phase retrieval by truncated amplitude flow")]
struct Cli {
    /// Run the acceptance suite; the exit code is nonzero if any criterion fails.
    #[arg(long)]
    check: bool,

    /// Criteria to run with --check (default: all).
    #[arg(long, value_delimiter = ',', requires = "check")]
    criteria: Vec<u32>,

    /// Grayscale image for the CDP criterion of --check.
    #[arg(long, requires = "check")]
    fixture: Option<PathBuf>,

    /// Worker threads (falls back to AF_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print per-cell timings to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one random problem (or an imported one) and print the result.
    Solve {
        #[command(flatten)]
        opts: RunArgs,
        /// Write the generated problem to this file.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Solve a previously exported problem instead of generating one.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Run a Monte-Carlo experiment.
    Bench {
        /// success-rate | init-error | snr | convergence | profile
        experiment: Option<Experiment>,
        #[command(flatten)]
        opts: RunArgs,
    },
    /// Recover an image from coded diffraction patterns, band by band.
    Cdp {
        #[command(flatten)]
        opts: RunArgs,
    },
    /// Sorted squared normalized inner products (shorthand for `bench profile`).
    Profile {
        #[command(flatten)]
        opts: RunArgs,
    },
}

/// Flags shared by all commands; each maps to a spec-file key.
#[derive(Debug, Args)]
struct RunArgs {
    /// Spec file of `key = value` lines; flags override its values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// real | complex
    #[arg(long)]
    field: Option<String>,
    #[arg(long)]
    n: Option<String>,
    /// Measurement count (overrides --ratios).
    #[arg(long)]
    m: Option<String>,
    /// m/n grid as start:stop:step or a comma list.
    #[arg(long)]
    ratios: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Solver(s): taf, af, wf (comma list for bench).
    #[arg(long)]
    method: Option<String>,
    /// Initializer(s): orth, spectral, trunc-spectral, orth-mineig.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    power_iters: Option<String>,
    /// Fraction of measurements in the complement set, e.g. 1/6.
    #[arg(long)]
    complement_fraction: Option<String>,
    #[arg(long)]
    trunc_alpha: Option<String>,
    /// mean | rownorm
    #[arg(long)]
    norm_estimator: Option<String>,
    #[arg(long)]
    stop_tol: Option<String>,
    /// Success threshold on the relative error.
    #[arg(long)]
    threshold: Option<String>,
    /// Noise level relative to the signal norm.
    #[arg(long)]
    sigma: Option<String>,
    /// SNR grid in dB (start:stop:step or comma list).
    #[arg(long)]
    snr: Option<String>,
    /// CDP mask count.
    #[arg(long)]
    masks: Option<String>,
    /// Input image for `cdp`.
    #[arg(long)]
    image: Option<String>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.spec {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let flags = [
            ("field", &self.field),
            ("n", &self.n),
            ("m", &self.m),
            ("ratios", &self.ratios),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("method", &self.method),
            ("init", &self.init),
            ("gamma", &self.gamma),
            ("step", &self.step),
            ("iters", &self.iters),
            ("power-iters", &self.power_iters),
            ("complement-fraction", &self.complement_fraction),
            ("trunc-alpha", &self.trunc_alpha),
            ("norm-estimator", &self.norm_estimator),
            ("stop-tol", &self.stop_tol),
            ("threshold", &self.threshold),
            ("sigma", &self.sigma),
            ("snr", &self.snr),
            ("masks", &self.masks),
            ("image", &self.image),
        ];
        for (key, value) in flags {
            s.set(key, value.as_ref());
        }
        Ok(s)
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var("AF_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            Ok(Some(v.trim().parse().with_context(|| format!("AF_THREADS must be a thread count, got `{v}`"))?))
        }
        _ => Ok(None),
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_count(cli.threads)? {
        if t == 0 {
            bail!("thread count must be >= 1");
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| {
        if cli.check {
            if cli.command.is_some() {
                bail!("--check takes no subcommand");
            }
            return Ok(check(cli));
        }
        match &cli.command {
            None => bail!("no command given (try --help)"),
            Some(Command::Solve { opts, export, import }) => solve_command(opts, export.as_deref(), import.as_deref()),
            Some(Command::Bench { experiment, opts }) => bench_command(*experiment, opts, cli.verbose),
            Some(Command::Profile { opts }) => bench_command(Some(Experiment::OrthogonalityProfile), opts, cli.verbose),
            Some(Command::Cdp { opts }) => cdp_command(opts, cli.verbose),
        }
        .map(|()| 0)
    })
}

fn check(cli: &Cli) -> i32 {
    let ctx = acceptance::SuiteInputs { fixture: cli.fixture.clone().unwrap_or_else(acceptance::default_fixture) };
    let ids: Vec<u32> = if cli.criteria.is_empty() { acceptance::ALL.to_vec() } else { cli.criteria.clone() };
    let mut failed = 0;
    for id in ids {
        let outcome = acceptance::evaluate(id, &ctx);
        println!("{outcome}");
        failed += usize::from(!outcome.passed);
    }
    i32::from(failed > 0)
}

/// Defaults per experiment, before spec files and flags apply.
fn base_spec(experiment: Experiment, field: Field) -> BenchSpec {
    let n = match field {
        Field::Real => 256,
        Field::Complex => 128,
    };
    let base = BenchSpec { experiment, field, n, ..BenchSpec::default() };
    match experiment {
        Experiment::SuccessRateGrid => base,
        Experiment::InitErrorGrid => BenchSpec {
            ratios: (1..=10).map(|k| 2.0 * k as f64).collect(),
            trials: 50,
            inits: vec![InitMethod::OrthogonalityPromoting, InitMethod::Spectral, InitMethod::TruncatedSpectral],
            ..base
        },
        Experiment::SnrSweep => BenchSpec { n: 128, ratios: vec![6.0, 8.0, 10.0], trials: 50, ..base },
        Experiment::ConvergenceTrace => BenchSpec { trials: 10, ..base },
        Experiment::OrthogonalityProfile => {
            BenchSpec { n: 1000, ratios: (2..=10).map(f64::from).collect(), trials: 1, ..base }
        }
        Experiment::CdpRecovery => {
            let mut spec = BenchSpec { trials: 1, ..base };
            spec.solver.max_iters = 100;
            spec.solver.init.power_iters = 100;
            spec
        }
    }
}

fn resolve_spec(settings: &Settings, experiment: Option<Experiment>) -> Result<BenchSpec> {
    let experiment = match experiment {
        Some(e) => e,
        None => settings.get("experiment")?.context("no experiment given on the command line or in the spec file")?,
    };
    let field = settings.get("field")?.unwrap_or(Field::Real);
    let mut s = settings.clone();
    s.set("experiment", Some(experiment));
    s.bench_spec(base_spec(experiment, field))
}

fn manifest(command: &str, echo: &[(String, String)], extra: &[(&str, String)]) -> String {
    let mut out = format!("# ampflow run manifest; usable as --spec\nversion = {VERSION}\ncommand = {command}\n");
    for (k, v) in echo {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for (k, v) in extra {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}

fn write_outputs(out: &Path, report: &BenchReport, manifest_text: &str) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    let path = out.join("results.csv");
    report.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    fs::write(out.join("manifest.txt"), manifest_text).context("writing manifest")?;
    let path = out.join("report.txt");
    report.write_text(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    Ok(())
}

fn bench_command(experiment: Option<Experiment>, opts: &RunArgs, verbose: u8) -> Result<()> {
    let settings = opts.settings()?;
    let spec = resolve_spec(&settings, experiment)?;
    if spec.experiment == Experiment::CdpRecovery {
        bail!("use the `cdp` command for image recovery");
    }
    let report = bench::run(&spec)?;
    if verbose > 0 {
        for (cell, secs) in &report.cell_times {
            eprintln!("{cell}: {secs:.2}s");
        }
    }
    match &opts.out {
        Some(out) => {
            write_outputs(out, &report, &manifest("bench", &spec.echo(), &[]))?;
            println!("wrote {} rows to {}", report.rows.len(), out.join("results.csv").display());
        }
        None => report.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn cdp_command(opts: &RunArgs, verbose: u8) -> Result<()> {
    let settings = opts.settings()?;
    let image_path = PathBuf::from(settings.raw("image").context("cdp needs --image")?);
    let spec = resolve_spec(&settings, Some(Experiment::CdpRecovery))?;
    let img = load_image(&image_path)?;
    let report = bench::cdp_recovery(&spec, &img.bands)?;
    if verbose > 0 {
        for (cell, secs) in &report.cell_times {
            eprintln!("{cell}: {secs:.2}s");
        }
    }
    let err = report.find("image_relative_error", spec.masks as f64, None, None).map(|r| r.value);
    println!("image_relative_error {:.6e}", err.unwrap_or(f64::NAN));
    if let Some(out) = &opts.out {
        let extra = [("image", image_path.display().to_string())];
        write_outputs(out, &report, &manifest("cdp", &report.config, &extra))?;
        let recovered = Image { width: img.width, height: img.height, bands: report.recovered.clone() };
        save_image(&out.join("recovered.png"), &recovered)?;
    }
    Ok(())
}

fn solve_command(opts: &RunArgs, export: Option<&Path>, import: Option<&Path>) -> Result<()> {
    let settings = opts.settings()?;
    let mut spec = settings.bench_spec(BenchSpec { n: 64, ..BenchSpec::default() })?;
    if spec.solvers.len() != 1 || spec.inits.len() != 1 {
        bail!("solve takes a single --method and --init");
    }
    spec.solver.method = spec.solvers[0];
    spec.solver.init.method = spec.inits[0];
    spec.solver.trace_every = 1;
    let seed = TrialSeed::single(spec.master_seed);

    let outcome = if let Some(path) = import {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let problem = import_problem(std::io::BufReader::new(file))?;
        spec.field = problem.field;
        spec.n = problem.n;
        spec.m_override = Some(problem.m);
        match (problem.kind, problem.field) {
            (OperatorKind::Dense, Field::Real) => {
                report_solve(&spec.solver, &problem.dense_operator::<f64>()?, MeasurementSet::from_amplitudes(problem.psi.clone())?, seed)?
            }
            (OperatorKind::Dense, Field::Complex) => {
                report_solve(&spec.solver, &problem.dense_operator::<Complex64>()?, MeasurementSet::from_amplitudes(problem.psi.clone())?, seed)?
            }
            (OperatorKind::Cdp { .. }, _) => {
                report_solve(&spec.solver, &problem.cdp_operator()?, MeasurementSet::from_amplitudes(problem.psi.clone())?, seed)?
            }
        }
    } else {
        let m = spec.m_override.unwrap_or_else(|| spec.measurements_for(spec.ratios[0]));
        spec.m_override = Some(m);
        match spec.field {
            Field::Real => generate_and_solve::<f64>(&spec, m, seed, export)?,
            Field::Complex => generate_and_solve::<Complex64>(&spec, m, seed, export)?,
        }
    };

    let mut stdout = std::io::stdout().lock();
    for (k, v) in &outcome.summary {
        writeln!(stdout, "{k} {v}")?;
    }
    if let Some(out) = &opts.out {
        fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
        fs::write(out.join("trace.csv"), &outcome.trace_csv).context("writing trace")?;
        let mut echo = spec.echo();
        echo.retain(|(k, _)| k != "experiment");
        fs::write(out.join("manifest.txt"), manifest("solve", &echo, &[])).context("writing manifest")?;
    }
    Ok(())
}

struct SolveOutcome {
    summary: Vec<(&'static str, String)>,
    trace_csv: String,
}

fn generate_and_solve<S: Scalar>(spec: &BenchSpec, m: usize, seed: TrialSeed, export: Option<&Path>) -> Result<SolveOutcome>
where
    DenseOperator<S>: ExportableOperator<S>,
{
    let op = gaussian_operator::<S>(spec.n, m, seed)?;
    let x = random_signal::<S>(spec.n, seed)?;
    let xn = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let ms = generate_measurements(&op, x.view(), spec.sigma_rel * xn, seed)?;
    if let Some(path) = export {
        let mut w = std::io::BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
        export_problem(&mut w, &op, &ms, spec.master_seed)?;
        w.flush()?;
    }
    report_solve(&spec.solver, &op, ms, seed)
}

fn report_solve<S: Scalar, O: SensingOperator<S>>(
    cfg: &SolverConfig,
    op: &O,
    ms: MeasurementSet<S>,
    seed: TrialSeed,
) -> Result<SolveOutcome> {
    let res: SolveResult<S> = solve(&ms, op, cfg, seed)?;
    let mut summary = vec![("n", op.dim().to_string()), ("m", op.measurements().to_string())];
    if let Some(init) = &res.init {
        if let Some(x) = &ms.truth {
            summary.push(("init_relative_error", format!("{:.6e}", amplitude_flow::metrics::relative_error(init.z0.view(), x.view())?)));
        }
    }
    if let Some(e) = res.final_error {
        summary.push(("relative_error", format!("{e:.6e}")));
    }
    summary.push(("iterations", res.iters_run.to_string()));
    summary.push(("converged", res.converged.to_string()));
    let tr = &res.trace;
    let mut csv = String::from("iteration,loss,relative_error,truncation_size\n");
    for i in 0..tr.len() {
        let err = tr.relative_error.get(i).map(|e| e.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{}\n", tr.iterations[i], tr.loss[i], err, tr.truncation_size[i]));
    }
    Ok(SolveOutcome { summary, trace_csv: csv })
}
