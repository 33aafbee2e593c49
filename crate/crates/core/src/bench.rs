//! Monte-Carlo experiment drivers.
//!
//! Each experiment maps a [`BenchSpec`] to a [`BenchReport`] of tabular rows.
//! Trials are seeded from `(master_seed, cell, trial)` where the cell index
//! depends only on the problem coordinates (ratio, noise level), so different
//! solvers and initializers in the same cell see identical problem instances.
//! Trials run on the rayon pool and are aggregated in trial order, which
//! makes every statistic bit-reproducible regardless of thread count.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::init::{initialize, normalized_amplitudes, InitMethod};
use crate::metrics::{phase_constant, relative_error, relative_mse, success_rate};
use crate::model::{
    generate_measurements, random_signal, CdpOperator, DenseOperator, MeasurementSet, SensingOperator,
};
use crate::rng::TrialSeed;
use crate::scalar::{Field, Scalar};
use crate::solver::{solve, IterateTrace, SolverConfig, SolverMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SuccessRateGrid,
    InitErrorGrid,
    SnrSweep,
    ConvergenceTrace,
    OrthogonalityProfile,
    CdpRecovery,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::SuccessRateGrid => "success-rate",
            Experiment::InitErrorGrid => "init-error",
            Experiment::SnrSweep => "snr",
            Experiment::ConvergenceTrace => "convergence",
            Experiment::OrthogonalityProfile => "profile",
            Experiment::CdpRecovery => "cdp",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "success-rate" => Experiment::SuccessRateGrid,
            "init-error" => Experiment::InitErrorGrid,
            "snr" => Experiment::SnrSweep,
            "convergence" => Experiment::ConvergenceTrace,
            "profile" => Experiment::OrthogonalityProfile,
            "cdp" => Experiment::CdpRecovery,
            other => {
                return Err(format!(
                    "unknown experiment `{other}` (expected success-rate|init-error|snr|convergence|profile|cdp)"
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub experiment: Experiment,
    pub field: Field,
    pub n: usize,
    /// `m/n` values; `m = round(ratio · n)`.
    pub ratios: Vec<f64>,
    /// Explicit `m`, overriding `ratios` (convergence traces at `m = 2n − 1`).
    pub m_override: Option<usize>,
    pub trials: usize,
    /// Base solver configuration. `solvers` and `inits` override its method
    /// fields cell by cell.
    pub solver: SolverConfig,
    pub solvers: Vec<SolverMethod>,
    pub inits: Vec<InitMethod>,
    /// Noise standard deviation relative to `‖x‖`.
    pub sigma_rel: f64,
    pub snr_grid: Vec<f64>,
    /// CDP mask count.
    pub masks: usize,
    pub master_seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            experiment: Experiment::SuccessRateGrid,
            field: Field::Real,
            n: 256,
            ratios: vec![8.0],
            m_override: None,
            trials: 100,
            solver: SolverConfig::default(),
            solvers: vec![SolverMethod::Taf],
            inits: vec![InitMethod::OrthogonalityPromoting],
            sigma_rel: 0.0,
            snr_grid: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            masks: 6,
            master_seed: 0,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        let grid = !matches!(self.experiment, Experiment::CdpRecovery | Experiment::ConvergenceTrace);
        if grid && self.ratios.is_empty() {
            return Err(Error::InvalidArgument("ratio grid is empty".into()));
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument(format!("invalid m/n ratio {r}")));
        }
        if self.solvers.is_empty() || self.inits.is_empty() {
            return Err(Error::InvalidArgument("need at least one solver and initializer".into()));
        }
        if !(self.sigma_rel >= 0.0) {
            return Err(Error::InvalidArgument("sigma_rel must be >= 0".into()));
        }
        if self.experiment == Experiment::SnrSweep && self.snr_grid.is_empty() {
            return Err(Error::InvalidArgument("SNR grid is empty".into()));
        }
        self.solver.validate()
    }

    pub fn measurements_for(&self, ratio: f64) -> usize {
        self.m_override.unwrap_or_else(|| ((ratio * self.n as f64).round() as usize).max(1))
    }

    fn cfg_for(&self, method: SolverMethod, init: InitMethod) -> SolverConfig {
        let mut cfg = self.solver.clone();
        cfg.method = method;
        cfg.init.method = init;
        cfg
    }

    /// Key-value echo of every field, sufficient to rebuild the spec.
    pub fn echo(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(",");
        let s = &self.solver;
        vec![
            ("experiment".into(), self.experiment.to_string()),
            ("field".into(), self.field.to_string()),
            ("n".into(), self.n.to_string()),
            ("ratios".into(), join(&self.ratios)),
            ("m".into(), self.m_override.map(|m| m.to_string()).unwrap_or_default()),
            ("trials".into(), self.trials.to_string()),
            ("method".into(), self.solvers.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("init".into(), self.inits.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("gamma".into(), s.gamma.to_string()),
            ("step".into(), s.step.map(|v| v.to_string()).unwrap_or_else(|| "default".into())),
            ("iters".into(), s.max_iters.to_string()),
            ("power-iters".into(), s.init.power_iters.to_string()),
            ("complement-fraction".into(), s.init.complement_fraction.to_string()),
            ("trunc-alpha".into(), s.init.spectral_trunc_alpha.to_string()),
            ("norm-estimator".into(), s.init.norm_estimator.to_string()),
            ("stop-tol".into(), s.stop_tol.to_string()),
            ("threshold".into(), s.success_threshold.to_string()),
            ("sigma".into(), self.sigma_rel.to_string()),
            ("snr".into(), join(&self.snr_grid)),
            ("masks".into(), self.masks.to_string()),
            ("seed".into(), self.master_seed.to_string()),
        ]
    }
}

/// One output row. Columns mirror the CSV header.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub experiment: Experiment,
    pub field: Field,
    pub n: usize,
    pub m_over_n: f64,
    pub solver: Option<SolverMethod>,
    pub init: Option<InitMethod>,
    pub sigma_rel: f64,
    pub snr_db: Option<f64>,
    pub statistic: String,
    pub value: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Full trace of one solver run, kept for convergence analysis.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub m_over_n: f64,
    pub trial: usize,
    pub trace: IterateTrace,
    pub iters_run: usize,
    pub final_error: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub config: Vec<(String, String)>,
    /// Wall-clock seconds per cell, in row-group order.
    pub cell_times: Vec<(String, f64)>,
    pub traces: Vec<TraceRecord>,
    /// Recovered bands of the CDP experiment, aligned to the truth's phase.
    pub recovered: Vec<Array1<f64>>,
}

pub const CSV_HEADER: [&str; 12] = [
    "experiment", "field", "n", "m_over_n", "solver", "init", "sigma_rel", "snr_db", "statistic", "value",
    "trials", "seed",
];

impl BenchReport {
    fn new(spec: &BenchSpec) -> Self {
        Self { rows: Vec::new(), config: spec.echo(), cell_times: Vec::new(), traces: Vec::new(), recovered: Vec::new() }
    }

    /// First row matching all given filters.
    pub fn find(&self, statistic: &str, m_over_n: f64, solver: Option<SolverMethod>, init: Option<InitMethod>) -> Option<&BenchRow> {
        self.rows.iter().find(|r| {
            r.statistic == statistic
                && (r.m_over_n - m_over_n).abs() < 1e-12
                && (solver.is_none() || r.solver == solver)
                && (init.is_none() || r.init == init)
        })
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.rows {
            out.write_record([
                r.experiment.to_string(),
                r.field.to_string(),
                r.n.to_string(),
                r.m_over_n.to_string(),
                r.solver.map(|s| s.to_string()).unwrap_or_default(),
                r.init.map(|s| s.to_string()).unwrap_or_default(),
                r.sigma_rel.to_string(),
                r.snr_db.map(|s| s.to_string()).unwrap_or_default(),
                r.statistic.clone(),
                r.value.to_string(),
                r.trials.to_string(),
                r.seed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Human-readable report: config echo, cell timings and the row table.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# configuration")?;
        for (k, v) in &self.config {
            writeln!(w, "{k} = {v}")?;
        }
        writeln!(w, "\n# cell wall time (s)")?;
        for (cell, secs) in &self.cell_times {
            writeln!(w, "{cell:<40} {secs:>10.3}")?;
        }
        writeln!(w, "\n# results")?;
        writeln!(w, "{:>8} {:>8} {:>14} {:>9} {:>9} {:<30} {:>14}", "m/n", "solver", "init", "sigma", "snr", "statistic", "value")?;
        for r in &self.rows {
            writeln!(
                w,
                "{:>8} {:>8} {:>14} {:>9} {:>9} {:<30} {:>14.6e}",
                r.m_over_n,
                r.solver.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                r.init.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                r.sigma_rel,
                r.snr_db.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                r.statistic,
                r.value
            )?;
        }
        Ok(())
    }

    /// Byte-identical CSV body for determinism checks.
    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is utf-8"))
    }
}

struct RowTemplate<'a> {
    spec: &'a BenchSpec,
    m_over_n: f64,
    solver: Option<SolverMethod>,
    init: Option<InitMethod>,
    sigma_rel: f64,
    snr_db: Option<f64>,
}

impl RowTemplate<'_> {
    fn row(&self, statistic: impl Into<String>, value: f64, trials: usize) -> BenchRow {
        BenchRow {
            experiment: self.spec.experiment,
            field: self.spec.field,
            n: self.spec.n,
            m_over_n: self.m_over_n,
            solver: self.solver,
            init: self.init,
            sigma_rel: self.sigma_rel,
            snr_db: self.snr_db,
            statistic: statistic.into(),
            value,
            trials,
            seed: self.spec.master_seed,
        }
    }
}

/// One Gaussian problem instance with `σ = sigma_rel · ‖x‖`.
pub struct GaussianInstance<S> {
    pub op: DenseOperator<S>,
    pub x: Array1<S>,
    pub ms: MeasurementSet<S>,
}

pub fn gaussian_instance<S: Scalar>(n: usize, m: usize, sigma_rel: f64, seed: TrialSeed) -> Result<GaussianInstance<S>> {
    let op = DenseOperator::<S>::gaussian(n, m, seed)?;
    let x = random_signal::<S>(n, seed)?;
    let xn = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let ms = generate_measurements(&op, x.view(), sigma_rel * xn, seed)?;
    Ok(GaussianInstance { op, x, ms })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs `trials` independent closures in parallel, returning results in
/// trial order.
fn run_trials<T: Send>(trials: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..trials as u64).into_par_iter().map(f).collect()
}

/// Dispatches on the experiment kind. CDP recovery needs image data and goes
/// through [`cdp_recovery`] instead.
pub fn run(spec: &BenchSpec) -> Result<BenchReport> {
    match spec.experiment {
        Experiment::SuccessRateGrid => success_rate_grid(spec),
        Experiment::InitErrorGrid => init_error_grid(spec),
        Experiment::SnrSweep => snr_sweep(spec),
        Experiment::ConvergenceTrace => convergence_trace(spec),
        Experiment::OrthogonalityProfile => orthogonality_profile(spec),
        Experiment::CdpRecovery => Err(Error::InvalidArgument(
            "CDP recovery needs an image; call cdp_recovery directly".into(),
        )),
    }
}

/// Relative error of one solver run; diverged runs count as infinite error.
fn solve_error<S: Scalar>(inst: &GaussianInstance<S>, cfg: &SolverConfig, seed: TrialSeed) -> Result<f64> {
    match solve(&inst.ms, &inst.op, cfg, seed) {
        Ok(res) => Ok(res.final_error.unwrap_or(f64::INFINITY)),
        Err(Error::Diverged { .. }) | Err(Error::DegeneratePowerIteration { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Success rate per (ratio, solver, initializer) cell.
pub fn success_rate_grid(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    match spec.field {
        Field::Real => success_rate_grid_in::<f64>(spec),
        Field::Complex => success_rate_grid_in::<Complex64>(spec),
    }
}

fn success_rate_grid_in<S: Scalar>(spec: &BenchSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(spec);
    for (cell, &ratio) in spec.ratios.iter().enumerate() {
        let m = spec.measurements_for(ratio);
        for &method in &spec.solvers {
            for &init in &spec.inits {
                let cfg = spec.cfg_for(method, init);
                let started = Instant::now();
                let errors = run_trials(spec.trials, |t| {
                    let seed = TrialSeed::new(spec.master_seed, cell as u64, t);
                    let inst = gaussian_instance::<S>(spec.n, m, spec.sigma_rel, seed)?;
                    solve_error(&inst, &cfg, seed)
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
                report.cell_times.push((format!("m/n={ratio} {method} {init}"), started.elapsed().as_secs_f64()));
                let tpl = RowTemplate { spec, m_over_n: ratio, solver: Some(method), init: Some(init), sigma_rel: spec.sigma_rel, snr_db: None };
                let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
                report.rows.push(tpl.row("success_rate", success_rate(&errors, cfg.success_threshold)?, spec.trials));
                report.rows.push(tpl.row("diverged", (errors.len() - finite.len()) as f64, spec.trials));
                if !finite.is_empty() {
                    report.rows.push(tpl.row("median_relative_error", median(&finite), finite.len()));
                }
            }
        }
    }
    Ok(report)
}

fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}

/// Linear-interpolated quantile of unsorted data.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Mean relative error of the initial estimate, noiseless and at
/// `σ = sigma_rel · ‖x‖`.
pub fn init_error_grid(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    match spec.field {
        Field::Real => init_error_grid_in::<f64>(spec),
        Field::Complex => init_error_grid_in::<Complex64>(spec),
    }
}

fn init_error_grid_in<S: Scalar>(spec: &BenchSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(spec);
    let mut noise_levels = vec![0.0];
    if spec.sigma_rel > 0.0 {
        noise_levels.push(spec.sigma_rel);
    }
    for (level, &sigma_rel) in noise_levels.iter().enumerate() {
        for (ri, &ratio) in spec.ratios.iter().enumerate() {
            let m = spec.measurements_for(ratio);
            let cell = (level * spec.ratios.len() + ri) as u64;
            let started = Instant::now();
            // errors[trial][init]
            let errors = run_trials(spec.trials, |t| -> Result<Vec<f64>> {
                let seed = TrialSeed::new(spec.master_seed, cell, t);
                let inst = gaussian_instance::<S>(spec.n, m, sigma_rel, seed)?;
                spec.inits
                    .iter()
                    .map(|&method| {
                        let cfg = spec.cfg_for(SolverMethod::Taf, method).init;
                        let est = initialize(&inst.ms, &inst.op, &cfg, seed)?;
                        relative_error(est.z0.view(), inst.x.view())
                    })
                    .collect()
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            report.cell_times.push((format!("m/n={ratio} sigma={sigma_rel}"), started.elapsed().as_secs_f64()));
            for (k, &init) in spec.inits.iter().enumerate() {
                let col: Vec<f64> = errors.iter().map(|e| e[k]).collect();
                let tpl = RowTemplate { spec, m_over_n: ratio, solver: None, init: Some(init), sigma_rel, snr_db: None };
                report.rows.push(tpl.row("mean_init_error", mean(&col), spec.trials));
            }
        }
    }
    Ok(report)
}

/// Mean relative MSE of the configured solver per (ratio, SNR) cell, plus
/// the least-squares slope of `log₁₀(relMSE)` against SNR in dB per ratio.
///
/// `σ` is calibrated from the ensemble identity `E Σ|⟨a_i,x⟩|² = m‖x‖²`, so
/// `σ = ‖x‖ · 10^(−SNR/20)`. An infinite SNR entry runs the noiseless control.
pub fn snr_sweep(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    match spec.field {
        Field::Real => snr_sweep_in::<f64>(spec),
        Field::Complex => snr_sweep_in::<Complex64>(spec),
    }
}

fn snr_sweep_in<S: Scalar>(spec: &BenchSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(spec);
    let method = spec.solvers[0];
    let init = spec.inits[0];
    let cfg = spec.cfg_for(method, init);
    for (ri, &ratio) in spec.ratios.iter().enumerate() {
        let m = spec.measurements_for(ratio);
        let mut points = Vec::new();
        for (si, &snr) in spec.snr_grid.iter().enumerate() {
            let sigma_rel = if snr.is_finite() { 10f64.powf(-snr / 20.0) } else { 0.0 };
            let cell = (ri * spec.snr_grid.len() + si) as u64;
            let started = Instant::now();
            let mses = run_trials(spec.trials, |t| -> Result<f64> {
                let seed = TrialSeed::new(spec.master_seed, cell, t);
                let inst = gaussian_instance::<S>(spec.n, m, sigma_rel, seed)?;
                match solve(&inst.ms, &inst.op, &cfg, seed) {
                    Ok(res) => relative_mse(res.estimate.view(), inst.x.view()),
                    Err(Error::Diverged { .. }) => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                }
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            report.cell_times.push((format!("m/n={ratio} snr={snr}"), started.elapsed().as_secs_f64()));
            let value = mean(&mses);
            let tpl = RowTemplate { spec, m_over_n: ratio, solver: Some(method), init: Some(init), sigma_rel, snr_db: Some(snr) };
            report.rows.push(tpl.row("mean_relative_mse", value, spec.trials));
            if snr.is_finite() {
                points.push((snr, value.log10()));
            }
        }
        if points.len() >= 2 {
            let tpl = RowTemplate { spec, m_over_n: ratio, solver: Some(method), init: Some(init), sigma_rel: 0.0, snr_db: None };
            report.rows.push(tpl.row("log10_mse_per_db_slope", least_squares_slope(&points), spec.trials));
        }
    }
    Ok(report)
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Relative errors below this are treated as the floating-point floor and
/// excluded from contraction windows.
pub const CONTRACTION_FLOOR: f64 = 1e-12;

/// Worst ratio `err(t + window) / err(t)` over all `t` after the error first
/// drops below `start_below`, skipping windows that begin at the numerical
/// floor. `None` if no window qualifies. Needs a trace recorded every
/// iteration.
pub fn worst_contraction(trace: &IterateTrace, window: usize, start_below: f64) -> Option<f64> {
    let err = &trace.relative_error;
    let start = err.iter().position(|&e| e < start_below)?;
    (start..err.len().saturating_sub(window))
        .filter(|&t| err[t] >= CONTRACTION_FLOOR)
        .map(|t| err[t + window] / err[t])
        .reduce(f64::max)
}

/// First iteration with relative error below `threshold`.
pub fn iterations_to(trace: &IterateTrace, threshold: f64) -> Option<usize> {
    trace.relative_error.iter().position(|&e| e < threshold).map(|i| trace.iterations[i])
}

/// Full per-iteration traces of the configured solver.
///
/// Uses `m_override` when set (e.g. `m = 2n − 1`), otherwise each ratio.
pub fn convergence_trace(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    match spec.field {
        Field::Real => convergence_trace_in::<f64>(spec),
        Field::Complex => convergence_trace_in::<Complex64>(spec),
    }
}

fn convergence_trace_in<S: Scalar>(spec: &BenchSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(spec);
    let method = spec.solvers[0];
    let mut cfg = spec.cfg_for(method, spec.inits[0]);
    cfg.trace_every = 1;
    cfg.stop_tol = 0.0;
    let ratios: Vec<f64> = match spec.m_override {
        Some(m) => vec![m as f64 / spec.n as f64],
        None => spec.ratios.clone(),
    };
    for (cell, &ratio) in ratios.iter().enumerate() {
        let m = spec.measurements_for(ratio);
        let started = Instant::now();
        let runs = run_trials(spec.trials, |t| -> Result<Option<TraceRecord>> {
            let seed = TrialSeed::new(spec.master_seed, cell as u64, t);
            let inst = gaussian_instance::<S>(spec.n, m, spec.sigma_rel, seed)?;
            match solve(&inst.ms, &inst.op, &cfg, seed) {
                Ok(res) => Ok(Some(TraceRecord {
                    m_over_n: ratio,
                    trial: t as usize,
                    final_error: res.final_error.unwrap_or(f64::INFINITY),
                    iters_run: res.iters_run,
                    trace: res.trace,
                })),
                Err(Error::Diverged { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        report.cell_times.push((format!("m/n={ratio}"), started.elapsed().as_secs_f64()));

        let tpl = RowTemplate { spec, m_over_n: ratio, solver: Some(method), init: Some(spec.inits[0]), sigma_rel: spec.sigma_rel, snr_db: None };
        let errors: Vec<f64> = runs.iter().map(|r| r.as_ref().map_or(f64::INFINITY, |r| r.final_error)).collect();
        report.rows.push(tpl.row("success_rate", success_rate(&errors, cfg.success_threshold)?, spec.trials));
        let successes: Vec<&TraceRecord> =
            runs.iter().flatten().filter(|r| r.final_error < cfg.success_threshold).collect();
        if !successes.is_empty() {
            let its: Vec<f64> = successes
                .iter()
                .filter_map(|r| iterations_to(&r.trace, cfg.success_threshold))
                .map(|i| i as f64)
                .collect();
            if !its.is_empty() {
                report.rows.push(tpl.row("mean_iterations_to_threshold", mean(&its), its.len()));
            }
            if let Some(w) = successes.iter().filter_map(|r| worst_contraction(&r.trace, 100, 0.1)).reduce(f64::max) {
                report.rows.push(tpl.row("worst_contraction_per_100", w, successes.len()));
            }
        }
        // per-100-iteration profile of the first trial
        if let Some(Some(first)) = runs.first() {
            for (i, &t) in first.trace.iterations.iter().enumerate() {
                if t % 100 == 0 {
                    report.rows.push(tpl.row(format!("trial0_relative_error@{t}"), first.trace.relative_error[i], 1));
                }
            }
        }
        report.traces.extend(runs.into_iter().flatten());
    }
    Ok(report)
}

/// Squared normalized inner products `cos²θ_i = ψ_i² / (‖a_i‖² ‖x‖²)`.
pub fn squared_normalized_inner_products<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    x_norm: f64,
) -> Array1<f64> {
    normalized_amplitudes(ms, op).mapv(|r| r * r / (x_norm * x_norm))
}

/// Quantiles of the sorted `cos²θ_i` profile per ratio.
pub fn orthogonality_profile(spec: &BenchSpec) -> Result<BenchReport> {
    spec.validate()?;
    match spec.field {
        Field::Real => orthogonality_profile_in::<f64>(spec),
        Field::Complex => orthogonality_profile_in::<Complex64>(spec),
    }
}

fn orthogonality_profile_in<S: Scalar>(spec: &BenchSpec) -> Result<BenchReport> {
    let mut report = BenchReport::new(spec);
    const STATS: [&str; 7] = ["min", "median", "p95", "max", "frac_below_1e-3", "frac_below_1e-2", "mean"];
    for (cell, &ratio) in spec.ratios.iter().enumerate() {
        let m = spec.measurements_for(ratio);
        let started = Instant::now();
        let per_trial = run_trials(spec.trials, |t| -> Result<[f64; 7]> {
            let seed = TrialSeed::new(spec.master_seed, cell as u64, t);
            let inst = gaussian_instance::<S>(spec.n, m, 0.0, seed)?;
            let xn = inst.x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let c = squared_normalized_inner_products(&inst.ms, &inst.op, xn).to_vec();
            let frac = |b: f64| c.iter().filter(|&&v| v < b).count() as f64 / c.len() as f64;
            Ok([
                quantile(&c, 0.0),
                quantile(&c, 0.5),
                quantile(&c, 0.95),
                quantile(&c, 1.0),
                frac(1e-3),
                frac(1e-2),
                mean(&c),
            ])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        report.cell_times.push((format!("m/n={ratio}"), started.elapsed().as_secs_f64()));
        let tpl = RowTemplate { spec, m_over_n: ratio, solver: None, init: None, sigma_rel: 0.0, snr_db: None };
        for (k, name) in STATS.iter().enumerate() {
            let col: Vec<f64> = per_trial.iter().map(|s| s[k]).collect();
            report.rows.push(tpl.row(format!("cos2_{name}"), mean(&col), spec.trials));
        }
    }
    Ok(report)
}

/// Recovers each band of an image from `K`-mask CDP data.
///
/// Bands are vectorized images with values in `[0, 1]`. Per band, the
/// configured initializer and solver run with `spec.solver`'s iteration
/// counts; the report carries relative errors after initialization and after
/// refinement, and `recovered` holds the phase-aligned real part of each
/// estimate.
pub fn cdp_recovery(spec: &BenchSpec, bands: &[Array1<f64>]) -> Result<BenchReport> {
    if bands.is_empty() {
        return Err(Error::InvalidArgument("image has no bands".into()));
    }
    let n = bands[0].len();
    if bands.iter().any(|b| b.len() != n) {
        return Err(Error::InvalidArgument("bands differ in length".into()));
    }
    let spec = BenchSpec { experiment: Experiment::CdpRecovery, field: Field::Complex, n, ..spec.clone() };
    if spec.masks == 0 {
        return Err(Error::InvalidArgument("CDP needs at least one mask".into()));
    }
    spec.solver.validate()?;
    let method = spec.solvers.first().copied().unwrap_or(SolverMethod::Taf);
    let init = spec.inits.first().copied().unwrap_or(InitMethod::OrthogonalityPromoting);
    let cfg = spec.cfg_for(method, init);
    let mut report = BenchReport::new(&spec);
    let started = Instant::now();
    let results = (0..bands.len())
        .into_par_iter()
        .map(|b| -> Result<(f64, f64, Array1<f64>)> {
            let seed = TrialSeed::new(spec.master_seed, 0, b as u64);
            let x: Array1<Complex64> = bands[b].mapv(|v| Complex64::new(v, 0.0));
            let op = CdpOperator::random(n, spec.masks, seed)?;
            let ms = generate_measurements(&op, x.view(), spec.sigma_rel * x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt(), seed)?;
            let res = solve(&ms, &op, &cfg, seed)?;
            let init_est = res.init.as_ref().expect("solve records the initializer");
            let init_err = relative_error(init_est.z0.view(), x.view())?;
            let final_err = relative_error(res.estimate.view(), x.view())?;
            let phi = phase_constant(res.estimate.view(), x.view())?;
            let undo = Complex64::from_polar(1.0, -phi);
            let img = res.estimate.mapv(|z| (z * undo).re);
            Ok((init_err, final_err, img))
        })
        .collect::<Result<Vec<_>>>()?;
    report.cell_times.push((format!("{} bands", bands.len()), started.elapsed().as_secs_f64()));
    let ratio = spec.masks as f64;
    for (b, (init_err, final_err, img)) in results.into_iter().enumerate() {
        let tpl = RowTemplate { spec: &spec, m_over_n: ratio, solver: Some(method), init: Some(init), sigma_rel: spec.sigma_rel, snr_db: None };
        report.rows.push(tpl.row(format!("band{b}_init_relative_error"), init_err, 1));
        report.rows.push(tpl.row(format!("band{b}_final_relative_error"), final_err, 1));
        report.recovered.push(img);
    }
    let total = |a: &dyn Fn(&Array1<f64>) -> f64| bands.iter().map(a).sum::<f64>();
    let truth_energy = total(&|b| b.dot(b));
    let err_energy: f64 = bands.iter().zip(&report.recovered).map(|(b, r)| (b - r).mapv(|d| d * d).sum()).sum();
    let tpl = RowTemplate { spec: &spec, m_over_n: ratio, solver: Some(method), init: Some(init), sigma_rel: spec.sigma_rel, snr_db: None };
    report.rows.push(tpl.row("image_relative_error", (err_energy / truth_energy).sqrt(), bands.len()));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }

    #[test]
    fn slope_of_a_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|k| (10.0 * k as f64, 3.0 - 0.1 * 10.0 * k as f64)).collect();
        assert!((least_squares_slope(&pts) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn contraction_windows() {
        let err: Vec<f64> = (0..400).map(|t| if t < 50 { 0.5 } else { 0.05 * 0.99f64.powi(t - 50) }).collect();
        let trace = IterateTrace {
            iterations: (0..400).collect(),
            loss: vec![0.0; 400],
            relative_error: err,
            truncation_size: vec![0; 400],
        };
        let w = worst_contraction(&trace, 100, 0.1).unwrap();
        assert!((w - 0.99f64.powi(100)).abs() < 1e-12);
        assert_eq!(iterations_to(&trace, 0.1), Some(50));
        assert!(worst_contraction(&trace, 1000, 0.1).is_none());
    }

    #[test]
    fn spec_validation() {
        assert!(BenchSpec { trials: 0, ..Default::default() }.validate().is_err());
        assert!(BenchSpec { ratios: vec![], ..Default::default() }.validate().is_err());
        assert!(BenchSpec { ratios: vec![-1.0], ..Default::default() }.validate().is_err());
        assert!(BenchSpec::default().validate().is_ok());
        assert_eq!(BenchSpec { n: 100, ..Default::default() }.measurements_for(2.5), 250);
    }

    #[test]
    fn small_grid_is_reproducible() {
        let spec = BenchSpec { n: 16, ratios: vec![4.0, 6.0], trials: 4, master_seed: 9, ..Default::default() };
        let a = success_rate_grid(&spec).unwrap().csv_string().unwrap();
        let b = success_rate_grid(&spec).unwrap().csv_string().unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("experiment,field,n,m_over_n,solver,init,sigma_rel,snr_db,statistic,value,trials,seed\n"));
    }
}
