//! Amplitude-flow refinement loops.
//!
//! Search directions are gradients with respect to the real coordinates of
//! `z`, packed as `∂/∂Re z + j ∂/∂Im z` (twice the conjugate Wirtinger
//! derivative). In the real field this is the ordinary gradient.
//!
//! * TAF: `(1/m) Aᴴ v` with `v_i = u_i − ψ_i u_i/|u_i|` on the truncation set
//!   `{i : |u_i| ≥ ψ_i / (1 + γ)}` and zero elsewhere, `u = A z`.
//! * AF: the same with every index retained (`γ = ∞`).
//! * WF: gradient of the intensity loss, `(2/m) Aᴴ((|u|² − y) ⊙ u)`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Zip};

use crate::error::{Error, Result};
use crate::init::{initialize, norm_estimate, InitConfig, InitEstimate, NormEstimator};
use crate::metrics::{relative_error, DEFAULT_SUCCESS_THRESHOLD};
use crate::model::{MeasurementSet, SensingOperator};
use crate::rng::TrialSeed;
use crate::scalar::{Field, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverMethod {
    Taf,
    Af,
    Wf,
}

impl SolverMethod {
    pub fn name(&self) -> &'static str {
        match self {
            SolverMethod::Taf => "taf",
            SolverMethod::Af => "af",
            SolverMethod::Wf => "wf",
        }
    }
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "taf" => Ok(SolverMethod::Taf),
            "af" => Ok(SolverMethod::Af),
            "wf" => Ok(SolverMethod::Wf),
            other => Err(format!("unknown solver `{other}` (expected taf|af|wf)")),
        }
    }
}

/// Default TAF/AF step: 0.6 (real) or 1.0 (complex).
pub fn default_step(field: Field) -> f64 {
    match field {
        Field::Real => 0.6,
        Field::Complex => 1.0,
    }
}

/// Default WF step numerator; the applied step is this over `‖z₀‖²`.
pub const DEFAULT_WF_STEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub gamma: f64,
    /// `None` picks the field/method default.
    pub step: Option<f64>,
    pub max_iters: usize,
    pub init: InitConfig,
    /// Record every `k`-th iterate in the trace (0: only first and last).
    pub trace_every: usize,
    /// Stop early once the relative error drops below this (0 disables;
    /// needs ground truth).
    pub stop_tol: f64,
    pub success_threshold: f64,
    /// Abort when `‖z_t‖` exceeds this multiple of the estimated `‖x‖`.
    pub divergence_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Taf,
            gamma: 0.7,
            step: None,
            max_iters: 1000,
            init: InitConfig::default(),
            trace_every: 0,
            stop_tol: 0.0,
            success_threshold: DEFAULT_SUCCESS_THRESHOLD,
            divergence_factor: 1e6,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: SolverMethod) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn step_for(&self, field: Field) -> f64 {
        self.step.unwrap_or(match self.method {
            SolverMethod::Wf => DEFAULT_WF_STEP,
            _ => default_step(field),
        })
    }

    /// Truncation level actually applied; AF disables truncation.
    pub fn effective_gamma(&self) -> f64 {
        match self.method {
            SolverMethod::Af => f64::INFINITY,
            _ => self.gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Some(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("step must be positive, got {s}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.stop_tol >= 0.0) || !(self.success_threshold > 0.0) {
            return Err(Error::InvalidArgument("stop_tol must be >= 0 and success_threshold > 0".into()));
        }
        self.init.validate()
    }
}

/// Per-iteration history of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterateTrace {
    pub iterations: Vec<usize>,
    /// Amplitude loss (TAF/AF) or intensity loss (WF) at `z_t`.
    pub loss: Vec<f64>,
    /// Relative error at `z_t`; empty when no ground truth is known.
    pub relative_error: Vec<f64>,
    /// `|I_{t+1}|`, the number of measurements contributing to the step
    /// taken from `z_t`.
    pub truncation_size: Vec<usize>,
}

impl IterateTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult<S> {
    pub estimate: Array1<S>,
    pub trace: IterateTrace,
    pub converged: bool,
    pub iters_run: usize,
    /// Relative error of the final estimate, when ground truth is known.
    pub final_error: Option<f64>,
    pub init: Option<InitEstimate<S>>,
}

/// `(1/2m) Σ (ψ_i − |(Az)_i|)²`.
pub fn amplitude_loss<S: Scalar, O: SensingOperator<S> + ?Sized>(
    z: ArrayView1<'_, S>,
    ms: &MeasurementSet<S>,
    op: &O,
) -> Result<f64> {
    check(z, ms, op)?;
    Ok(amplitude_loss_from(op.apply(z).view(), ms.psi.view()))
}

fn amplitude_loss_from<S: Scalar>(u: ArrayView1<'_, S>, psi: ArrayView1<'_, f64>) -> f64 {
    let m = u.len() as f64;
    Zip::from(&u).and(&psi).fold(0.0, |acc, &ui, &p| {
        let r = p - ui.abs();
        acc + r * r
    }) / (2.0 * m)
}

/// `(1/2m) Σ (y_i − |(Az)_i|²)²`.
pub fn intensity_loss<S: Scalar, O: SensingOperator<S> + ?Sized>(
    z: ArrayView1<'_, S>,
    ms: &MeasurementSet<S>,
    op: &O,
) -> Result<f64> {
    check(z, ms, op)?;
    Ok(intensity_loss_from(op.apply(z).view(), ms.y.view()))
}

fn intensity_loss_from<S: Scalar>(u: ArrayView1<'_, S>, y: ArrayView1<'_, f64>) -> f64 {
    let m = u.len() as f64;
    Zip::from(&u).and(&y).fold(0.0, |acc, &ui, &yi| {
        let r = yi - ui.norm_sqr();
        acc + r * r
    }) / (2.0 * m)
}

fn check<S: Scalar, O: SensingOperator<S> + ?Sized>(
    z: ArrayView1<'_, S>,
    ms: &MeasurementSet<S>,
    op: &O,
) -> Result<()> {
    ms.check_operator(op)?;
    crate::error::check_dim(op.dim(), z.len())
}

#[inline]
fn retained(u_abs: f64, psi: f64, gamma: f64) -> bool {
    u_abs >= psi / (1.0 + gamma)
}

/// `{i : |(Az)_i| ≥ ψ_i / (1 + γ)}`, ascending.
pub fn truncation_set<S: Scalar, O: SensingOperator<S> + ?Sized>(
    z: ArrayView1<'_, S>,
    ms: &MeasurementSet<S>,
    op: &O,
    gamma: f64,
) -> Result<Vec<usize>> {
    check(z, ms, op)?;
    let u = op.apply(z);
    Ok(u.iter()
        .zip(&ms.psi)
        .enumerate()
        .filter(|(_, (ui, &p))| retained(ui.abs(), p, gamma))
        .map(|(i, _)| i)
        .collect())
}

/// Fills `v` with the truncated amplitude residual and returns `|I|`.
fn amplitude_residual<S: Scalar>(
    u: ArrayView1<'_, S>,
    psi: ArrayView1<'_, f64>,
    gamma: f64,
    mut v: ndarray::ArrayViewMut1<'_, S>,
) -> usize {
    let mut kept = 0;
    Zip::from(&mut v).and(&u).and(&psi).for_each(|vi, &ui, &p| {
        let a = ui.abs();
        *vi = if retained(a, p, gamma) {
            kept += 1;
            if a > 0.0 {
                ui.scale(1.0 - p / a)
            } else {
                S::zero()
            }
        } else {
            S::zero()
        };
    });
    kept
}

fn intensity_residual<S: Scalar>(u: ArrayView1<'_, S>, y: ArrayView1<'_, f64>, mut v: ndarray::ArrayViewMut1<'_, S>) {
    Zip::from(&mut v).and(&u).and(&y).for_each(|vi, &ui, &yi| *vi = ui.scale(2.0 * (ui.norm_sqr() - yi)));
}

/// Truncated generalized gradient `(1/m) Σ_{i∈I} (u_i − ψ_i u_i/|u_i|) a_i`.
pub fn taf_direction<S: Scalar, O: SensingOperator<S> + ?Sized>(
    z: ArrayView1<'_, S>,
    ms: &MeasurementSet<S>,
    op: &O,
    gamma: f64,
) -> Result<Array1<S>> {
    check(z, ms, op)?;
    let u = op.apply(z);
    let mut v = Array1::zeros(u.len());
    amplitude_residual(u.view(), ms.psi.view(), gamma, v.view_mut());
    let m = ms.len() as f64;
    Ok(op.adjoint(v.view()).mapv(|g| g.scale(1.0 / m)))
}

/// Gradient of the intensity loss, `(2/m) Σ (|u_i|² − y_i) u_i a_i`.
pub fn wf_direction<S: Scalar, O: SensingOperator<S> + ?Sized>(
    z: ArrayView1<'_, S>,
    ms: &MeasurementSet<S>,
    op: &O,
) -> Result<Array1<S>> {
    check(z, ms, op)?;
    let u = op.apply(z);
    let mut v = Array1::zeros(u.len());
    intensity_residual(u.view(), ms.y.view(), v.view_mut());
    let m = ms.len() as f64;
    Ok(op.adjoint(v.view()).mapv(|g| g.scale(1.0 / m)))
}

/// Runs the configured initializer followed by the refinement loop.
pub fn solve<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &SolverConfig,
    seed: TrialSeed,
) -> Result<SolveResult<S>> {
    cfg.validate()?;
    let init = initialize(ms, op, &cfg.init, seed)?;
    let mut res = solve_from(ms, op, cfg, init.z0.clone())?;
    res.init = Some(init);
    Ok(res)
}

/// Refinement loop from a given starting point.
///
/// The step `μ` is applied relative to the design's nominal row energy: the
/// update is `z ← z − μ (n/ρ) · direction` where `ρ` is
/// [`SensingOperator::nominal_row_energy`], so that the same `μ` serves
/// Gaussian rows (`ρ = n`) and unit-norm CDP rows (`ρ = 1`). WF further
/// divides by `‖z₀‖²`.
pub fn solve_from<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &SolverConfig,
    z0: Array1<S>,
) -> Result<SolveResult<S>> {
    cfg.validate()?;
    check(z0.view(), ms, op)?;
    let (n, m) = (op.dim(), op.measurements());
    let truth = ms.truth.as_ref();
    let gamma = cfg.effective_gamma();

    let mut step = cfg.step_for(S::FIELD) * n as f64 / op.nominal_row_energy() / m as f64;
    if cfg.method == SolverMethod::Wf {
        let z0n: f64 = z0.iter().map(|v| v.norm_sqr()).sum();
        if z0n == 0.0 {
            return Err(Error::InvalidArgument("WF step is undefined for z0 = 0".into()));
        }
        step /= z0n;
    }
    let norm_ref = norm_estimate(ms, op, NormEstimator::MeanIntensity)?;
    let blowup = cfg.divergence_factor * norm_ref.max(f64::MIN_POSITIVE);

    let mut z = z0;
    let mut u = Array1::<S>::zeros(m);
    let mut v = Array1::<S>::zeros(m);
    let mut g = Array1::<S>::zeros(n);
    let mut prev = z.clone();
    let mut trace = IterateTrace::default();
    let mut iters_run = 0;

    let record = |trace: &mut IterateTrace, t: usize, u: &Array1<S>, z: &Array1<S>, kept: usize| -> Result<Option<f64>> {
        let err = truth.map(|x| relative_error(z.view(), x.view())).transpose()?;
        trace.iterations.push(t);
        trace.loss.push(match cfg.method {
            SolverMethod::Wf => intensity_loss_from(u.view(), ms.y.view()),
            _ => amplitude_loss_from(u.view(), ms.psi.view()),
        });
        if let Some(e) = err {
            trace.relative_error.push(e);
        }
        trace.truncation_size.push(kept);
        Ok(err)
    };

    for t in 0..cfg.max_iters {
        op.apply_into(z.view(), u.view_mut());
        let kept = match cfg.method {
            SolverMethod::Wf => {
                intensity_residual(u.view(), ms.y.view(), v.view_mut());
                m
            }
            _ => amplitude_residual(u.view(), ms.psi.view(), gamma, v.view_mut()),
        };
        let wants_record = t == 0 || (cfg.trace_every > 0 && t % cfg.trace_every == 0);
        let stop_check = cfg.stop_tol > 0.0 && truth.is_some();
        if wants_record || stop_check {
            let err = if wants_record {
                record(&mut trace, t, &u, &z, kept)?
            } else {
                truth.map(|x| relative_error(z.view(), x.view())).transpose()?
            };
            if stop_check && err.is_some_and(|e| e < cfg.stop_tol) {
                if !wants_record {
                    record(&mut trace, t, &u, &z, kept)?;
                }
                return finish(z, prev, trace, t, ms, cfg);
            }
        }

        op.adjoint_into(v.view(), g.view_mut());
        prev.assign(&z);
        Zip::from(&mut z).and(&g).for_each(|zi, &gi| *zi = *zi - gi.scale(step));
        iters_run = t + 1;

        let zn = z.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !zn.is_finite() || z.iter().any(|a| !a.is_finite()) {
            return Err(Error::Diverged { iteration: iters_run, reason: "non-finite iterate".into() });
        }
        if zn > blowup {
            return Err(Error::Diverged {
                iteration: iters_run,
                reason: format!("|z| = {zn:.3e} exceeds {blowup:.3e}"),
            });
        }
    }

    op.apply_into(z.view(), u.view_mut());
    let kept = match cfg.method {
        SolverMethod::Wf => m,
        _ => amplitude_residual(u.view(), ms.psi.view(), gamma, v.view_mut()),
    };
    record(&mut trace, iters_run, &u, &z, kept)?;
    finish(z, prev, trace, iters_run, ms, cfg)
}

fn finish<S: Scalar>(
    z: Array1<S>,
    prev: Array1<S>,
    trace: IterateTrace,
    iters_run: usize,
    ms: &MeasurementSet<S>,
    cfg: &SolverConfig,
) -> Result<SolveResult<S>> {
    let final_error = trace.relative_error.last().copied();
    let converged = match (final_error, &ms.truth) {
        (Some(e), Some(_)) => e < cfg.success_threshold,
        _ => {
            // No ground truth: judge by the size of the last update.
            let dz: f64 = z.iter().zip(&prev).map(|(a, b)| (*a - *b).norm_sqr()).sum::<f64>().sqrt();
            let zn: f64 = z.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            dz <= cfg.success_threshold * zn
        }
    };
    Ok(SolveResult { estimate: z, trace, converged, iters_run, final_error, init: None })
}
