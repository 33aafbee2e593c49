//! Initial estimates for the refinement stage.
//!
//! All initializers are matrix-free: each builds a Hermitian PSD map of the
//! form `u ↦ Aᴴ (w ⊙ A u)` for some per-measurement weights `w` and extracts
//! an extreme eigenvector with power iteration.
//!
//! * orthogonality-promoting: weights `1 / (|Ī₀| ‖a_i‖²)` on the `|Ī₀|`
//!   measurements with the largest normalized amplitudes `ψ_i / ‖a_i‖`, leading
//!   eigenvector.
//! * its min-eigenvalue form: the same weights on the complement set, smallest
//!   eigenvector via shifted power iteration.
//! * spectral: weights `y_i / m` on every measurement.
//! * truncated spectral: weights `y_i / m` on `{i : y_i ≤ α² mean(y)}`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, Zip};
use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::model::{MeasurementSet, SensingOperator};
use crate::rng::{StreamRole, TrialSeed};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMethod {
    OrthogonalityPromoting,
    Spectral,
    TruncatedSpectral,
    OrthogonalityPromotingMinEig,
}

impl InitMethod {
    pub const ALL: [InitMethod; 4] = [
        InitMethod::OrthogonalityPromoting,
        InitMethod::Spectral,
        InitMethod::TruncatedSpectral,
        InitMethod::OrthogonalityPromotingMinEig,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            InitMethod::OrthogonalityPromoting => "orth",
            InitMethod::Spectral => "spectral",
            InitMethod::TruncatedSpectral => "trunc-spectral",
            InitMethod::OrthogonalityPromotingMinEig => "orth-mineig",
        }
    }
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InitMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "orth" | "orthogonality-promoting" => Ok(InitMethod::OrthogonalityPromoting),
            "spectral" => Ok(InitMethod::Spectral),
            "trunc-spectral" | "truncated-spectral" => Ok(InitMethod::TruncatedSpectral),
            "orth-mineig" | "mineig" => Ok(InitMethod::OrthogonalityPromotingMinEig),
            other => Err(format!(
                "unknown initializer `{other}` (expected orth|spectral|trunc-spectral|orth-mineig)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormEstimator {
    /// `√(mean y)`, corrected for the nominal row energy of the design.
    MeanIntensity,
    /// `√(n Σ y_i / Σ ‖a_i‖²)`.
    RowNormRatio,
}

impl FromStr for NormEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mean" | "mean-intensity" => Ok(NormEstimator::MeanIntensity),
            "rownorm" | "row-norm-ratio" => Ok(NormEstimator::RowNormRatio),
            other => Err(format!("unknown norm estimator `{other}` (expected mean|rownorm)")),
        }
    }
}

impl fmt::Display for NormEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormEstimator::MeanIntensity => "mean",
            NormEstimator::RowNormRatio => "rownorm",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub method: InitMethod,
    pub power_iters: usize,
    /// `|Ī₀| / m`; the set size is `⌈m · fraction⌉`.
    pub complement_fraction: Ratio<usize>,
    /// Screening constant `α` of the truncated spectral method.
    pub spectral_trunc_alpha: f64,
    pub norm_estimator: NormEstimator,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            method: InitMethod::OrthogonalityPromoting,
            power_iters: 50,
            complement_fraction: Ratio::new(1, 6),
            spectral_trunc_alpha: 3.0,
            norm_estimator: NormEstimator::MeanIntensity,
        }
    }
}

impl InitConfig {
    pub fn with_method(method: InitMethod) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.power_iters == 0 {
            return Err(Error::InvalidArgument("power_iters must be >= 1".into()));
        }
        let f = self.complement_fraction;
        if *f.numer() == 0 || f > Ratio::from_integer(1) {
            return Err(Error::InvalidArgument(format!("complement fraction {f} not in (0, 1]")));
        }
        if !(self.spectral_trunc_alpha > 0.0) {
            return Err(Error::InvalidArgument("spectral_trunc_alpha must be positive".into()));
        }
        Ok(())
    }

    /// `|Ī₀| = ⌈m · fraction⌉`.
    pub fn complement_size(&self, m: usize) -> usize {
        let f = self.complement_fraction;
        (m * f.numer()).div_ceil(*f.denom())
    }
}

#[derive(Debug, Clone)]
pub struct InitEstimate<S> {
    pub z0: Array1<S>,
    /// Unit-norm direction `z̃₀`.
    pub direction: Array1<S>,
    pub norm_estimate: f64,
    /// Measurement indices the initializer's matrix was built from.
    pub selected_indices: Vec<usize>,
}

/// Indices of the `size` largest normalized amplitudes `ψ_i / ‖a_i‖`, ties
/// broken towards the lower index. Returned in ascending index order.
pub fn select_complement_indices<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    size: usize,
) -> Result<Vec<usize>> {
    ms.check_operator(op)?;
    let m = ms.len();
    if size == 0 || size > m {
        return Err(Error::InvalidArgument(format!("complement size {size} not in [1, {m}]")));
    }
    let ratios = normalized_amplitudes(ms, op);
    Ok(top_indices(ratios.view(), size))
}

/// `ψ_i / ‖a_i‖`, with zero-norm rows mapped to zero.
pub fn normalized_amplitudes<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
) -> Array1<f64> {
    Zip::from(&ms.psi)
        .and(&op.row_norms_sqr())
        .map_collect(|&p, &r| if r > 0.0 { p / r.sqrt() } else { 0.0 })
}

fn top_indices(values: ArrayView1<'_, f64>, size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut picked = order[..size].to_vec();
    picked.sort_unstable();
    picked
}

/// The matrix-free map `u ↦ Aᴴ (w ⊙ A u)`.
pub struct WeightedGram<'a, S: Scalar, O: SensingOperator<S> + ?Sized> {
    op: &'a O,
    weights: Array1<f64>,
    buf: Array1<S>,
}

impl<'a, S: Scalar, O: SensingOperator<S> + ?Sized> WeightedGram<'a, S, O> {
    pub fn new(op: &'a O, weights: Array1<f64>) -> Result<Self> {
        crate::error::check_dim(op.measurements(), weights.len())?;
        Ok(Self { op, weights, buf: Array1::zeros(op.measurements()) })
    }

    pub fn apply(&mut self, u: ArrayView1<'_, S>) -> Array1<S> {
        self.op.apply_into(u, self.buf.view_mut());
        Zip::from(&mut self.buf).and(&self.weights).for_each(|b, &w| *b = b.scale(w));
        self.op.adjoint(self.buf.view())
    }
}

/// Power iteration from a given start vector: `iters` rounds of matvec and
/// renormalization. Returns the final unit vector.
pub fn power_iteration_from<S, F>(mut matvec: F, start: Array1<S>, iters: usize) -> Result<Array1<S>>
where
    S: Scalar,
    F: FnMut(ArrayView1<'_, S>) -> Array1<S>,
{
    if iters == 0 {
        return Err(Error::InvalidArgument("power iteration needs at least one step".into()));
    }
    let mut v = normalized(start).ok_or(Error::DegeneratePowerIteration { step: 0 })?;
    for step in 1..=iters {
        v = normalized(matvec(v.view())).ok_or(Error::DegeneratePowerIteration { step })?;
    }
    Ok(v)
}

/// Power iteration from a seeded random unit vector.
pub fn power_iteration<S, F>(matvec: F, n: usize, iters: usize, seed: TrialSeed) -> Result<Array1<S>>
where
    S: Scalar,
    F: FnMut(ArrayView1<'_, S>) -> Array1<S>,
{
    power_iteration_from(matvec, random_start(n, seed), iters)
}

fn random_start<S: Scalar>(n: usize, seed: TrialSeed) -> Array1<S> {
    let mut rng = seed.rng(StreamRole::PowerStart);
    Array1::from_shape_simple_fn(n, || S::sample_standard(&mut rng))
}

fn normalized<S: Scalar>(v: Array1<S>) -> Option<Array1<S>> {
    let nrm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    if nrm > 0.0 && nrm.is_finite() {
        Some(v.mapv(|a| a.scale(1.0 / nrm)))
    } else {
        None
    }
}

/// Estimates `‖x‖` from the intensities.
pub fn norm_estimate<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    which: NormEstimator,
) -> Result<f64> {
    ms.check_operator(op)?;
    if ms.is_empty() {
        return Err(Error::InvalidArgument("norm estimate needs at least one measurement".into()));
    }
    let total = ms.y.sum();
    let n = op.dim() as f64;
    Ok(match which {
        NormEstimator::MeanIntensity => (total / ms.len() as f64 * n / op.nominal_row_energy()).sqrt(),
        NormEstimator::RowNormRatio => (n * total / op.row_norms_sqr().sum()).sqrt(),
    })
}

fn finish<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    direction: Array1<S>,
    selected_indices: Vec<usize>,
) -> Result<InitEstimate<S>> {
    let norm_estimate = norm_estimate(ms, op, cfg.norm_estimator)?;
    Ok(InitEstimate {
        z0: direction.mapv(|v| v.scale(norm_estimate)),
        direction,
        norm_estimate,
        selected_indices,
    })
}

/// Weights `1 / (|set| ‖a_i‖²)` on `set`, zero elsewhere.
fn normalized_row_weights<S: Scalar, O: SensingOperator<S> + ?Sized>(op: &O, set: &[usize]) -> Array1<f64> {
    let rn = op.row_norms_sqr();
    let mut w = Array1::zeros(op.measurements());
    let k = set.len() as f64;
    for &i in set {
        if rn[i] > 0.0 {
            w[i] = 1.0 / (k * rn[i]);
        }
    }
    w
}

/// Leading eigenvector of `Ȳ₀ = (1/|Ī₀|) Σ_{i∈Ī₀} a_i a_iᴴ / ‖a_i‖²`, scaled by
/// the configured norm estimate.
pub fn orthogonality_promoting_init<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    seed: TrialSeed,
) -> Result<InitEstimate<S>> {
    cfg.validate()?;
    let size = cfg.complement_size(ms.len());
    let selected = select_complement_indices(ms, op, size)?;
    let mut gram = WeightedGram::new(op, normalized_row_weights(op, &selected))?;
    let dir = power_iteration(|u| gram.apply(u), op.dim(), cfg.power_iters, seed)?;
    finish(ms, op, cfg, dir, selected)
}

/// Smallest eigenvector of `Y₀ = (1/|I₀|) Σ_{i∈I₀} a_i a_iᴴ / ‖a_i‖²` over the
/// measurements *not* in `Ī₀`.
///
/// Runs power iteration on `c I − Y₀` where the shift `c` is a slightly
/// inflated estimate of `λ_max(Y₀)` from a preliminary power iteration.
pub fn orthogonality_promoting_min_eig<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    seed: TrialSeed,
) -> Result<InitEstimate<S>> {
    cfg.validate()?;
    let m = ms.len();
    let size = cfg.complement_size(m);
    let selected = select_complement_indices(ms, op, size)?;
    let mut in_bar = vec![false; m];
    selected.iter().for_each(|&i| in_bar[i] = true);
    let rest: Vec<usize> = (0..m).filter(|&i| !in_bar[i]).collect();
    if rest.is_empty() {
        return Err(Error::EmptyIndexSet("min-eig initializer needs |Ī₀| < m"));
    }
    let mut gram = WeightedGram::new(op, normalized_row_weights(op, &rest))?;
    let shift = shift_bound(&mut gram, op.dim(), cfg.power_iters, seed)?;
    let dir = power_iteration(
        |u| {
            let yu = gram.apply(u);
            Zip::from(&yu).and(&u).map_collect(|&a, &b| b.scale(shift) - a)
        },
        op.dim(),
        cfg.power_iters,
        TrialSeed::new(seed.key(), 1, 0),
    )?;
    finish(ms, op, cfg, dir, rest)
}

/// Upper-bound estimate of the largest eigenvalue of a PSD map.
fn shift_bound<S: Scalar, O: SensingOperator<S> + ?Sized>(
    gram: &mut WeightedGram<'_, S, O>,
    n: usize,
    iters: usize,
    seed: TrialSeed,
) -> Result<f64> {
    let v = power_iteration(|u| gram.apply(u), n, iters.min(30), seed)?;
    let lambda = rayleigh(gram.apply(v.view()).view(), v.view());
    Ok(1.05 * lambda)
}

fn rayleigh<S: Scalar>(av: ArrayView1<'_, S>, v: ArrayView1<'_, S>) -> f64 {
    v.iter().zip(av.iter()).fold(S::zero(), |acc, (&a, &b)| acc + a.conj() * b).re()
}

/// Leading eigenvector of `Y = (1/m) Σ_{i∈T} y_i a_i a_iᴴ`.
fn spectral_on<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    seed: TrialSeed,
    keep: Vec<usize>,
) -> Result<InitEstimate<S>> {
    let m = ms.len() as f64;
    let mut w = Array1::zeros(ms.len());
    for &i in &keep {
        w[i] = ms.y[i] / m;
    }
    let mut gram = WeightedGram::new(op, w)?;
    let dir = power_iteration(|u| gram.apply(u), op.dim(), cfg.power_iters, seed)?;
    finish(ms, op, cfg, dir, keep)
}

pub fn spectral_init<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    seed: TrialSeed,
) -> Result<InitEstimate<S>> {
    cfg.validate()?;
    ms.check_operator(op)?;
    spectral_on(ms, op, cfg, seed, (0..ms.len()).collect())
}

/// Spectral initialization restricted to `{i : y_i ≤ α² mean(y)}`.
pub fn truncated_spectral_init<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    seed: TrialSeed,
) -> Result<InitEstimate<S>> {
    cfg.validate()?;
    ms.check_operator(op)?;
    let keep = truncated_spectral_set(ms.y.view(), cfg.spectral_trunc_alpha);
    if keep.is_empty() {
        return Err(Error::EmptyIndexSet("truncated spectral screening removed every measurement"));
    }
    spectral_on(ms, op, cfg, seed, keep)
}

/// `{i : y_i ≤ α² · mean(y)}`.
pub fn truncated_spectral_set(y: ArrayView1<'_, f64>, alpha: f64) -> Vec<usize> {
    let bound = alpha * alpha * y.mean().unwrap_or(0.0);
    y.iter().enumerate().filter(|(_, &v)| v <= bound).map(|(i, _)| i).collect()
}

/// Dispatches on `cfg.method`.
pub fn initialize<S: Scalar, O: SensingOperator<S> + ?Sized>(
    ms: &MeasurementSet<S>,
    op: &O,
    cfg: &InitConfig,
    seed: TrialSeed,
) -> Result<InitEstimate<S>> {
    match cfg.method {
        InitMethod::OrthogonalityPromoting => orthogonality_promoting_init(ms, op, cfg, seed),
        InitMethod::Spectral => spectral_init(ms, op, cfg, seed),
        InitMethod::TruncatedSpectral => truncated_spectral_init(ms, op, cfg, seed),
        InitMethod::OrthogonalityPromotingMinEig => orthogonality_promoting_min_eig(ms, op, cfg, seed),
    }
}
