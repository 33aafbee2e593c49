//! Sensing operators and phaseless measurement generation.
//!
//! Two measurement maps are provided:
//!
//! * [`DenseOperator`]: an explicit `m × n` design matrix whose `i`-th row is
//!   `a_iᴴ`, so that `(A z)_i = ⟨a_i, z⟩`. Gaussian designs draw rows i.i.d.
//!   from N(0, I) or CN(0, I).
//! * [`CdpOperator`]: coded diffraction patterns `|F D_k x|`, `k = 1..K`,
//!   with unimodular masks drawn from `{1, −1, j, −j}` and the unitary DFT.
//!
//! Both are immutable after construction and can be shared across threads.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1, Axis};
use num_complex::Complex64;
use rand::Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_dim, Error, Result};
use crate::rng::{StreamRole, TrialSeed};
use crate::scalar::{norm_sqr, Field, Scalar};

/// Which family an operator belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Dense,
    Cdp { masks: usize },
}

/// A linear measurement map `z ↦ A z` together with its adjoint.
pub trait SensingOperator<S: Scalar>: Send + Sync {
    /// Signal dimension `n`.
    fn dim(&self) -> usize;

    /// Number of measurements `m`.
    fn measurements(&self) -> usize;

    fn kind(&self) -> OperatorKind;

    /// `out = A z`.
    fn apply_into(&self, z: ArrayView1<'_, S>, out: ArrayViewMut1<'_, S>);

    /// `out = Aᴴ v`.
    fn adjoint_into(&self, v: ArrayView1<'_, S>, out: ArrayViewMut1<'_, S>);

    /// Squared row norms `‖a_i‖²`.
    fn row_norms_sqr(&self) -> Array1<f64>;

    /// Expected squared row norm of the design: `n` for a Gaussian matrix,
    /// `1` for unitary CDP rows. Norm estimation and step-size scaling are
    /// expressed relative to this value so that one set of defaults serves
    /// both models.
    fn nominal_row_energy(&self) -> f64;

    fn apply(&self, z: ArrayView1<'_, S>) -> Array1<S> {
        let mut out = Array1::zeros(self.measurements());
        self.apply_into(z, out.view_mut());
        out
    }

    fn adjoint(&self, v: ArrayView1<'_, S>) -> Array1<S> {
        let mut out = Array1::zeros(self.dim());
        self.adjoint_into(v, out.view_mut());
        out
    }
}

/// Explicit design matrix, one measurement vector per row.
#[derive(Clone)]
pub struct DenseOperator<S> {
    matrix: Array2<S>,
    row_norms_sqr: Array1<f64>,
}

impl<S: Scalar> DenseOperator<S> {
    pub fn from_matrix(matrix: Array2<S>) -> Result<Self> {
        let (m, n) = matrix.dim();
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "design matrix must be non-empty, got {m}x{n}"
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("design matrix has non-finite entries".into()));
        }
        let matrix = matrix.as_standard_layout().into_owned();
        let row_norms_sqr = matrix
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|v| v.norm_sqr()).sum())
            .collect();
        Ok(Self { matrix, row_norms_sqr })
    }

    /// i.i.d. standard (complex) Gaussian rows.
    pub fn gaussian(n: usize, m: usize, seed: TrialSeed) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "gaussian operator needs n >= 1 and m >= 1, got n={n}, m={m}"
            )));
        }
        let mut rng = seed.rng(StreamRole::Operator);
        let matrix = Array2::from_shape_simple_fn((m, n), || S::sample_standard(&mut rng));
        Self::from_matrix(matrix)
    }

    pub fn matrix(&self) -> &Array2<S> {
        &self.matrix
    }
}

impl<S: Scalar> fmt::Debug for DenseOperator<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (m, n) = self.matrix.dim();
        f.debug_struct("DenseOperator")
            .field("field", &S::FIELD)
            .field("m", &m)
            .field("n", &n)
            .finish()
    }
}

impl<S: Scalar> SensingOperator<S> for DenseOperator<S> {
    fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    fn measurements(&self) -> usize {
        self.matrix.nrows()
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Dense
    }

    fn apply_into(&self, z: ArrayView1<'_, S>, mut out: ArrayViewMut1<'_, S>) {
        ndarray::linalg::general_mat_vec_mul(S::one(), &self.matrix, &z, S::zero(), &mut out);
    }

    fn adjoint_into(&self, v: ArrayView1<'_, S>, mut out: ArrayViewMut1<'_, S>) {
        out.fill(S::zero());
        let acc = out.as_slice_mut().expect("output vector must be contiguous");
        for (row, &vi) in self.matrix.axis_iter(Axis(0)).zip(v.iter()) {
            if vi == S::zero() {
                continue;
            }
            let row = row.to_slice().expect("standard layout");
            for (o, &r) in acc.iter_mut().zip(row) {
                *o = *o + r.conj() * vi;
            }
        }
    }

    fn row_norms_sqr(&self) -> Array1<f64> {
        self.row_norms_sqr.clone()
    }

    fn nominal_row_energy(&self) -> f64 {
        self.dim() as f64
    }
}

/// Admissible CDP mask values `{1, −1, j, −j}`.
pub const CDP_ALPHABET: [Complex64; 4] = [
    Complex64::new(1.0, 0.0),
    Complex64::new(-1.0, 0.0),
    Complex64::new(0.0, 1.0),
    Complex64::new(0.0, -1.0),
];

/// Coded diffraction patterns `ψ^(k) = |F D^(k) x|` with the unitary DFT.
///
/// Measurement `k·n + i` is the `i`-th DFT coefficient of the `k`-th masked
/// signal. Every row has unit norm.
#[derive(Clone)]
pub struct CdpOperator {
    masks: Array2<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl CdpOperator {
    /// `K` masks with entries uniform over `{1, −1, j, −j}`.
    pub fn random(n: usize, masks: usize, seed: TrialSeed) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("CDP signal length must be >= 1".into()));
        }
        if masks == 0 {
            return Err(Error::InvalidArgument("CDP needs at least one mask".into()));
        }
        let mut rng = seed.rng(StreamRole::Operator);
        let m = Array2::from_shape_simple_fn((masks, n), || CDP_ALPHABET[rng.random_range(0..4)]);
        Self::from_masks(m)
    }

    /// Uses caller-supplied masks (one per row). Entries must lie in
    /// [`CDP_ALPHABET`].
    pub fn from_masks(masks: Array2<Complex64>) -> Result<Self> {
        let (k, n) = masks.dim();
        if k == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!("mask stack must be non-empty, got {k}x{n}")));
        }
        if let Some(bad) = masks
            .iter()
            .find(|d| !CDP_ALPHABET.iter().any(|a| (*a - **d).norm() < 1e-12))
        {
            return Err(Error::InvalidArgument(format!(
                "mask entry {bad} is not in {{1, -1, j, -j}}"
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Self {
            masks: masks.as_standard_layout().into_owned(),
            forward,
            inverse,
        })
    }

    pub fn masks(&self) -> &Array2<Complex64> {
        &self.masks
    }

    pub fn mask_count(&self) -> usize {
        self.masks.nrows()
    }
}

impl fmt::Debug for CdpOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CdpOperator")
            .field("n", &self.masks.ncols())
            .field("masks", &self.masks.nrows())
            .finish()
    }
}

impl SensingOperator<Complex64> for CdpOperator {
    fn dim(&self) -> usize {
        self.masks.ncols()
    }

    fn measurements(&self) -> usize {
        self.masks.len()
    }

    fn kind(&self) -> OperatorKind {
        OperatorKind::Cdp { masks: self.mask_count() }
    }

    fn apply_into(&self, z: ArrayView1<'_, Complex64>, mut out: ArrayViewMut1<'_, Complex64>) {
        let n = self.dim();
        let scale = 1.0 / (n as f64).sqrt();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let out = out.as_slice_mut().expect("output vector must be contiguous");
        for (mask, block) in self.masks.axis_iter(Axis(0)).zip(out.chunks_exact_mut(n)) {
            for ((b, &d), &zi) in block.iter_mut().zip(mask.iter()).zip(z.iter()) {
                *b = d * zi;
            }
            self.forward.process_with_scratch(block, &mut scratch);
            block.iter_mut().for_each(|b| *b *= scale);
        }
    }

    fn adjoint_into(&self, v: ArrayView1<'_, Complex64>, mut out: ArrayViewMut1<'_, Complex64>) {
        let n = self.dim();
        let scale = 1.0 / (n as f64).sqrt();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inverse.get_inplace_scratch_len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        out.fill(Complex64::new(0.0, 0.0));
        let v = v.as_slice().expect("input vector must be contiguous");
        for (mask, block) in self.masks.axis_iter(Axis(0)).zip(v.chunks_exact(n)) {
            buf.copy_from_slice(block);
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for ((o, &d), &b) in out.iter_mut().zip(mask.iter()).zip(buf.iter()) {
                *o += d.conj() * b * scale;
            }
        }
    }

    fn row_norms_sqr(&self) -> Array1<f64> {
        Array1::ones(self.measurements())
    }

    fn nominal_row_energy(&self) -> f64 {
        1.0
    }
}

/// Phaseless data tied to one operator.
#[derive(Debug, Clone)]
pub struct MeasurementSet<S> {
    /// Amplitudes `ψ_i ≥ 0`.
    pub psi: Array1<f64>,
    /// Intensities `y_i = ψ_i²`.
    pub y: Array1<f64>,
    pub truth: Option<Array1<S>>,
    pub noise_sigma: f64,
    /// The realized additive perturbation `η`, when noise was injected.
    pub noise: Option<Array1<f64>>,
}

impl<S: Scalar> MeasurementSet<S> {
    /// Wraps externally supplied amplitudes.
    pub fn from_amplitudes(psi: Array1<f64>) -> Result<Self> {
        if let Some(bad) = psi.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidArgument(format!("amplitude {bad} is not a finite nonnegative value")));
        }
        let y = psi.mapv(|p| p * p);
        Ok(Self { psi, y, truth: None, noise_sigma: 0.0, noise: None })
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    /// Checks that these data were produced by an operator of this shape.
    pub fn check_operator<O: SensingOperator<S> + ?Sized>(&self, op: &O) -> Result<()> {
        check_dim(op.measurements(), self.psi.len())?;
        if let Some(x) = &self.truth {
            check_dim(op.dim(), x.len())?;
        }
        Ok(())
    }

    /// Returns a copy with every amplitude multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let psi = self.psi.mapv(|p| p * c);
        Self {
            y: psi.mapv(|p| p * p),
            psi,
            truth: self.truth.as_ref().map(|x| x.mapv(|v| v.scale(c))),
            noise_sigma: self.noise_sigma * c,
            noise: self.noise.as_ref().map(|e| e.mapv(|v| v * c)),
        }
    }
}

/// x ∼ N(0, I_n) (real) or CN(0, I_n) (complex).
pub fn random_signal<S: Scalar>(n: usize, seed: TrialSeed) -> Result<Array1<S>> {
    if n == 0 {
        return Err(Error::InvalidArgument("signal dimension must be >= 1".into()));
    }
    let mut rng = seed.rng(StreamRole::Signal);
    Ok(Array1::from_shape_simple_fn(n, || S::sample_standard(&mut rng)))
}

pub fn gaussian_operator<S: Scalar>(n: usize, m: usize, seed: TrialSeed) -> Result<DenseOperator<S>> {
    DenseOperator::gaussian(n, m, seed)
}

pub fn cdp_operator(n: usize, masks: usize, seed: TrialSeed) -> Result<CdpOperator> {
    CdpOperator::random(n, masks, seed)
}

/// `ψ_i = |(A x)_i + η_i|` with real `η_i ∼ N(0, σ²)`.
///
/// In the complex field the real perturbation is added to the complex inner
/// product before taking the modulus.
pub fn generate_measurements<S: Scalar, O: SensingOperator<S> + ?Sized>(
    op: &O,
    x: ArrayView1<'_, S>,
    noise_sigma: f64,
    seed: TrialSeed,
) -> Result<MeasurementSet<S>> {
    check_dim(op.dim(), x.len())?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise sigma must be finite and >= 0, got {noise_sigma}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("signal has non-finite entries".into()));
    }
    let u = op.apply(x);
    let (psi, noise) = if noise_sigma > 0.0 {
        let mut rng = seed.rng(StreamRole::Noise);
        let eta = Array1::from_shape_simple_fn(u.len(), || noise_sigma * f64::sample_standard(&mut rng));
        let psi = ndarray::Zip::from(&u).and(&eta).map_collect(|&ui, &e| (ui + S::from_real(e)).abs());
        (psi, Some(eta))
    } else {
        (u.mapv(|ui| ui.abs()), None)
    };
    let y = psi.mapv(|p| p * p);
    Ok(MeasurementSet {
        psi,
        y,
        truth: Some(x.to_owned()),
        noise_sigma,
        noise,
    })
}

/// A fully materialized problem instance, as read back from an exported file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub field: Field,
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub seed: u64,
    pub kind: OperatorKind,
    /// Matrix rows (dense) or masks (CDP), as `(re, im)` pairs.
    pub entries: Array2<Complex64>,
    pub psi: Array1<f64>,
}

impl ProblemFile {
    pub fn dense_operator<S: Scalar>(&self) -> Result<DenseOperator<S>> {
        if S::FIELD != self.field || self.kind != OperatorKind::Dense {
            return Err(Error::InvalidArgument(format!(
                "file holds a {:?} {} operator",
                self.kind, self.field
            )));
        }
        DenseOperator::from_matrix(self.entries.mapv(|c| S::from_parts(c.re, c.im)))
    }

    pub fn cdp_operator(&self) -> Result<CdpOperator> {
        match self.kind {
            OperatorKind::Cdp { .. } => CdpOperator::from_masks(self.entries.clone()),
            OperatorKind::Dense => Err(Error::InvalidArgument("file holds a dense operator".into())),
        }
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_entry<S: Scalar>(v: S) -> String {
    match S::FIELD {
        Field::Real => fmt17(v.re()),
        Field::Complex => format!("{} {}", fmt17(v.re()), fmt17(v.im())),
    }
}

/// Writes a problem instance as plain text.
///
/// Layout: `key value` header lines (`field`, `kind`, `n`, `m`, `masks` for
/// CDP, `sigma`, `seed`), then one line per matrix row or mask (complex
/// entries as `re im` pairs), then `psi` followed by one amplitude per line.
/// All numbers carry 17 significant digits.
pub fn export_problem<S, O, W>(w: &mut W, op: &O, ms: &MeasurementSet<S>, seed: u64) -> Result<()>
where
    S: Scalar,
    O: ExportableOperator<S> + ?Sized,
    W: Write,
{
    ms.check_operator(op)?;
    writeln!(w, "field {}", S::FIELD)?;
    match op.kind() {
        OperatorKind::Dense => writeln!(w, "kind dense")?,
        OperatorKind::Cdp { masks } => {
            writeln!(w, "kind cdp")?;
            writeln!(w, "masks {masks}")?;
        }
    }
    writeln!(w, "n {}", op.dim())?;
    writeln!(w, "m {}", op.measurements())?;
    writeln!(w, "sigma {}", fmt17(ms.noise_sigma))?;
    writeln!(w, "seed {seed}")?;
    writeln!(w, "entries")?;
    for row in op.entries().axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|&v| write_entry(v)).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    writeln!(w, "psi")?;
    for &p in &ms.psi {
        writeln!(w, "{}", fmt17(p))?;
    }
    Ok(())
}

/// Operators whose defining entries can be written out.
pub trait ExportableOperator<S: Scalar>: SensingOperator<S> {
    fn entries(&self) -> Array2<S>;
}

impl<S: Scalar> ExportableOperator<S> for DenseOperator<S> {
    fn entries(&self) -> Array2<S> {
        self.matrix.clone()
    }
}

impl ExportableOperator<Complex64> for CdpOperator {
    fn entries(&self) -> Array2<Complex64> {
        self.masks.clone()
    }
}

/// Parses the format produced by [`export_problem`].
pub fn import_problem<R: BufRead>(r: R) -> Result<ProblemFile> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, Ok(l))) => Ok((i + 1, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Parse { line: 0, msg: format!("unexpected end of file, expected {what}") }),
        }
    };
    let parse_err = |line: usize, msg: String| Error::Parse { line, msg };

    let mut header = std::collections::HashMap::new();
    loop {
        let (ln, l) = next("header")?;
        let l = l.trim().to_string();
        if l == "entries" {
            break;
        }
        let (k, v) = l
            .split_once(' ')
            .ok_or_else(|| parse_err(ln, format!("expected `key value`, got `{l}`")))?;
        header.insert(k.to_string(), (ln, v.trim().to_string()));
    }
    let get = |k: &str| -> Result<&(usize, String)> {
        header.get(k).ok_or(Error::Parse { line: 0, msg: format!("missing header key `{k}`") })
    };
    let num = |k: &str| -> Result<usize> {
        let (ln, v) = get(k)?;
        v.parse().map_err(|e| parse_err(*ln, format!("{k}: {e}")))
    };
    let (fl, fv) = get("field")?;
    let field: Field = fv.parse().map_err(|e| parse_err(*fl, e))?;
    let n = num("n")?;
    let m = num("m")?;
    let (sl, sv) = get("sigma")?;
    let sigma: f64 = sv.parse().map_err(|e| parse_err(*sl, format!("sigma: {e}")))?;
    let (dl, dv) = get("seed")?;
    let seed: u64 = dv.parse().map_err(|e| parse_err(*dl, format!("seed: {e}")))?;
    let (kl, kv) = get("kind")?;
    let (kind, rows) = match kv.as_str() {
        "dense" => (OperatorKind::Dense, m),
        "cdp" => {
            let k = num("masks")?;
            if k * n != m {
                return Err(parse_err(*kl, format!("masks*n = {} but m = {m}", k * n)));
            }
            (OperatorKind::Cdp { masks: k }, k)
        }
        other => return Err(parse_err(*kl, format!("unknown operator kind `{other}`"))),
    };
    let per_entry = if field == Field::Complex { 2 } else { 1 };
    let mut entries = Array2::zeros((rows, n));
    for mut row in entries.axis_iter_mut(Axis(0)) {
        let (ln, l) = next("matrix row")?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(ln, format!("{t}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != n * per_entry {
            return Err(parse_err(ln, format!("expected {} numbers, got {}", n * per_entry, vals.len())));
        }
        for (dst, chunk) in row.iter_mut().zip(vals.chunks_exact(per_entry)) {
            *dst = Complex64::new(chunk[0], chunk.get(1).copied().unwrap_or(0.0));
        }
    }
    let (ln, l) = next("psi")?;
    if l.trim() != "psi" {
        return Err(parse_err(ln, format!("expected `psi`, got `{l}`")));
    }
    let mut psi = Array1::zeros(m);
    for p in psi.iter_mut() {
        let (ln, l) = next("amplitude")?;
        *p = l.trim().parse().map_err(|e| parse_err(ln, format!("{l}: {e}")))?;
    }
    Ok(ProblemFile { field, n, m, sigma, seed, kind, entries, psi })
}

/// `Σ_i y_i`, used by the CDP energy identity `Σ y = K ‖x‖²`.
pub fn total_intensity<S: Scalar>(ms: &MeasurementSet<S>) -> f64 {
    ms.y.sum()
}

/// Squared norm of a signal.
pub fn energy<S: Scalar>(x: ArrayView1<'_, S>) -> f64 {
    match x.as_slice() {
        Some(s) => norm_sqr(s),
        None => x.iter().map(|v| v.norm_sqr()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gaussian_operator_is_deterministic() {
        let a = DenseOperator::<f64>::gaussian(3, 5, TrialSeed::single(7)).unwrap();
        let b = DenseOperator::<f64>::gaussian(3, 5, TrialSeed::single(7)).unwrap();
        assert_eq!(a.matrix().dim(), (5, 3));
        assert_eq!(a.matrix(), b.matrix());
        let c = DenseOperator::<f64>::gaussian(3, 5, TrialSeed::single(8)).unwrap();
        assert_ne!(a.matrix(), c.matrix());
    }

    #[test]
    fn gaussian_operator_rejects_empty_shapes() {
        assert!(DenseOperator::<f64>::gaussian(0, 5, TrialSeed::single(1)).is_err());
        assert!(DenseOperator::<Complex64>::gaussian(3, 0, TrialSeed::single(1)).is_err());
    }

    #[test]
    fn real_gaussian_second_moment() {
        let a = DenseOperator::<f64>::gaussian(1000, 6000, TrialSeed::single(11)).unwrap();
        let mean = a.matrix().column(0).iter().map(|v| v * v).sum::<f64>() / 6000.0;
        assert!((0.95..=1.05).contains(&mean), "{mean}");
    }

    #[test]
    fn complex_gaussian_second_moment() {
        let a = DenseOperator::<Complex64>::gaussian(100, 600, TrialSeed::single(12)).unwrap();
        let mean = a.matrix().column(0).iter().map(|v| v.norm_sqr()).sum::<f64>() / 600.0;
        assert!((0.9..=1.1).contains(&mean), "{mean}");
    }

    #[test]
    fn cdp_identity_mask_on_canonical_vector() {
        let op = CdpOperator::from_masks(Array2::from_elem((1, 4), c(1.0, 0.0))).unwrap();
        let x = array![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let ms = generate_measurements(&op, x.view(), 0.0, TrialSeed::single(0)).unwrap();
        for p in &ms.psi {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn cdp_preserves_energy_per_mask() {
        let op = CdpOperator::random(64, 6, TrialSeed::single(5)).unwrap();
        assert_eq!(op.measurements(), 384);
        let x = random_signal::<Complex64>(64, TrialSeed::single(6)).unwrap();
        let u = op.apply(x.view());
        let ratio = energy(u.view()).sqrt() / (6f64.sqrt() * energy(x.view()).sqrt());
        assert!((ratio - 1.0).abs() < 1e-10);
        assert!(op.masks().iter().all(|d| (d.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn cdp_rejects_bad_masks() {
        assert!(CdpOperator::random(8, 0, TrialSeed::single(1)).is_err());
        let bad = Array2::from_elem((1, 4), c(0.5, 0.5));
        assert!(CdpOperator::from_masks(bad).is_err());
    }

    #[test]
    fn cdp_adjoint_matches_explicit_matrix() {
        let n = 8;
        let op = CdpOperator::random(n, 2, TrialSeed::single(9)).unwrap();
        let m = op.measurements();
        // Column j of A is A e_j.
        let mut dense = Array2::<Complex64>::zeros((m, n));
        for j in 0..n {
            let mut e = Array1::zeros(n);
            e[j] = c(1.0, 0.0);
            dense.column_mut(j).assign(&op.apply(e.view()));
        }
        let v = Array1::from_shape_fn(m, |i| c((i as f64).sin(), (i as f64 * 0.7).cos()));
        let explicit = dense.t().mapv(|a| a.conj()).dot(&v);
        let fast = op.adjoint(v.view());
        let err = (&explicit - &fast).iter().map(|d| d.norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-10 * energy(explicit.view()).sqrt(), "{err}");
        // every row of the explicit matrix has unit norm
        for row in dense.axis_iter(Axis(0)) {
            let r: f64 = row.iter().map(|a| a.norm_sqr()).sum();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_design_gives_moduli() {
        let op = DenseOperator::from_matrix(Array2::<f64>::eye(3)).unwrap();
        let x = array![3.0, -4.0, 0.0];
        let ms = generate_measurements(&op, x.view(), 0.0, TrialSeed::single(0)).unwrap();
        assert_eq!(ms.psi, array![3.0, 4.0, 0.0]);
        assert_eq!(ms.y, array![9.0, 16.0, 0.0]);
        assert!(ms.noise.is_none());
    }

    #[test]
    fn measurement_dimension_mismatch() {
        let op = DenseOperator::<f64>::gaussian(3, 5, TrialSeed::single(1)).unwrap();
        let x = array![1.0, 2.0];
        assert!(matches!(
            generate_measurements(&op, x.view(), 0.0, TrialSeed::single(0)),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(generate_measurements(&op, array![1.0, 2.0, 3.0].view(), -1.0, TrialSeed::single(0)).is_err());
    }

    #[test]
    fn noise_perturbation_is_half_normal_bounded() {
        let seed = TrialSeed::single(21);
        let op = DenseOperator::<f64>::gaussian(100, 600, seed).unwrap();
        let x = random_signal::<f64>(100, seed).unwrap();
        let xn = energy(x.view()).sqrt();
        let sigma = 0.2 * xn;
        let clean = op.apply(x.view()).mapv(f64::abs);
        let ms = generate_measurements(&op, x.view(), sigma, seed).unwrap();
        let mean_dev = (&ms.psi - &clean).mapv(f64::abs).mean().unwrap();
        let bound = sigma * (2.0 / std::f64::consts::PI).sqrt() * 1.2;
        assert!(mean_dev <= bound, "{mean_dev} > {bound}");
        // η realized exactly as recorded
        let eta = ms.noise.as_ref().unwrap();
        let rebuilt = (&op.apply(x.view()) + eta).mapv(f64::abs);
        assert!((&rebuilt - &ms.psi).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn export_import_round_trip() {
        let seed = TrialSeed::single(4);
        let op = DenseOperator::<Complex64>::gaussian(3, 7, seed).unwrap();
        let x = random_signal::<Complex64>(3, seed).unwrap();
        let ms = generate_measurements(&op, x.view(), 0.1, seed).unwrap();
        let mut buf = Vec::new();
        export_problem(&mut buf, &op, &ms, 4).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("field complex\nkind dense\nn 3\nm 7\n"));
        let pf = import_problem(buf.as_slice()).unwrap();
        assert_eq!((pf.n, pf.m, pf.seed, pf.field), (3, 7, 4, Field::Complex));
        assert_eq!(pf.psi, ms.psi);
        assert_eq!(pf.dense_operator::<Complex64>().unwrap().matrix(), op.matrix());
        assert!(pf.dense_operator::<f64>().is_err());

        let cdp = CdpOperator::random(5, 2, seed).unwrap();
        let ms = generate_measurements(&cdp, x.view().to_owned().into_shape_with_order(3).unwrap().view(), 0.0, seed);
        assert!(ms.is_err());
        let xc = random_signal::<Complex64>(5, seed).unwrap();
        let ms = generate_measurements(&cdp, xc.view(), 0.0, seed).unwrap();
        let mut buf = Vec::new();
        export_problem(&mut buf, &cdp, &ms, 4).unwrap();
        let pf = import_problem(buf.as_slice()).unwrap();
        assert_eq!(pf.kind, OperatorKind::Cdp { masks: 2 });
        assert_eq!(pf.cdp_operator().unwrap().masks(), cdp.masks());
    }

    #[test]
    fn import_rejects_garbage() {
        assert!(import_problem("field real\nkind dense\nn 1\nm 1\nsigma 0\nseed 1\nentries\nabc\n".as_bytes()).is_err());
        assert!(import_problem("field real\n".as_bytes()).is_err());
    }
}
