//! Phase-invariant error metrics.
//!
//! A signal is only identifiable up to a global unimodular constant (`±1`
//! in the real field, `e^{jφ}` in the complex one), so every metric here is
//! taken over that equivalence class.

use ndarray::ArrayView1;

use crate::error::{check_dim, Error, Result};
use crate::model::SensingOperator;
use crate::scalar::Scalar;

/// Relative error below which a trial counts as an exact recovery.
pub const DEFAULT_SUCCESS_THRESHOLD: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub dist: f64,
    pub relative_error: f64,
    pub success: bool,
    pub threshold: f64,
}

fn xh_z<S: Scalar>(z: ArrayView1<'_, S>, x: ArrayView1<'_, S>) -> S {
    x.iter().zip(z.iter()).fold(S::zero(), |acc, (&a, &b)| acc + a.conj() * b)
}

fn sq<S: Scalar>(v: ArrayView1<'_, S>) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

/// Distance from `z` to the solution set `{e^{jφ} x}`.
///
/// Real field: `min(‖z − x‖, ‖z + x‖)`. Complex field: the exact minimum
/// over `φ`, `√(‖z‖² + ‖x‖² − 2|xᴴz|)`.
pub fn dist<S: Scalar>(z: ArrayView1<'_, S>, x: ArrayView1<'_, S>) -> Result<f64> {
    check_dim(x.len(), z.len())?;
    let c = xh_z(z, x);
    // Both branches reduce to ‖z‖² + ‖x‖² − 2·max_φ Re(e^{-jφ} xᴴz); in the
    // real field xᴴz is real so |xᴴz| is exactly the better sign.
    let d2 = sq(z) + sq(x) - 2.0 * c.abs();
    if d2 > 1e-6 * (sq(z) + sq(x)) {
        return Ok(d2.sqrt());
    }
    // Cancellation-prone regime: evaluate ‖z − e^{jφ*} x‖ directly.
    let phase = S::from_phase(phase_of(c));
    Ok(z.iter()
        .zip(x.iter())
        .map(|(&a, &b)| (a - phase * b).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

fn phase_of<S: Scalar>(c: S) -> f64 {
    if c == S::zero() {
        0.0
    } else {
        c.arg()
    }
}

/// The global phase `φ` minimizing `‖z − e^{jφ} x‖`.
///
/// Real field: `0` when `‖z − x‖ ≤ ‖z + x‖`, otherwise `π`. Complex field:
/// `arg(xᴴz)`, with `0` when `xᴴz = 0`.
pub fn phase_constant<S: Scalar>(z: ArrayView1<'_, S>, x: ArrayView1<'_, S>) -> Result<f64> {
    check_dim(x.len(), z.len())?;
    let c = xh_z(z, x);
    Ok(if c.re() < 0.0 && S::FIELD == crate::scalar::Field::Real {
        std::f64::consts::PI
    } else {
        phase_of(c)
    })
}

/// `dist(z, x) / ‖x‖`.
pub fn relative_error<S: Scalar>(z: ArrayView1<'_, S>, x: ArrayView1<'_, S>) -> Result<f64> {
    let xn = sq(x).sqrt();
    if xn == 0.0 {
        return Err(Error::InvalidArgument("reference signal has zero norm".into()));
    }
    Ok(dist(z, x)? / xn)
}

/// `dist²(z, x) / ‖x‖²`.
pub fn relative_mse<S: Scalar>(z: ArrayView1<'_, S>, x: ArrayView1<'_, S>) -> Result<f64> {
    relative_error(z, x).map(|e| e * e)
}

pub fn evaluate<S: Scalar>(z: ArrayView1<'_, S>, x: ArrayView1<'_, S>, threshold: f64) -> Result<EvalResult> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("success threshold must be positive, got {threshold}")));
    }
    let d = dist(z, x)?;
    let relative_error = relative_error(z, x)?;
    Ok(EvalResult {
        dist: d,
        relative_error,
        success: relative_error < threshold,
        threshold,
    })
}

/// Fraction of errors strictly below `threshold`.
pub fn success_rate(errors: &[f64], threshold: f64) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("success rate of an empty trial list".into()));
    }
    let wins = errors.iter().filter(|&&e| e < threshold).count();
    Ok(wins as f64 / errors.len() as f64)
}

/// `10 log₁₀(Σ|(Ax)_i|² / Σ η_i²)`.
pub fn snr_db<S: Scalar, O: SensingOperator<S> + ?Sized>(
    op: &O,
    x: ArrayView1<'_, S>,
    eta: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_dim(op.dim(), x.len())?;
    check_dim(op.measurements(), eta.len())?;
    let signal: f64 = op.apply(x).iter().map(|u| u.norm_sqr()).sum();
    snr_db_from_energies(signal, eta.iter().map(|e| e * e).sum())
}

/// SNR in decibels from signal and noise energies.
pub fn snr_db_from_energies(signal: f64, noise: f64) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(Error::InvalidArgument("SNR undefined for a zero noise vector".into()));
    }
    Ok(10.0 * (signal / noise).log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DenseOperator;
    use ndarray::{array, Array1, Array2};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn real_sign_ambiguity() {
        assert_eq!(dist(array![-1.0, 0.0].view(), array![1.0, 0.0].view()).unwrap(), 0.0);
        let d = dist(array![2.0, 0.0].view(), array![1.0, 1.0].view()).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn complex_global_phase() {
        let x = array![c(1.0, 2.0), c(-0.5, 0.3), c(0.0, -1.0)];
        let z = x.mapv(|v| v * c(0.0, 1.0));
        assert!(dist(z.view(), x.view()).unwrap() < 1e-14);
    }

    #[test]
    fn mismatch_is_rejected() {
        assert!(dist(array![1.0].view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn closed_form_matches_phase_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let x = Array1::from_shape_simple_fn(5, || Complex64::sample_standard(&mut rng));
            let z = Array1::from_shape_simple_fn(5, || Complex64::sample_standard(&mut rng));
            let closed = dist(z.view(), x.view()).unwrap();
            let grid = 1_000_000;
            let brute = (0..grid)
                .map(|k| {
                    let ph = Complex64::from_polar(1.0, 2.0 * PI * k as f64 / grid as f64);
                    z.iter().zip(&x).map(|(a, b)| (a - ph * b).norm_sqr()).sum::<f64>().sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((closed - brute).abs() < 1e-8, "{closed} vs {brute}");
        }
    }

    #[test]
    fn phase_constants() {
        let x = array![1.0, -2.0, 0.5];
        assert_eq!(phase_constant(x.view(), x.view()).unwrap(), 0.0);
        assert_eq!(phase_constant((-&x).view(), x.view()).unwrap(), PI);
        let xc = array![c(1.0, 2.0), c(-0.5, 0.3)];
        let rot = Complex64::from_polar(1.0, PI / 3.0);
        let zc = xc.mapv(|v| v * rot);
        assert!((phase_constant(zc.view(), xc.view()).unwrap() - PI / 3.0).abs() < 1e-12);
        let zero = Array1::<Complex64>::zeros(2);
        assert_eq!(phase_constant(zero.view(), xc.view()).unwrap(), 0.0);
    }

    #[test]
    fn success_rates() {
        assert_eq!(success_rate(&[1e-6, 1e-4], 1e-5).unwrap(), 0.5);
        assert_eq!(success_rate(&[0.0, 0.0, 0.0], 1e-5).unwrap(), 1.0);
        assert!(success_rate(&[], 1e-5).is_err());
        // exactly at threshold is a failure
        assert_eq!(success_rate(&[1e-5], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn success_rate_binomial_concentration() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let errs: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..2e-5)).collect();
        let r = success_rate(&errs, 1e-5).unwrap();
        // Binomial(100, 1/2): ±3σ = ±0.15
        assert!((0.35..=0.65).contains(&r), "{r}");
    }

    #[test]
    fn relative_mse_values() {
        let x = array![1.0, 0.0];
        assert_eq!(relative_mse(x.view(), x.view()).unwrap(), 0.0);
        assert_eq!(relative_mse((-&x).view(), x.view()).unwrap(), 0.0);
        let z = array![1.1, 0.0];
        assert!((relative_mse(z.view(), x.view()).unwrap() - 0.01).abs() < 1e-14);
        assert!(relative_mse(z.view(), array![0.0, 0.0].view()).is_err());
    }

    #[test]
    fn evaluate_flags_success() {
        let x = array![1.0, 2.0];
        let z = array![1.0 + 1e-7, 2.0];
        let r = evaluate(z.view(), x.view(), DEFAULT_SUCCESS_THRESHOLD).unwrap();
        assert!(r.success);
        assert!((r.relative_error - r.dist / 5f64.sqrt()).abs() < 1e-20);
        assert!(!evaluate((&x * 1.1).view(), x.view(), 1e-5).unwrap().success);
    }

    #[test]
    fn snr_arithmetic() {
        assert!((snr_db_from_energies(100.0, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(snr_db_from_energies(3.0, 3.0).unwrap(), 0.0);
        assert!(snr_db_from_energies(1.0, 0.0).is_err());

        let op = DenseOperator::from_matrix(Array2::<f64>::eye(2)).unwrap();
        let x = array![6.0, 8.0];
        let eta = array![1.0, 0.0];
        let s1 = snr_db(&op, x.view(), eta.view()).unwrap();
        assert!((s1 - 20.0).abs() < 1e-12);
        let s2 = snr_db(&op, x.view(), (&eta * 10.0).view()).unwrap();
        assert!((s1 - s2 - 20.0).abs() < 1e-12);
        assert!(snr_db(&op, x.view(), array![0.0, 0.0].view()).is_err());
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), n)
    }

    proptest! {
        #[test]
        fn dist_is_symmetric_and_homogeneous(
            a in vec_strategy(6), b in vec_strategy(6), s in -5.0f64..5.0, phi in 0.0f64..6.3
        ) {
            let z: Array1<Complex64> = a.iter().map(|&(r, i)| c(r, i)).collect();
            let x: Array1<Complex64> = b.iter().map(|&(r, i)| c(r, i)).collect();
            let d = dist(z.view(), x.view()).unwrap();
            let scale = 1e-9 * (1.0 + d);
            prop_assert!((d - dist(x.view(), z.view()).unwrap()).abs() < scale);
            let ds = dist((&z * c(s, 0.0)).view(), (&x * c(s, 0.0)).view()).unwrap();
            prop_assert!((ds - s.abs() * d).abs() < 1e-9 * (1.0 + ds));
            let rot = Complex64::from_polar(1.0, phi);
            prop_assert!((dist((&z * rot).view(), x.view()).unwrap() - d).abs() < 1e-9 * (1.0 + d));

            let zr: Array1<f64> = a.iter().map(|p| p.0).collect();
            let xr: Array1<f64> = b.iter().map(|p| p.0).collect();
            let dr = dist(zr.view(), xr.view()).unwrap();
            let direct = (&zr - &xr).mapv(|v| v * v).sum().sqrt().min((&zr + &xr).mapv(|v| v * v).sum().sqrt());
            prop_assert!((dr - direct).abs() < 1e-9 * (1.0 + dr));
        }
    }
}
