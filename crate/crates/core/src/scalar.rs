//! Real and complex scalar fields.
//!
//! Every algorithm in the crate is generic over [`Scalar`], which is
//! implemented for `f64` (real field) and `Complex64` (complex field). A
//! problem instance is monomorphic in its scalar type, so real and complex
//! data can never be mixed.

use std::fmt;
use std::str::FromStr;

use ndarray::LinalgScalar;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

/// Runtime tag for the scalar field of a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Real,
    Complex,
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Real => "real",
            Field::Complex => "complex",
        })
    }
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "real" | "r" => Ok(Field::Real),
            "complex" | "c" => Ok(Field::Complex),
            other => Err(format!("unknown field `{other}` (expected real|complex)")),
        }
    }
}

/// Scalar type of a signal and its sensing operator.
pub trait Scalar:
    LinalgScalar + Send + Sync + fmt::Debug + fmt::Display + PartialEq + std::ops::Neg<Output = Self>
{
    const FIELD: Field;

    fn from_real(r: f64) -> Self;
    fn conj(self) -> Self;
    fn abs(self) -> f64;
    fn norm_sqr(self) -> f64;
    fn re(self) -> f64;
    fn im(self) -> f64;
    fn scale(self, r: f64) -> Self;
    fn is_finite(self) -> bool;

    /// `self / |self|`, or zero when `self == 0`.
    fn unit_phase(self) -> Self {
        let a = self.abs();
        if a == 0.0 {
            Self::zero()
        } else {
            self.scale(1.0 / a)
        }
    }

    /// Unimodular element `e^{jφ}`; in the real field only `φ ∈ {0, π}` is
    /// meaningful and the sign of `cos φ` is returned.
    fn from_phase(phi: f64) -> Self;

    /// Argument of the scalar (0 or π in the real field).
    fn arg(self) -> f64;

    /// One draw from N(0, 1) (real) or CN(0, 1) = N(0, 1/2) + jN(0, 1/2).
    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Builds a scalar from real and imaginary parts; the imaginary part is
    /// dropped in the real field.
    fn from_parts(re: f64, im: f64) -> Self;
}

impl Scalar for f64 {
    const FIELD: Field = Field::Real;

    #[inline]
    fn from_real(r: f64) -> Self {
        r
    }
    #[inline]
    fn conj(self) -> Self {
        self
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline]
    fn norm_sqr(self) -> f64 {
        self * self
    }
    #[inline]
    fn re(self) -> f64 {
        self
    }
    #[inline]
    fn im(self) -> f64 {
        0.0
    }
    #[inline]
    fn scale(self, r: f64) -> Self {
        self * r
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn from_phase(phi: f64) -> Self {
        if phi.cos() >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
    fn arg(self) -> f64 {
        if self < 0.0 {
            std::f64::consts::PI
        } else {
            0.0
        }
    }
    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
}

impl Scalar for Complex64 {
    const FIELD: Field = Field::Complex;

    #[inline]
    fn from_real(r: f64) -> Self {
        Complex64::new(r, 0.0)
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    #[inline]
    fn abs(self) -> f64 {
        self.norm()
    }
    #[inline]
    fn norm_sqr(self) -> f64 {
        Complex64::norm_sqr(&self)
    }
    #[inline]
    fn re(self) -> f64 {
        self.re
    }
    #[inline]
    fn im(self) -> f64 {
        self.im
    }
    #[inline]
    fn scale(self, r: f64) -> Self {
        Complex64::new(self.re * r, self.im * r)
    }
    #[inline]
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    fn from_phase(phi: f64) -> Self {
        Complex64::from_polar(1.0, phi)
    }
    fn arg(self) -> f64 {
        Complex64::arg(self)
    }
    fn sample_standard<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im).scale(std::f64::consts::FRAC_1_SQRT_2)
    }
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
}

/// Hermitian inner product `xᴴ y`.
pub fn inner<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter().zip(y).fold(S::zero(), |acc, (&a, &b)| acc + a.conj() * b)
}

/// Euclidean norm.
pub fn norm<S: Scalar>(x: &[S]) -> f64 {
    norm_sqr(x).sqrt()
}

pub fn norm_sqr<S: Scalar>(x: &[S]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_phase_of_zero_is_zero() {
        assert_eq!(0.0f64.unit_phase(), 0.0);
        assert_eq!(Complex64::new(0.0, 0.0).unit_phase(), Complex64::new(0.0, 0.0));
        assert_eq!((-3.0f64).unit_phase(), -1.0);
        let p = Complex64::new(3.0, 4.0).unit_phase();
        assert!((p - Complex64::new(0.6, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn complex_normal_has_unit_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let m: f64 = (0..n)
            .map(|_| Complex64::sample_standard(&mut rng).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((m - 1.0).abs() < 0.02, "{m}");
    }

    #[test]
    fn field_parses() {
        assert_eq!("Real".parse::<Field>().unwrap(), Field::Real);
        assert_eq!("complex".parse::<Field>().unwrap(), Field::Complex);
        assert!("quaternion".parse::<Field>().is_err());
    }
}
