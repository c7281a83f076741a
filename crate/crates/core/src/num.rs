//! Scalar abstraction: every numeric kernel is generic over [`Real`].

use num_complex::Complex;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the library is generic over: `f32` or `f64`.
///
/// `nalgebra::RealField` supplies the transcendental functions and the
/// matrix backend; the `num_traits` conversions cover literals and counts.
pub trait Real:
    nalgebra::RealField + FromPrimitive + ToPrimitive + Copy + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal (exact for `f64` itself).
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    /// Conversion from a count.
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count fits scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("real scalar converts to f64")
    }

    fn is_finite_real(self) -> bool;
}

impl Real for f32 {
    fn is_finite_real(self) -> bool {
        self.is_finite()
    }
}

impl Real for f64 {
    fn is_finite_real(self) -> bool {
        self.is_finite()
    }
}

/// Unit imaginary for the given scalar.
pub fn imag_unit<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

/// `exp(j x)` as a complex scalar.
pub fn cis<T: Real>(x: T) -> Complex<T> {
    Complex::new(x.cos(), x.sin())
}

/// Modulus of a complex scalar (avoids the `num_traits::Float` bound that
/// `Complex::norm` would demand).
pub fn cmod<T: Real>(z: Complex<T>) -> T {
    nalgebra::ComplexField::modulus(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cis_unit_modulus() {
        let z = cis(0.7f64);
        assert!((z.norm() - 1.0).abs() < 1e-15);
        let z32 = cis(0.7f32);
        assert!((z32.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn literal_roundtrip() {
        assert_eq!(f64::lit(2.5), 2.5);
        assert_eq!(f32::of_usize(7), 7.0);
    }
}
