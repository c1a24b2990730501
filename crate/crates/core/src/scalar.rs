//! Scalar abstraction for the lattice dynamic programs.
//!
//! Every exact computation (killed-walk distributions, finite-horizon
//! harmonic values, backward tables) is written once against [`Scalar`] and
//! instantiated with `f64` for production runs and with [`Exact`]
//! (arbitrary-precision rationals) when an identity has to hold with zero
//! rounding error.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, NumAssign, Signed, ToPrimitive, Zero};

use crate::environment::LatticeAtom;

/// Arbitrary-precision rational scalar.
pub type Exact = BigRational;

/// Probability masses and expectations carried by the lattice dynamic
/// programs.
pub trait Scalar:
    Clone + Debug + PartialOrd + Num + NumAssign + Signed + Send + Sync + 'static
{
    /// Mass below which the dynamic programs may drop an edge state.
    /// `None` disables pruning.
    const PRUNE_BELOW: Option<f64>;

    /// Probability of a lattice atom in this scalar type.
    fn from_atom(atom: &LatticeAtom) -> Self;

    fn from_lattice(v: i64) -> Self;

    fn to_f64(&self) -> f64;

    fn negligible(&self) -> bool {
        match Self::PRUNE_BELOW {
            Some(eps) => self.to_f64().abs() < eps,
            None => self.is_zero(),
        }
    }
}

impl Scalar for f64 {
    const PRUNE_BELOW: Option<f64> = Some(1e-16);

    fn from_atom(atom: &LatticeAtom) -> Self {
        atom.prob
    }

    fn from_lattice(v: i64) -> Self {
        v as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    const PRUNE_BELOW: Option<f64> = Some(1e-16);

    fn from_atom(atom: &LatticeAtom) -> Self {
        atom.prob as f32
    }

    fn from_lattice(v: i64) -> Self {
        v as f32
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Scalar for BigRational {
    const PRUNE_BELOW: Option<f64> = None;

    fn from_atom(atom: &LatticeAtom) -> Self {
        match atom.ratio {
            Some((num, den)) => BigRational::new(BigInt::from(num), BigInt::from(den)),
            // dyadic expansion of the float is exact
            None => BigRational::from_float(atom.prob).unwrap_or_else(BigRational::zero),
        }
    }

    fn from_lattice(v: i64) -> Self {
        BigRational::from_i64(v).expect("i64 is always representable")
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Relative tolerance under which a float is taken to be an exact ratio:
/// a few ulps, well below the `1/q²` accuracy of irrational convergents.
pub const RATIONAL_TOL: f64 = 1e-15;

/// Best rational approximation `p/q` of `x` with `q <= max_den`, accepted only
/// when it reproduces `x` to within `tol` (relative to `max(1, |x|)`).
pub fn rationalize(x: f64, max_den: i64, tol: f64) -> Option<(i64, i64)> {
    if !x.is_finite() {
        return None;
    }
    let sign = if x < 0.0 { -1 } else { 1 };
    let target = x.abs();
    // continued-fraction convergents
    let (mut h0, mut h1) = (0i128, 1i128);
    let (mut k0, mut k1) = (1i128, 0i128);
    let mut rest = target;
    for _ in 0..64 {
        let a = rest.floor();
        if a > 1e15 {
            break;
        }
        let a_i = a as i128;
        let h2 = a_i * h1 + h0;
        let k2 = a_i * k1 + k0;
        if k2 > max_den as i128 {
            break;
        }
        h0 = h1;
        h1 = h2;
        k0 = k1;
        k1 = k2;
        let approx = h1 as f64 / k1 as f64;
        if (approx - target).abs() <= tol * target.max(1.0) {
            return Some((sign * h1 as i64, k1 as i64));
        }
        let frac = rest - a;
        if frac <= f64::EPSILON {
            break;
        }
        rest = 1.0 / frac;
    }
    if k1 > 0 && ((h1 as f64 / k1 as f64) - target).abs() <= tol * target.max(1.0) {
        Some((sign * h1 as i64, k1 as i64))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationalize_common_fractions() {
        assert_eq!(rationalize(1.0 / 3.0, 1_000_000, RATIONAL_TOL), Some((1, 3)));
        assert_eq!(rationalize(-2.0, 1_000_000, RATIONAL_TOL), Some((-2, 1)));
        assert_eq!(rationalize(0.3, 1_000_000, RATIONAL_TOL), Some((3, 10)));
        assert_eq!(rationalize(0.0, 1_000_000, RATIONAL_TOL), Some((0, 1)));
        assert_eq!(rationalize(2.5, 1_000_000, RATIONAL_TOL), Some((5, 2)));
    }

    #[test]
    fn rationalize_rejects_irrationals() {
        assert_eq!(rationalize(std::f64::consts::PI, 1_000_000, RATIONAL_TOL), None);
        assert_eq!(rationalize(2f64.sqrt(), 1_000_000, RATIONAL_TOL), None);
    }

    #[test]
    fn exact_atom_probabilities() {
        let atom = LatticeAtom { step: 1, prob: 2.0 / 3.0, ratio: Some((2, 3)) };
        let p: Exact = Scalar::from_atom(&atom);
        assert_eq!(p, BigRational::new(2.into(), 3.into()));
        assert!(!p.negligible());
        assert!(1e-17f64.negligible());
        assert!(!Exact::new(1.into(), BigInt::from(10).pow(40)).negligible());
    }
}
