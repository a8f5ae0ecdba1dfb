//! Scalar abstractions.
//!
//! Simulation code is written against [`Real`] (implemented for `f32` and
//! `f64`). The index-set algebra only needs field operations and is written
//! against [`RateScalar`], which is additionally implemented for exact
//! rationals so weights and complexity constants can be checked exactly.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::{BigRational, Rational64};
use num_traits::{Float, FloatConst, FromPrimitive, Num, Signed, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point type usable by the samplers and solvers.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + RateScalar
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// One standard normal draw.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw on `[0, 1)`.
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Lossy conversion from `f64`; always defined for the supported types.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 converts to every Real")
    }

    fn of_usize(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize converts to every Real")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

/// Ordered field used for convergence rates.
///
/// `ties` decides the equality cases that make the complexity constants
/// piecewise: exact for rationals, a `1e-9` tolerance for floats.
pub trait RateScalar: Clone + PartialOrd + Num + Signed + ToPrimitive + Debug {
    fn ties(&self, other: &Self) -> bool;

    fn from_int(n: i64) -> Self;

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

const FLOAT_TIE_TOL: f64 = 1e-9;

impl RateScalar for f32 {
    fn ties(&self, other: &Self) -> bool {
        ((*self as f64) - (*other as f64)).abs() <= FLOAT_TIE_TOL
    }
    fn from_int(n: i64) -> Self {
        n as f32
    }
}

impl RateScalar for f64 {
    fn ties(&self, other: &Self) -> bool {
        (self - other).abs() <= FLOAT_TIE_TOL
    }
    fn from_int(n: i64) -> Self {
        n as f64
    }
}

impl RateScalar for Rational64 {
    fn ties(&self, other: &Self) -> bool {
        self == other
    }
    fn from_int(n: i64) -> Self {
        Rational64::from_integer(n)
    }
}

impl RateScalar for BigRational {
    fn ties(&self, other: &Self) -> bool {
        self == other
    }
    fn from_int(n: i64) -> Self {
        BigRational::from_integer(n.into())
    }
}

/// Largest of two partially ordered values (first wins on incomparable input).
pub(crate) fn pmax<S: PartialOrd>(a: S, b: S) -> S {
    if b > a {
        b
    } else {
        a
    }
}

pub(crate) fn pmin<S: PartialOrd>(a: S, b: S) -> S {
    if b < a {
        b
    } else {
        a
    }
}
