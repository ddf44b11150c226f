//! Scalar abstraction shared by the metric, analysis and Markov code.
//!
//! Every aggregate in this crate is generic over [`Scalar`] so the same code
//! path runs in `f32`, `f64`, or exact [`BigRational`] arithmetic. The exact
//! instantiation is what the test suites use to check identities such as
//! "score(b) = 100 * (CC + IC) / N" without a floating-point tolerance.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, One, Signed, ToPrimitive, Zero};

/// Numeric type usable for probabilities, percentages and means.
pub trait Scalar: Clone + Debug + PartialOrd + Num + Send + Sync + 'static {
    /// `num / den`. `den` must be non-zero.
    fn from_ratio(num: i64, den: i64) -> Self;

    /// Converts an `f64`. Exact types take the binary value of `x` exactly.
    fn from_f64(x: f64) -> Option<Self>;

    /// Parses a plain decimal literal such as `-79.15` or `3`.
    fn parse_decimal(s: &str) -> Option<Self>;

    fn to_f64(&self) -> f64;

    /// Rounds half away from zero to `decimals` places.
    fn round_half_away(&self, decimals: u32) -> Self;

    fn from_usize(n: usize) -> Self {
        Self::from_ratio(n as i64, 1)
    }

    fn abs_value(&self) -> Self {
        if *self < Self::zero() {
            Self::zero() - self.clone()
        } else {
            self.clone()
        }
    }
}

/// Relative slack used when deciding whether a binary float sits on a
/// rounding tie. `79.15_f64` is stored as 79.149999..., which must still
/// round to 79.2.
const TIE_SLACK: f64 = 1e-9;

macro_rules! float_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_ratio(num: i64, den: i64) -> Self {
                num as $t / den as $t
            }

            fn from_f64(x: f64) -> Option<Self> {
                x.is_finite().then_some(x as $t)
            }

            fn parse_decimal(s: &str) -> Option<Self> {
                let s = s.trim();
                if !is_decimal_literal(s) {
                    return None;
                }
                s.parse::<$t>().ok()
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }

            fn round_half_away(&self, decimals: u32) -> Self {
                let factor = (10.0 as $t).powi(decimals as i32);
                let scaled = *self * factor;
                let whole = scaled.trunc();
                let frac = (scaled - whole).abs();
                let slack = (TIE_SLACK as $t) * scaled.abs().max(1.0);
                let rounded = if (frac - 0.5).abs() <= slack {
                    whole + scaled.signum()
                } else {
                    scaled.round()
                };
                rounded / factor
            }
        }
    };
}

float_scalar!(f32);
float_scalar!(f64);

impl Scalar for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }

    fn from_f64(x: f64) -> Option<Self> {
        BigRational::from_float(x)
    }

    fn parse_decimal(s: &str) -> Option<Self> {
        let s = s.trim();
        if !is_decimal_literal(s) {
            return None;
        }
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
        let digits = format!("{int_part}{frac_part}");
        let numer: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
        let denom = num_traits::pow(BigInt::from(10), frac_part.len());
        let value = BigRational::new(numer, denom);
        Some(if negative { -value } else { value })
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn round_half_away(&self, decimals: u32) -> Self {
        let factor = BigRational::from_integer(num_traits::pow(BigInt::from(10), decimals as usize));
        let scaled = self * &factor;
        let half = BigRational::new(BigInt::one(), BigInt::from(2));
        let magnitude = (scaled.abs() + half).floor();
        let rounded = if scaled.is_negative() { -magnitude } else { magnitude };
        rounded / factor
    }
}

fn is_decimal_literal(s: &str) -> bool {
    let body = s.strip_prefix(['-', '+']).unwrap_or(s);
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    !(int_part.is_empty() && frac_part.is_empty())
        && int_part.bytes().all(|b| b.is_ascii_digit())
        && frac_part.bytes().all(|b| b.is_ascii_digit())
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean<T: Scalar>(values: &[T]) -> Option<T> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().cloned().fold(T::zero(), |acc, v| acc + v);
    Some(sum / T::from_usize(values.len()))
}
