//! Exact rational arithmetic for metrics that are ratios of counts.
//!
//! Classification metrics and the threshold derivation are evaluated as exact
//! fractions and rounded to `f64` once, so values and differences between
//! them are the nearest doubles to the true results.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Exact = BigRational;

pub fn ratio(numer: u64, denom: u64) -> Exact {
    BigRational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn integer(v: i64) -> Exact {
    BigRational::from_integer(BigInt::from(v))
}

/// Nearest `f64` to `r`.
pub fn to_f64(r: &Exact) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// The decimal a finite double prints as (shortest round-trip form), as an
/// exact fraction. `0.1` maps to `1/10`, not to the binary value of `0.1`.
pub fn from_decimal_repr(x: f64) -> Option<Exact> {
    if !x.is_finite() {
        return None;
    }
    // `Display` for f64 emits the shortest round-trip digits without exponent.
    let s = format!("{x}");
    let (neg, digits) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.as_str()),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let mantissa: BigInt = format!("{int_part}{frac_part}").parse().ok()?;
    let denom = num_traits::pow(BigInt::from(10u32), frac_part.len());
    let r = BigRational::new(mantissa, denom);
    Some(if neg { -r } else { r })
}

/// Rounds to the nearest integer with ties away from zero.
pub fn round_half_away(r: &Exact) -> BigInt {
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    if r.is_negative() {
        -(((-r) + &half).floor().to_integer())
    } else {
        (r + &half).floor().to_integer()
    }
}

pub fn mean(values: &[Exact]) -> Option<Exact> {
    if values.is_empty() {
        return None;
    }
    let sum = values.iter().fold(Exact::zero(), |acc, v| acc + v);
    Some(sum / integer(values.len() as i64))
}
