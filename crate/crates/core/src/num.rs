//! Exact rational helpers shared by the venue, vault and metrics code.

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rational = BigRational;

/// `numer / denom` as an exact rational.
pub fn ratio(numer: i128, denom: i128) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn from_u128(v: u128) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn from_bps(bps: u32) -> Rational {
    Rational::new(BigInt::from(bps), BigInt::from(10_000))
}

/// Floor of a non-negative rational as `u128`. `None` when negative or too large.
pub fn floor_u128(r: &Rational) -> Option<u128> {
    if r.is_negative() {
        return None;
    }
    r.floor().to_integer().to_u128()
}

pub fn ceil_u128(r: &Rational) -> Option<u128> {
    if r.is_negative() {
        return None;
    }
    r.ceil().to_integer().to_u128()
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Converts a finite float to the nearest rational with denominator `10^digits`.
pub fn from_f64_rounded(v: f64, digits: u32) -> Rational {
    let scale = 10f64.powi(digits as i32);
    let scaled = (v * scale).round();
    Rational::new(
        BigInt::from(scaled as i128),
        BigInt::from(10u128.pow(digits)),
    )
}

/// Integer square root (floor).
pub fn isqrt(v: &BigInt) -> BigInt {
    if v.sign() != Sign::Plus {
        return BigInt::zero();
    }
    v.sqrt()
}

/// Floor of the square root of a non-negative rational, as a rational with
/// denominator `scale`.
pub fn sqrt_floor(r: &Rational, scale: &BigInt) -> Rational {
    if !r.is_positive() {
        return Rational::zero();
    }
    // sqrt(n/d) * s = sqrt(n * s^2 / d)
    let scaled = (r.numer() * scale * scale).div_floor(r.denom());
    Rational::new(isqrt(&scaled), scale.clone())
}

/// `base^exp` by repeated squaring.
pub fn pow(base: &Rational, mut exp: u64) -> Rational {
    let mut acc = Rational::one();
    let mut b = base.clone();
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= &b;
        }
        b = &b * &b;
        exp >>= 1;
    }
    acc
}

/// Decimal rendering with a fixed number of fractional digits, rounding half
/// to even.
pub fn format_decimal(r: &Rational, digits: u32) -> String {
    let scale = BigInt::from(10u32).pow(digits);
    let scaled = r * Rational::from_integer(scale.clone());
    let floor = scaled.floor();
    let frac = &scaled - &floor;
    let half = ratio(1, 2);
    let mut q = floor.to_integer();
    if frac > half || (frac == half && q.is_odd()) {
        q += 1;
    }
    let negative = q.is_negative();
    let abs = q.abs();
    let (int_part, frac_part) = abs.div_rem(&scale);
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    out.push_str(&int_part.to_string());
    if digits > 0 {
        out.push('.');
        out.push_str(&format!("{:0>width$}", frac_part.to_string(), width = digits as usize));
    }
    out
}

/// Decimal rendering of a float, routed through an exact rational so the
/// rounding rule matches [`format_decimal`].
pub fn format_f64(v: f64, digits: u32) -> String {
    if !v.is_finite() {
        return format_decimal(&Rational::zero(), digits);
    }
    match Rational::from_float(v) {
        Some(r) => format_decimal(&r, digits),
        None => format_decimal(&Rational::zero(), digits),
    }
}

/// Parses a plain decimal string (`"12.5"`) into base units at `decimals`.
/// More fractional digits than `decimals` is an error, never a silent round.
pub fn parse_units(s: &str, decimals: u8) -> Result<u128, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty amount".into());
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("invalid amount '{s}'"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(format!("invalid amount '{s}'"));
    }
    if frac_part.len() > decimals as usize {
        return Err(format!("'{s}' has more than {decimals} fractional digits"));
    }
    let scale = 10u128
        .checked_pow(decimals as u32)
        .ok_or_else(|| "decimals out of range".to_string())?;
    let int: u128 = if int_part.is_empty() {
        0
    } else {
        int_part.parse().map_err(|_| format!("amount '{s}' out of range"))?
    };
    let frac: u128 = if frac_part.is_empty() {
        0
    } else {
        let padded = format!("{:0<width$}", frac_part, width = decimals as usize);
        padded.parse().map_err(|_| format!("amount '{s}' out of range"))?
    };
    int.checked_mul(scale)
        .and_then(|v| v.checked_add(frac))
        .ok_or_else(|| format!("amount '{s}' out of range"))
}
