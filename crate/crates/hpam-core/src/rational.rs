//! Exact rational arithmetic helpers.
//!
//! Probabilities throughout the crate are arbitrary-precision rationals kept in
//! lowest terms with a positive denominator (`BigRational` maintains both).
//! The parser accepts `"a/b"`, plain integers, and decimal literals with up to
//! twelve fractional digits; decimals convert exactly (`0.7` is `7/10`).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

pub type Rat = BigRational;

/// Maximum fractional digits accepted for decimal literals.
pub const MAX_DECIMAL_DIGITS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RationalParseError {
    #[error("empty rational literal")]
    Empty,
    #[error("invalid rational literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
    #[error("decimal `{0}` has more than {MAX_DECIMAL_DIGITS} fractional digits")]
    TooManyDigits(String),
}

pub fn parse_rational(text: &str) -> Result<Rat, RationalParseError> {
    let s = text.trim();
    if s.is_empty() {
        return Err(RationalParseError::Empty);
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num
            .trim()
            .parse()
            .map_err(|_| RationalParseError::Invalid(s.to_string()))?;
        let d: BigInt = den
            .trim()
            .parse()
            .map_err(|_| RationalParseError::Invalid(s.to_string()))?;
        if d.is_zero() {
            return Err(RationalParseError::ZeroDenominator(s.to_string()));
        }
        return Ok(Rat::new(n, d));
    }
    if let Some((int_part, frac_part)) = s.split_once('.') {
        if frac_part.len() > MAX_DECIMAL_DIGITS {
            return Err(RationalParseError::TooManyDigits(s.to_string()));
        }
        let negative = int_part.starts_with('-');
        let int_digits = int_part.strip_prefix(['-', '+']).unwrap_or(int_part);
        if !int_digits.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || frac_part.is_empty()
        {
            return Err(RationalParseError::Invalid(s.to_string()));
        }
        let scale = BigInt::from(10u32).pow(frac_part.len() as u32);
        let int_val: BigInt = if int_digits.is_empty() {
            BigInt::zero()
        } else {
            int_digits
                .parse()
                .map_err(|_| RationalParseError::Invalid(s.to_string()))?
        };
        let frac_val: BigInt = frac_part
            .parse()
            .map_err(|_| RationalParseError::Invalid(s.to_string()))?;
        let mut numer = int_val * &scale + frac_val;
        if negative {
            numer = -numer;
        }
        return Ok(Rat::new(numer, scale));
    }
    let n: BigInt = s
        .parse()
        .map_err(|_| RationalParseError::Invalid(s.to_string()))?;
    Ok(Rat::from_integer(n))
}

/// Canonical text form: `"n"` for integers, `"n/d"` otherwise.
pub fn format_rational(r: &Rat) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rat(numer: i64, denom: i64) -> Rat {
    Rat::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn rat_zero() -> Rat {
    Rat::zero()
}

pub fn rat_one() -> Rat {
    Rat::one()
}

pub fn abs_diff(a: &Rat, b: &Rat) -> Rat {
    (a - b).abs()
}
