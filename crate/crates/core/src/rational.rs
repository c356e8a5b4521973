//! Exact rational helpers shared by every module.
//!
//! All arithmetic in the crate is performed on [`Rational`], an
//! arbitrary-precision fraction. Text formats write rationals as `p/q` or as
//! plain integers.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RationalError {
    #[error("invalid rational literal `{0}`")]
    Invalid(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

/// Parses `p/q`, `-p/q` or an integer literal.
pub fn parse_rational(text: &str) -> Result<Rational, RationalError> {
    let text = text.trim();
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n, d),
        None => (text, "1"),
    };
    let valid = |s: &str, signed: bool| {
        let digits = if signed {
            s.strip_prefix('-').or_else(|| s.strip_prefix('+')).unwrap_or(s)
        } else {
            s
        };
        !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
    };
    if !valid(num, true) || !valid(den, false) {
        return Err(RationalError::Invalid(text.to_string()));
    }
    let num: BigInt = num.parse().map_err(|_| RationalError::Invalid(text.to_string()))?;
    let den: BigInt = den.parse().map_err(|_| RationalError::Invalid(text.to_string()))?;
    if den.is_zero() {
        return Err(RationalError::ZeroDenominator(text.to_string()));
    }
    Ok(Rational::new(num, den))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn frac(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// `1/n` for a positive depth.
pub fn reciprocal(n: u64) -> Rational {
    Rational::new(BigInt::one(), BigInt::from(n))
}

/// Smallest integer `k` with `k >= x`, saturated into `u64` (0 for nonpositive input).
pub fn ceil_u64(x: &Rational) -> u64 {
    if !x.is_positive() {
        return 0;
    }
    let (q, r) = x.numer().div_rem(x.denom());
    let q = if r.is_zero() { q } else { q + 1 };
    q.to_u64().unwrap_or(u64::MAX)
}

pub fn abs_diff(a: &Rational, b: &Rational) -> Rational {
    (a - b).abs()
}

/// Serde adapter writing rationals as `p/q` strings.
pub mod serde_rational {
    use super::{parse_rational, Rational};
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&value.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let text = String::deserialize(d)?;
        parse_rational(&text).map_err(D::Error::custom)
    }
}

pub mod serde_rational_vec {
    use super::{parse_rational, Rational};
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[Rational], s: S) -> Result<S::Ok, S::Error> {
        let strings: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        strings.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational>, D::Error> {
        let strings = Vec::<String>::deserialize(d)?;
        strings.iter().map(|t| parse_rational(t).map_err(D::Error::custom)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literals() {
        assert_eq!(parse_rational("3/6").unwrap(), frac(1, 2));
        assert_eq!(parse_rational("-2").unwrap(), int(-2));
        assert_eq!(parse_rational("-1/4").unwrap(), frac(-1, 4));
        assert!(matches!(parse_rational("1/0"), Err(RationalError::ZeroDenominator(_))));
        assert!(parse_rational("1/-2").is_err());
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("").is_err());
        assert_eq!(frac(6, 4).to_string(), "3/2");
        assert_eq!(int(5).to_string(), "5");
    }

    #[test]
    fn ceiling() {
        assert_eq!(ceil_u64(&frac(7, 2)), 4);
        assert_eq!(ceil_u64(&int(3)), 3);
        assert_eq!(ceil_u64(&frac(-1, 2)), 0);
    }
}
