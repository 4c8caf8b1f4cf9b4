//! Numeric abstraction for measured values.
//!
//! All categorization and rate-of-change arithmetic is written against
//! [`Scalar`], so the same code runs on `f64`, `f32` and exact rationals.
//! Rationals make the median and percentage arithmetic exact, which the
//! test suites use as an independent route against the float results.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// A measured quantity.
pub trait Scalar:
    Copy
    + PartialOrd
    + Num
    + Signed
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Short type tag written into persisted dataset headers.
    const TAG: &'static str;

    fn is_finite(self) -> bool;

    /// Parses a plain decimal literal: optional sign, digits, optional `.`
    /// fraction and optional `e` exponent. Decimal-comma handling happens
    /// before this is called.
    fn parse_decimal(text: &str) -> Option<Self>;

    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn hundred() -> Self {
        Self::from_u8(100).expect("100 is representable")
    }

    /// `numerator / 10^scale`, exact for rationals and correctly rounded for floats.
    fn from_scaled(numerator: i64, scale: u32) -> Option<Self> {
        Self::parse_decimal(&format_scaled(numerator, scale))
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// A plain decimal literal that [`Scalar::parse_decimal`] reads back to
    /// the same value, or `None` when no finite one exists.
    fn to_decimal_string(self) -> Option<String>;
}

fn format_scaled(numerator: impl Into<i128>, scale: u32) -> String {
    let numerator: i128 = numerator.into();
    let neg = numerator < 0;
    let digits = numerator.unsigned_abs().to_string();
    let scale = scale as usize;
    let padded = if digits.len() <= scale {
        format!("{}{}", "0".repeat(scale + 1 - digits.len()), digits)
    } else {
        digits
    };
    let (int, frac) = padded.split_at(padded.len() - scale);
    let sign = if neg { "-" } else { "" };
    if frac.is_empty() {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac}")
    }
}

/// Splits a decimal literal into (negative, mantissa digits, decimal exponent).
/// `"-12.5e1"` becomes `(true, "125", 0)`.
fn split_decimal(text: &str) -> Option<(bool, String, i32)> {
    let text = text.trim();
    let (neg, rest) = match text.as_bytes().first()? {
        b'-' => (true, &text[1..]),
        b'+' => (false, &text[1..]),
        _ => (false, text),
    };
    let (mantissa, exponent) = match rest.find(['e', 'E']) {
        Some(pos) => (&rest[..pos], rest[pos + 1..].parse::<i32>().ok()?),
        None => (rest, 0),
    };
    let (int, frac) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let exp = exponent.checked_sub(i32::try_from(frac.len()).ok()?)?;
    Some((neg, format!("{int}{frac}"), exp))
}

macro_rules! impl_float_scalar {
    ($t:ty, $tag:literal) => {
        impl Scalar for $t {
            const TAG: &'static str = $tag;

            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn parse_decimal(text: &str) -> Option<Self> {
                // Validate the grammar first; `str::parse` also accepts "inf" and "NaN".
                split_decimal(text)?;
                text.trim().parse::<$t>().ok().filter(|v| v.is_finite())
            }

            fn to_decimal_string(self) -> Option<String> {
                // Float Display is the shortest round-tripping plain decimal.
                <$t>::is_finite(self).then(|| self.to_string())
            }
        }
    };
}

impl_float_scalar!(f64, "f64");
impl_float_scalar!(f32, "f32");

impl Scalar for Ratio<i64> {
    const TAG: &'static str = "rational64";

    fn is_finite(self) -> bool {
        true
    }

    fn parse_decimal(text: &str) -> Option<Self> {
        let (neg, digits, exp) = split_decimal(text)?;
        let digits = digits.trim_start_matches('0');
        let mantissa: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
        let pow = 10_i64.checked_pow(exp.unsigned_abs())?;
        let value = if exp >= 0 {
            Ratio::from_integer(mantissa.checked_mul(pow)?)
        } else {
            Ratio::new(mantissa, pow)
        };
        Some(if neg { -value } else { value })
    }

    fn to_decimal_string(self) -> Option<String> {
        // Terminating iff the reduced denominator is 2^a * 5^b.
        let mut d = *self.denom();
        let (mut twos, mut fives) = (0u32, 0u32);
        while d % 2 == 0 {
            d /= 2;
            twos += 1;
        }
        while d % 5 == 0 {
            d /= 5;
            fives += 1;
        }
        if d != 1 {
            return None;
        }
        let scale = twos.max(fives);
        let multiplier = 2_i128.checked_pow(scale - twos)?.checked_mul(5_i128.checked_pow(scale - fives)?)?;
        Some(format_scaled(i128::from(*self.numer()).checked_mul(multiplier)?, scale))
    }
}
