//! Fixed-point CFTX amounts.
//!
//! Every balance, issuance and award is carried as a signed count of
//! micro-CFTX (six fractional digits) so that conservation checks are exact.

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Micro-units per whole CFTX.
pub const SCALE: i64 = 1_000_000;

/// Resolution used when a real-valued fraction is applied to an amount.
const FRACTION_SCALE: i128 = 1_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AmountError {
    #[error("amount arithmetic overflowed")]
    Overflow,
    #[error("amount is not finite: {0}")]
    NotFinite(f64),
    #[error("fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),
    #[error("cannot parse amount `{0}`")]
    Parse(String),
}

/// A signed CFTX quantity in micro-units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cftx(i64);

impl Cftx {
    pub const ZERO: Cftx = Cftx(0);

    pub const fn from_micros(micros: i64) -> Self {
        Cftx(micros)
    }

    pub const fn micros(self) -> i64 {
        self.0
    }

    pub fn whole(units: i64) -> Self {
        Cftx(units.checked_mul(SCALE).expect("whole CFTX amount overflows"))
    }

    /// Rounds a real-valued amount to the nearest micro-unit (half away from zero).
    pub fn from_f64(value: f64) -> Result<Self, AmountError> {
        if !value.is_finite() {
            return Err(AmountError::NotFinite(value));
        }
        let scaled = (value * SCALE as f64).round();
        if scaled.abs() >= i64::MAX as f64 {
            return Err(AmountError::Overflow);
        }
        Ok(Cftx(scaled as i64))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn abs(self) -> Self {
        Cftx(self.0.abs())
    }

    pub fn checked_add(self, rhs: Cftx) -> Result<Cftx, AmountError> {
        self.0.checked_add(rhs.0).map(Cftx).ok_or(AmountError::Overflow)
    }

    pub fn checked_sub(self, rhs: Cftx) -> Result<Cftx, AmountError> {
        self.0.checked_sub(rhs.0).map(Cftx).ok_or(AmountError::Overflow)
    }

    /// `self * fraction`, rounded toward zero. The fraction is resolved to 1e-12.
    pub fn mul_fraction_floor(self, fraction: f64) -> Result<Cftx, AmountError> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(AmountError::FractionOutOfRange(fraction));
        }
        let q = quantize_ratio(fraction)?;
        let v = i128::from(self.0) * q / FRACTION_SCALE;
        i64::try_from(v).map(Cftx).map_err(|_| AmountError::Overflow)
    }

    /// `self * factor` for any nonnegative real factor, rounded to nearest micro-unit.
    pub fn mul_real_round(self, factor: f64) -> Result<Cftx, AmountError> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(AmountError::NotFinite(factor));
        }
        let q = quantize_ratio(factor)?;
        let num = i128::from(self.0) * q;
        let half = FRACTION_SCALE / 2;
        let v = if num >= 0 {
            (num + half) / FRACTION_SCALE
        } else {
            (num - half) / FRACTION_SCALE
        };
        i64::try_from(v).map(Cftx).map_err(|_| AmountError::Overflow)
    }

    /// Splits `self` into parts proportional to `weights`, each rounded down.
    ///
    /// Returns the parts (same order as `weights`) and the undistributed dust.
    /// Returns `None` when every weight is zero.
    pub fn split_floor(self, weights: &[f64]) -> Option<(Vec<Cftx>, Cftx)> {
        let quantized: Vec<i128> = weights.iter().map(|w| quantize_ratio(*w).unwrap_or(0)).collect();
        let total: i128 = quantized.iter().sum();
        if total == 0 {
            return None;
        }
        let amount = i128::from(self.0);
        let parts: Vec<Cftx> = quantized.iter().map(|q| Cftx((amount * q / total) as i64)).collect();
        let given: i64 = parts.iter().map(|p| p.0).sum();
        Some((parts, Cftx(self.0 - given)))
    }
}

fn quantize_ratio(x: f64) -> Result<i128, AmountError> {
    if !x.is_finite() || x < 0.0 {
        return Err(AmountError::NotFinite(x));
    }
    let scaled = (x * FRACTION_SCALE as f64).round();
    if scaled >= i128::MAX as f64 / 4.0 {
        return Err(AmountError::Overflow);
    }
    Ok(scaled as i128)
}

impl fmt::Display for Cftx {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let scale = SCALE as u64;
        write!(f, "{sign}{}.{:06}", abs / scale, abs % scale)
    }
}

impl FromStr for Cftx {
    type Err = AmountError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AmountError::Parse(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty()
            || frac_part.len() > 6
            || !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(err());
        }
        let whole: i64 = int_part.parse().map_err(|_| err())?;
        let frac: i64 = if frac_part.is_empty() {
            0
        } else {
            format!("{frac_part:0<6}").parse().map_err(|_| err())?
        };
        let micros = whole
            .checked_mul(SCALE)
            .and_then(|w| w.checked_add(frac))
            .ok_or(AmountError::Overflow)?;
        Ok(Cftx(if neg { -micros } else { micros }))
    }
}

impl Serialize for Cftx {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Cftx {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Int(i) => i
                .checked_mul(SCALE)
                .map(Cftx)
                .ok_or_else(|| serde::de::Error::custom("amount overflows")),
            Repr::Float(x) => Cftx::from_f64(x).map_err(serde::de::Error::custom),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Sum for Cftx {
    fn sum<I: Iterator<Item = Cftx>>(iter: I) -> Self {
        Cftx(iter.map(|c| c.0).sum())
    }
}

impl std::ops::Add for Cftx {
    type Output = Cftx;

    fn add(self, rhs: Cftx) -> Cftx {
        self.checked_add(rhs).expect("CFTX addition overflow")
    }
}

impl std::ops::Sub for Cftx {
    type Output = Cftx;

    fn sub(self, rhs: Cftx) -> Cftx {
        self.checked_sub(rhs).expect("CFTX subtraction overflow")
    }
}

impl std::ops::Neg for Cftx {
    type Output = Cftx;

    fn neg(self) -> Cftx {
        Cftx(-self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn display_and_parse() {
        assert_eq!(Cftx::whole(100_100).to_string(), "100100.000000");
        assert_eq!("100.1".parse::<Cftx>().unwrap(), Cftx::from_micros(100_100_000));
        assert_eq!("-0.000001".parse::<Cftx>().unwrap(), Cftx::from_micros(-1));
        assert_eq!(Cftx::from_micros(-1).to_string(), "-0.000001");
        assert!("1.0000001".parse::<Cftx>().is_err());
        assert!("abc".parse::<Cftx>().is_err());
        assert!(".5".parse::<Cftx>().is_err());
    }

    #[test]
    fn market_multipliers_are_exact() {
        let a = Cftx::whole(100_100).mul_real_round(1.10).unwrap();
        let b = Cftx::whole(100_010).mul_real_round(0.90).unwrap();
        assert_eq!(a, Cftx::whole(110_110));
        assert_eq!(b, Cftx::whole(90_009));
    }

    #[test]
    fn split_floor_keeps_dust() {
        let (parts, dust) = Cftx::from_micros(10).split_floor(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(parts, vec![Cftx::from_micros(3); 3]);
        assert_eq!(dust, Cftx::from_micros(1));
        assert!(Cftx::whole(1).split_floor(&[0.0, 0.0]).is_none());
    }

    #[test]
    fn deserializes_numbers_and_strings() {
        #[derive(Deserialize)]
        struct W {
            a: Cftx,
            b: Cftx,
            c: Cftx,
        }
        let w: W = serde_json::from_str(r#"{"a": 5, "b": 0.25, "c": "7.5"}"#).unwrap();
        assert_eq!(w.a, Cftx::whole(5));
        assert_eq!(w.b, Cftx::from_micros(250_000));
        assert_eq!(w.c, Cftx::from_micros(7_500_000));
    }

    proptest! {
        #[test]
        fn split_never_overpays(amount in 0i64..1_000_000_000_000, ws in prop::collection::vec(0.0f64..10.0, 1..8)) {
            let total = Cftx::from_micros(amount);
            if let Some((parts, dust)) = total.split_floor(&ws) {
                prop_assert!(dust.micros() >= 0);
                prop_assert_eq!(parts.iter().copied().sum::<Cftx>().checked_add(dust).unwrap(), total);
            }
        }

        #[test]
        fn display_parse_roundtrip(m in any::<i64>().prop_filter("not min", |m| *m != i64::MIN)) {
            let c = Cftx::from_micros(m);
            prop_assert_eq!(c.to_string().parse::<Cftx>().unwrap(), c);
        }
    }
}
