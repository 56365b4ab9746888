use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseRatioError {
    #[error("malformed rational {0:?}, expected \"a/b\" or an integer")]
    Malformed(String),
    #[error("rational {0:?} has a zero denominator")]
    ZeroDenominator(String),
    #[error("{0} is outside the allowed range {1}")]
    OutOfRange(String, &'static str),
}

pub(crate) fn parse_ratio(s: &str) -> Result<Ratio<u128>, ParseRatioError> {
    let t = s.trim();
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a.trim(), b.trim()),
        None => (t, "1"),
    };
    let num: u128 = num
        .parse()
        .map_err(|_| ParseRatioError::Malformed(s.to_string()))?;
    let den: u128 = den
        .parse()
        .map_err(|_| ParseRatioError::Malformed(s.to_string()))?;
    if den == 0 {
        return Err(ParseRatioError::ZeroDenominator(s.to_string()));
    }
    Ok(Ratio::new(num, den))
}

fn fmt_ratio(r: &Ratio<u128>, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if *r.denom() == 1 {
        write!(f, "{}", r.numer())
    } else {
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

/// Exact fraction of total proposer weight, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Weight(Ratio<u128>);

impl Weight {
    pub const ZERO: Weight = Weight(Ratio::new_raw(0, 1));
    pub const ONE: Weight = Weight(Ratio::new_raw(1, 1));

    /// `num / den`; panics if the fraction exceeds one or `den` is zero.
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den > 0 && num <= den, "weight {num}/{den} outside [0, 1]");
        Weight(Ratio::new(num, den))
    }

    pub fn ratio(&self) -> Ratio<u128> {
        self.0
    }

    pub fn numer(&self) -> u128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u128 {
        *self.0.denom()
    }

    /// Sum of two weights; `None` if the result would exceed one.
    pub fn checked_add(self, other: Weight) -> Option<Weight> {
        let s = self.0 + other.0;
        (s <= Ratio::from_integer(1)).then_some(Weight(s))
    }

    pub fn saturating_sub(self, other: Weight) -> Weight {
        if other.0 >= self.0 {
            Weight::ZERO
        } else {
            Weight(self.0 - other.0)
        }
    }

    /// Strictly more than two thirds.
    pub fn exceeds_two_thirds(&self) -> bool {
        exceeds_two_thirds(self.numer(), self.denom())
    }

    pub fn exceeds(&self, t: Ratio<u128>) -> bool {
        self.0 > t
    }
}

/// Strictly more than two thirds of `den`, in integer arithmetic.
pub(crate) fn exceeds_two_thirds(num: u128, den: u128) -> bool {
    3 * num > 2 * den
}

impl fmt::Display for Weight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_ratio(&self.0, f)
    }
}

impl FromStr for Weight {
    type Err = ParseRatioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let r = parse_ratio(s)?;
        if r > Ratio::from_integer(1) {
            return Err(ParseRatioError::OutOfRange(s.to_string(), "[0, 1]"));
        }
        Ok(Weight(r))
    }
}

impl Serialize for Weight {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Weight {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Subjective decision threshold, in `(1/3, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DecisionThreshold(Ratio<u128>);

impl DecisionThreshold {
    pub fn new(num: u128, den: u128) -> Result<Self, ParseRatioError> {
        if den == 0 {
            return Err(ParseRatioError::ZeroDenominator(format!("{num}/{den}")));
        }
        Self::from_ratio(Ratio::new(num, den))
    }

    pub fn from_ratio(r: Ratio<u128>) -> Result<Self, ParseRatioError> {
        if r <= Ratio::new(1, 3) || r > Ratio::from_integer(1) {
            return Err(ParseRatioError::OutOfRange(
                format!("{}/{}", r.numer(), r.denom()),
                "(1/3, 1]",
            ));
        }
        Ok(DecisionThreshold(r))
    }

    pub fn two_thirds() -> Self {
        DecisionThreshold(Ratio::new(2, 3))
    }

    pub fn ratio(&self) -> Ratio<u128> {
        self.0
    }

    /// `num / den > tau`, exactly.
    pub fn is_exceeded_by(&self, num: u128, den: u128) -> bool {
        num * self.0.denom() > self.0.numer() * den
    }
}

impl fmt::Display for DecisionThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_ratio(&self.0, f)
    }
}

impl FromStr for DecisionThreshold {
    type Err = ParseRatioError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_ratio(parse_ratio(s)?)
    }
}

impl Serialize for DecisionThreshold {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DecisionThreshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
