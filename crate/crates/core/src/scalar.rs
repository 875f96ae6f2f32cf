//! Scalar abstraction used by every tree, measure, and penalty type.
//!
//! All core math is written against [`Scalar`] so the same code runs in
//! floating point (`f32`, `f64`) and in exact rational arithmetic
//! ([`BigRational`]). The rational lane exists for the penalty LP, where
//! pivoting must not lose feasibility by rounding; the float lanes are what
//! the CLI and the checkers use day to day.
//!
//! Penalties live in `[0, +inf]`, which no plain scalar models, so the
//! extended value type [`Cost`] wraps a scalar with an explicit infinity.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};
use std::fmt;
use std::hash::{Hash, Hasher};

/// Arithmetic abstraction: ordered field with conversions to and from `f64`.
///
/// `from_f64` must be exact whenever the argument is finite (every finite
/// `f64` is a dyadic rational, so `BigRational` can represent it exactly);
/// this keeps the float and rational lanes consistent when fixtures are
/// generated once in `f64` and replayed in both.
pub trait Scalar:
    Num
    + Signed
    + FromPrimitive
    + ToPrimitive
    + PartialOrd
    + Clone
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Exact embedding of a finite `f64`.
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 embeds into any Scalar")
    }

    /// Nearest `f64` (used for reports; may round in the rational lane).
    fn approx(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Parse a decimal literal like `-0.25` or `1e-3`.
    ///
    /// The rational lane parses the decimal exactly rather than routing
    /// through `f64`, so `0.1` means 1/10 and not its double rounding.
    fn parse_decimal(s: &str) -> Option<Self>;

    /// Feed a stable digest of the value into a hasher (cache keys).
    fn feed_hash(&self, state: &mut dyn Hasher);

    /// True when arithmetic is exact and comparisons need no tolerance.
    fn exact() -> bool {
        false
    }

    /// Lossless lift into the exact rational lane (floats are dyadic).
    fn to_exact(&self) -> BigRational;

    /// Projection back from the exact lane (rounds in float lanes).
    fn from_exact(q: &BigRational) -> Self;
}

impl Scalar for f64 {
    fn parse_decimal(s: &str) -> Option<Self> {
        let v: f64 = s.parse().ok()?;
        v.is_finite().then_some(v)
    }

    fn feed_hash(&self, state: &mut dyn Hasher) {
        // Normalize -0.0 so x == y implies equal digests.
        let bits = if *self == 0.0 { 0u64 } else { self.to_bits() };
        state.write_u64(bits);
    }

    fn to_exact(&self) -> BigRational {
        BigRational::from_f64(*self).expect("finite value")
    }

    fn from_exact(q: &BigRational) -> Self {
        q.to_f64().expect("rational fits in f64")
    }
}

impl Scalar for f32 {
    fn parse_decimal(s: &str) -> Option<Self> {
        let v: f32 = s.parse().ok()?;
        v.is_finite().then_some(v)
    }

    fn feed_hash(&self, state: &mut dyn Hasher) {
        let bits = if *self == 0.0 { 0u32 } else { self.to_bits() };
        state.write_u32(bits);
    }

    fn to_exact(&self) -> BigRational {
        BigRational::from_f32(*self).expect("finite value")
    }

    fn from_exact(q: &BigRational) -> Self {
        q.to_f32().expect("rational fits in f32")
    }
}

impl Scalar for BigRational {
    fn parse_decimal(s: &str) -> Option<Self> {
        parse_decimal_rational(s)
    }

    fn feed_hash(&self, state: &mut dyn Hasher) {
        let mut state = state;
        self.hash(&mut state);
    }

    fn exact() -> bool {
        true
    }

    fn to_exact(&self) -> BigRational {
        self.clone()
    }

    fn from_exact(q: &BigRational) -> Self {
        q.clone()
    }
}

/// `sign int_part [. frac_part] [e exp]`, all base 10, built as
/// `digits / 10^(len(frac) - exp)`.
fn parse_decimal_rational(s: &str) -> Option<BigRational> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    let (mantissa, exp10) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (sign, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.find('.') {
        Some(i) => (&digits[..i], &digits[i + 1..]),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let joined = format!("{int_part}{frac_part}");
    let numer = BigInt::parse_bytes(joined.as_bytes(), 10)? * BigInt::from(sign);
    let scale = frac_part.len() as i32 - exp10;
    let ten = BigInt::from(10);
    Some(if scale >= 0 {
        BigRational::new(numer, ten.pow(scale as u32))
    } else {
        BigRational::from_integer(numer * ten.pow((-scale) as u32))
    })
}

/// Penalty value in `[0, +inf]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Cost<S> {
    Finite(S),
    Infinite,
}

impl<S: Scalar> Cost<S> {
    pub fn zero() -> Self {
        Cost::Finite(S::zero())
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn finite(&self) -> Option<&S> {
        match self {
            Cost::Finite(v) => Some(v),
            Cost::Infinite => None,
        }
    }

    /// Map a finite value, keeping infinity absorbing.
    pub fn map<T: Scalar>(&self, f: impl FnOnce(&S) -> T) -> Cost<T> {
        match self {
            Cost::Finite(v) => Cost::Finite(f(v)),
            Cost::Infinite => Cost::Infinite,
        }
    }

    pub fn add(&self, rhs: &Cost<S>) -> Cost<S> {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a.clone() + b.clone()),
            _ => Cost::Infinite,
        }
    }

    /// Scale by a nonnegative weight with the measure-theoretic convention
    /// `0 * inf = 0` (a null weight wipes out even an infinite penalty).
    pub fn scale(&self, w: &S) -> Cost<S> {
        if w.is_zero() {
            return Cost::zero();
        }
        match self {
            Cost::Finite(v) => Cost::Finite(v.clone() * w.clone()),
            Cost::Infinite => Cost::Infinite,
        }
    }

    /// Total order with `inf` greatest. Panics on incomparable floats (NaN),
    /// which no constructor admits.
    pub fn cmp_val(&self, rhs: &Cost<S>) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        match (self, rhs) {
            (Cost::Infinite, Cost::Infinite) => Equal,
            (Cost::Infinite, Cost::Finite(_)) => Greater,
            (Cost::Finite(_), Cost::Infinite) => Less,
            (Cost::Finite(a), Cost::Finite(b)) => {
                a.partial_cmp(b).expect("penalty values are ordered")
            }
        }
    }

    /// |a - b| treating two infinities as equal and a finite/infinite
    /// mismatch as an infinite violation.
    pub fn gap(&self, rhs: &Cost<S>) -> Cost<S> {
        match (self, rhs) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite((a.clone() - b.clone()).abs()),
            (Cost::Infinite, Cost::Infinite) => Cost::zero(),
            _ => Cost::Infinite,
        }
    }

    pub fn approx(&self) -> f64 {
        match self {
            Cost::Finite(v) => v.approx(),
            Cost::Infinite => f64::INFINITY,
        }
    }
}

impl<S: Scalar> fmt::Display for Cost<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(v) => write!(f, "{v}"),
            Cost::Infinite => write!(f, "inf"),
        }
    }
}

/// Sum of a slice by cloning (rational values are not `Copy`).
pub fn total<S: Scalar>(xs: &[S]) -> S {
    xs.iter().fold(S::zero(), |acc, x| acc + x.clone())
}

/// Dot product of equal-length slices.
pub fn dot<S: Scalar>(xs: &[S], ys: &[S]) -> S {
    debug_assert_eq!(xs.len(), ys.len());
    xs.iter()
        .zip(ys)
        .fold(S::zero(), |acc, (x, y)| acc + x.clone() * y.clone())
}

/// Largest |x - y| over paired slices.
pub fn sup_gap<S: Scalar>(xs: &[S], ys: &[S]) -> S {
    debug_assert_eq!(xs.len(), ys.len());
    xs.iter().zip(ys).fold(S::zero(), |acc, (x, y)| {
        let d = (x.clone() - y.clone()).abs();
        if d > acc {
            d
        } else {
            acc
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_exact_in_the_rational_lane() {
        let q = BigRational::parse_decimal("0.1").unwrap();
        assert_eq!(q, BigRational::new(BigInt::from(1), BigInt::from(10)));
        let q = BigRational::parse_decimal("-2.5e-2").unwrap();
        assert_eq!(q, BigRational::new(BigInt::from(-1), BigInt::from(40)));
        let q = BigRational::parse_decimal("3e2").unwrap();
        assert_eq!(q, BigRational::from_integer(BigInt::from(300)));
        assert!(BigRational::parse_decimal("").is_none());
        assert!(BigRational::parse_decimal("1.2.3").is_none());
        assert!(BigRational::parse_decimal("nan").is_none());
    }

    #[test]
    fn f64_round_trips_through_the_rational_lane() {
        for x in [0.1, -3.25, 1e-12, 7.0 / 3.0] {
            assert_eq!(BigRational::of(x).approx(), x);
        }
    }

    #[test]
    fn cost_arithmetic_conventions() {
        let inf: Cost<f64> = Cost::Infinite;
        let two = Cost::Finite(2.0);
        assert_eq!(inf.scale(&0.0), Cost::Finite(0.0));
        assert_eq!(inf.scale(&0.5), Cost::Infinite);
        assert_eq!(two.scale(&0.5), Cost::Finite(1.0));
        assert_eq!(inf.add(&two), Cost::Infinite);
        assert_eq!(two.gap(&Cost::Finite(2.5)), Cost::Finite(0.5));
        assert_eq!(inf.gap(&Cost::Infinite), Cost::Finite(0.0));
        assert_eq!(inf.gap(&two), Cost::Infinite);
        assert!(inf.cmp_val(&two).is_gt());
        assert_eq!(format!("{inf}"), "inf");
    }

    #[test]
    fn negative_zero_hashes_like_zero() {
        use std::collections::hash_map::DefaultHasher;
        let mut a = DefaultHasher::new();
        let mut b = DefaultHasher::new();
        0.0f64.feed_hash(&mut a);
        (-0.0f64).feed_hash(&mut b);
        assert_eq!(a.finish(), b.finish());
    }
}
