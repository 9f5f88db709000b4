//! Scalar abstraction for the real-valued math and fixed-point token amounts.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating point type the pricing, audit and allocation math is generic over: f32 or f64.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Number of micro-units in one whole token.
pub const MICRO: i64 = 1_000_000;

/// Token quantity in fixed-point micro-units (10^-6 of a token).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Amount(pub i64);

impl Amount {
    pub const ZERO: Amount = Amount(0);

    pub const fn micros(m: i64) -> Self {
        Amount(m)
    }

    pub const fn tokens(t: i64) -> Self {
        Amount(t * MICRO)
    }

    /// Nearest micro-unit to a real token quantity.
    pub fn from_real<S: Scalar>(t: S) -> Self {
        let m = (t * S::lit(MICRO as f64)).round();
        Amount(m.to_i64().expect("token amount out of range"))
    }

    /// Smallest micro-unit quantity not below a real token quantity.
    pub fn ceil_real<S: Scalar>(t: S) -> Self {
        let m = (t * S::lit(MICRO as f64)).ceil();
        Amount(m.to_i64().expect("token amount out of range"))
    }

    pub fn to_real<S: Scalar>(self) -> S {
        S::from_i64(self.0).expect("i64 to scalar") / S::lit(MICRO as f64)
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    pub fn checked_add(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_add(rhs.0).map(Amount)
    }

    pub fn checked_sub(self, rhs: Amount) -> Option<Amount> {
        self.0.checked_sub(rhs.0).map(Amount)
    }

    /// `self * num / den`, rounded toward zero, computed in 128-bit.
    pub fn mul_div_floor(self, num: i64, den: i64) -> Amount {
        assert!(den != 0, "zero denominator");
        Amount(((self.0 as i128 * num as i128) / den as i128) as i64)
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Add for Amount {
    type Output = Amount;
    fn add(self, rhs: Amount) -> Amount {
        Amount(self.0 + rhs.0)
    }
}

impl AddAssign for Amount {
    fn add_assign(&mut self, rhs: Amount) {
        self.0 += rhs.0;
    }
}

impl Sub for Amount {
    type Output = Amount;
    fn sub(self, rhs: Amount) -> Amount {
        Amount(self.0 - rhs.0)
    }
}

impl SubAssign for Amount {
    fn sub_assign(&mut self, rhs: Amount) {
        self.0 -= rhs.0;
    }
}

impl Neg for Amount {
    type Output = Amount;
    fn neg(self) -> Amount {
        Amount(-self.0)
    }
}

impl Sum for Amount {
    fn sum<I: Iterator<Item = Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Amount> for Amount {
    fn sum<I: Iterator<Item = &'a Amount>>(iter: I) -> Amount {
        iter.fold(Amount::ZERO, |a, b| a + *b)
    }
}

/// Split `total` in proportion to non-negative integer `weights` so the parts sum to
/// `total` exactly (largest-remainder method). Leftover units go to the largest fractional
/// remainders; equal remainders are served in slice order.
///
/// Returns all zeros when every weight is zero.
pub fn apportion(total: Amount, weights: &[i64]) -> Vec<Amount> {
    assert!(total.0 >= 0, "apportion of a negative total");
    assert!(weights.iter().all(|w| *w >= 0), "negative apportionment weight");
    let denom: i128 = weights.iter().map(|w| *w as i128).sum();
    if denom == 0 {
        return vec![Amount::ZERO; weights.len()];
    }
    let t = total.0 as i128;
    let mut parts = Vec::with_capacity(weights.len());
    let mut rems = Vec::with_capacity(weights.len());
    for (i, w) in weights.iter().enumerate() {
        let prod = t * *w as i128;
        parts.push((prod / denom) as i64);
        rems.push((prod % denom, i));
    }
    let assigned: i64 = parts.iter().sum();
    let mut leftover = total.0 - assigned;
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in rems {
        if leftover == 0 {
            break;
        }
        parts[i] += 1;
        leftover -= 1;
    }
    parts.into_iter().map(Amount).collect()
}

/// Largest-remainder split of `total` by real, non-negative shares. Ties in the fractional
/// part are served in slice order.
pub fn apportion_real<S: Scalar>(total: Amount, shares: &[S]) -> Vec<Amount> {
    assert!(total.0 >= 0, "apportion of a negative total");
    let sum = shares.iter().fold(S::zero(), |a, b| a + b.max(S::zero()));
    if sum <= S::zero() {
        return vec![Amount::ZERO; shares.len()];
    }
    let t = S::from_i64(total.0).unwrap();
    let mut parts = Vec::with_capacity(shares.len());
    let mut fracs = Vec::with_capacity(shares.len());
    for (i, s) in shares.iter().enumerate() {
        let exact = t * s.max(S::zero()) / sum;
        let floor = exact.floor();
        parts.push(floor.to_i64().unwrap());
        fracs.push((exact - floor, i));
    }
    let assigned: i64 = parts.iter().sum();
    let mut leftover = total.0 - assigned;
    // Floating error can overshoot by a unit; take it back from the smallest remainders.
    while leftover < 0 {
        let (_, i) = fracs
            .iter()
            .filter(|(_, i)| parts[*i] > 0)
            .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)))
            .copied()
            .expect("positive part to reduce");
        parts[i] -= 1;
        leftover += 1;
    }
    fracs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let n = fracs.len();
    let mut k = 0;
    while leftover > 0 {
        parts[fracs[k % n].1] += 1;
        leftover -= 1;
        k += 1;
    }
    parts.into_iter().map(Amount).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_is_exact() {
        let parts = apportion(Amount(100), &[1, 1, 1]);
        assert_eq!(parts, vec![Amount(34), Amount(33), Amount(33)]);
        assert_eq!(apportion(Amount(7), &[0, 0]), vec![Amount::ZERO; 2]);
    }

    #[test]
    fn apportion_real_sums_to_total() {
        let parts = apportion_real(Amount(1_000_001), &[0.3_f64, 0.3, 0.4]);
        assert_eq!(parts.iter().sum::<Amount>(), Amount(1_000_001));
        assert_eq!(parts[0], parts[1]);
    }

    #[test]
    fn real_conversions() {
        assert_eq!(Amount::from_real(1.5_f64), Amount(1_500_000));
        assert_eq!(Amount::ceil_real(0.0000001_f64), Amount(1));
        assert_eq!(Amount::tokens(3).to_real::<f64>(), 3.0);
        assert_eq!(Amount(10).mul_div_floor(1, 3), Amount(3));
    }
}
