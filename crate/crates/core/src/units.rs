//! Fixed-point bandwidth and integer prices.
//!
//! Bandwidth is carried in tenths of a kbps so that conservation sums are
//! exact and runs are bit-reproducible across platforms. Floating point only
//! appears inside the cost model and the water-filling solver, and every
//! quantity leaving those routines is quantized back to [`Bandwidth`].

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of fixed-point units per kbps.
pub const UNITS_PER_KBPS: u64 = 10;

/// Non-negative bandwidth, quantized to 0.1 kbps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bandwidth(u64);

impl Bandwidth {
    pub const ZERO: Bandwidth = Bandwidth(0);

    pub const fn from_units(units: u64) -> Self {
        Bandwidth(units)
    }

    pub const fn from_whole_kbps(kbps: u64) -> Self {
        Bandwidth(kbps * UNITS_PER_KBPS)
    }

    /// Rounds to the nearest 0.1 kbps. Negative and NaN inputs map to zero.
    pub fn from_kbps(kbps: f64) -> Self {
        if kbps.is_nan() || kbps <= 0.0 {
            return Bandwidth(0);
        }
        Bandwidth((kbps * UNITS_PER_KBPS as f64).round() as u64)
    }

    pub const fn units(self) -> u64 {
        self.0
    }

    pub fn kbps(self) -> f64 {
        self.0 as f64 / UNITS_PER_KBPS as f64
    }

    pub const fn is_zero(self) -> bool {
        self.0 == 0
    }

    pub fn saturating_sub(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0.saturating_sub(rhs.0))
    }

    pub fn checked_sub(self, rhs: Bandwidth) -> Option<Bandwidth> {
        self.0.checked_sub(rhs.0).map(Bandwidth)
    }

    /// Payment for this much bandwidth at `price`, in currency tenths.
    pub fn cost_at(self, price: Price) -> Payment {
        Payment(self.0 * u64::from(price.get()))
    }
}

impl Add for Bandwidth {
    type Output = Bandwidth;
    fn add(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(self.0 + rhs.0)
    }
}

impl AddAssign for Bandwidth {
    fn add_assign(&mut self, rhs: Bandwidth) {
        self.0 += rhs.0;
    }
}

impl Sub for Bandwidth {
    type Output = Bandwidth;
    fn sub(self, rhs: Bandwidth) -> Bandwidth {
        Bandwidth(
            self.0
                .checked_sub(rhs.0)
                .expect("bandwidth subtraction underflow"),
        )
    }
}

impl SubAssign for Bandwidth {
    fn sub_assign(&mut self, rhs: Bandwidth) {
        *self = *self - rhs;
    }
}

impl Sum for Bandwidth {
    fn sum<I: Iterator<Item = Bandwidth>>(iter: I) -> Bandwidth {
        Bandwidth(iter.map(|b| b.0).sum())
    }
}

impl<'a> Sum<&'a Bandwidth> for Bandwidth {
    fn sum<I: Iterator<Item = &'a Bandwidth>>(iter: I) -> Bandwidth {
        iter.copied().sum()
    }
}

impl fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{} kbps", self.0 / UNITS_PER_KBPS, self.0 % UNITS_PER_KBPS)
    }
}

// Serialized as kbps so saved files stay readable; parsing rounds back onto
// the 0.1 kbps grid, which makes the round trip exact.
impl Serialize for Bandwidth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.kbps())
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() || v < 0.0 {
            return Err(serde::de::Error::custom(format!(
                "bandwidth must be a finite non-negative kbps value, got {v}"
            )));
        }
        Ok(Bandwidth::from_kbps(v))
    }
}

/// Unit price in currency per kbps. Always a positive integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Price(u32);

impl Price {
    pub const ONE: Price = Price(1);

    pub fn new(p: u32) -> Option<Price> {
        (p >= 1).then_some(Price(p))
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// One unit higher, but never above `cap`.
    pub fn escalate(self, cap: Price) -> Price {
        Price((self.0 + 1).min(cap.0.max(self.0)))
    }
}

impl TryFrom<u32> for Price {
    type Error = String;
    fn try_from(p: u32) -> Result<Self, Self::Error> {
        Price::new(p).ok_or_else(|| "price must be a positive integer".to_string())
    }
}

impl From<Price> for u32 {
    fn from(p: Price) -> u32 {
        p.0
    }
}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.0)
    }
}

/// Amount paid, in currency tenths (bandwidth units times integer price).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Payment(pub u64);

impl Payment {
    /// Amount in whole currency units.
    pub fn currency(self) -> f64 {
        self.0 as f64 / UNITS_PER_KBPS as f64
    }
}

impl Add for Payment {
    type Output = Payment;
    fn add(self, rhs: Payment) -> Payment {
        Payment(self.0 + rhs.0)
    }
}

impl Sum for Payment {
    fn sum<I: Iterator<Item = Payment>>(iter: I) -> Payment {
        Payment(iter.map(|p| p.0).sum())
    }
}

/// Splits `total` units across `weights` proportionally, flooring each share
/// and handing the leftover units to the largest remainders. Ties in the
/// remainder go to the lower index. The result sums to `total` exactly when
/// the weights are not all zero.
pub fn apportion(total: u64, weights: &[u64]) -> Vec<u64> {
    let sum: u128 = weights.iter().map(|&w| u128::from(w)).sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut shares = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    let mut assigned = 0u64;
    for (i, &w) in weights.iter().enumerate() {
        let num = u128::from(total) * u128::from(w);
        let q = (num / sum) as u64;
        shares.push(q);
        remainders.push((num % sum, i));
        assigned += q;
    }
    let mut left = total - assigned;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        shares[i] += 1;
        left -= 1;
    }
    shares
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kbps_round_trip_through_json() {
        let b = Bandwidth::from_units(2285);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "228.5");
        let back: Bandwidth = serde_json::from_str(&s).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn negative_bandwidth_rejected() {
        assert!(serde_json::from_str::<Bandwidth>("-1.0").is_err());
    }

    #[test]
    fn price_zero_rejected() {
        assert!(serde_json::from_str::<Price>("0").is_err());
        assert_eq!(serde_json::from_str::<Price>("3").unwrap().get(), 3);
    }

    #[test]
    fn escalate_caps() {
        let cap = Price::new(2).unwrap();
        assert_eq!(Price::ONE.escalate(cap), cap);
        assert_eq!(cap.escalate(cap), cap);
    }

    #[test]
    fn apportion_three_to_one() {
        assert_eq!(apportion(3000, &[3000, 1000]), vec![2250, 750]);
    }

    #[test]
    fn apportion_hands_out_remainders() {
        let shares = apportion(10, &[1, 1, 1]);
        assert_eq!(shares.iter().sum::<u64>(), 10);
        assert_eq!(shares, vec![4, 3, 3]);
    }

    #[test]
    fn apportion_zero_weights() {
        assert_eq!(apportion(10, &[0, 0]), vec![0, 0]);
    }
}
