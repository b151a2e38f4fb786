//! Streaming-cost curves.
//!
//! A curve prices the load a downstream places on one link. The shipped
//! family is link utilization, `E(b) = b / (x - b)`, which is non-decreasing,
//! strictly convex and has a pole at the link capacity `x`. The water-filling
//! solver only talks to a curve through [`CostCurve::cost`],
//! [`CostCurve::marginal`] and [`CostCurve::inverse_marginal`], so adding a
//! family means adding a [`CostKind`] variant and its three formulas.

use serde::{Deserialize, Serialize};

use crate::error::CostError;

/// Fraction of capacity kept clear of the pole.
pub const POLE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostKind {
    #[default]
    Utilization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    /// Remaining headroom of the link in kbps.
    pub capacity: f64,
    pub kind: CostKind,
}

impl CostCurve {
    pub fn utilization(capacity: f64) -> Result<Self, CostError> {
        if !(capacity > 0.0 && capacity.is_finite()) {
            return Err(CostError::Capacity(capacity));
        }
        Ok(CostCurve {
            capacity,
            kind: CostKind::Utilization,
        })
    }

    /// Largest load the solver will place on this curve.
    pub fn ceiling(&self) -> f64 {
        self.capacity * (1.0 - POLE_MARGIN)
    }

    fn check(&self, b: f64) -> Result<(), CostError> {
        if !(b >= 0.0 && b < self.capacity) {
            return Err(CostError::Domain {
                b,
                capacity: self.capacity,
            });
        }
        Ok(())
    }

    pub fn cost(&self, b: f64) -> Result<f64, CostError> {
        self.check(b)?;
        let x = self.capacity;
        Ok(match self.kind {
            CostKind::Utilization => b / (x - b),
        })
    }

    pub fn marginal(&self, b: f64) -> Result<f64, CostError> {
        self.check(b)?;
        let x = self.capacity;
        Ok(match self.kind {
            CostKind::Utilization => x / ((x - b) * (x - b)),
        })
    }

    /// Marginal cost of the first kbps.
    pub fn entry_marginal(&self) -> f64 {
        match self.kind {
            CostKind::Utilization => 1.0 / self.capacity,
        }
    }

    /// Load `b` at which `price + E'(b)` reaches `level`, clamped to
    /// `[0, ceiling]`. Zero when the level does not clear the entry threshold.
    pub fn inverse_marginal(&self, price: f64, level: f64) -> f64 {
        let gap = level - price;
        if gap <= self.entry_marginal() {
            return 0.0;
        }
        let x = self.capacity;
        let b = match self.kind {
            CostKind::Utilization => x - (x / gap).sqrt(),
        };
        b.clamp(0.0, self.ceiling())
    }
}

/// `E(b) = b / (x - b)` for a raw capacity; used by reporting code that
/// evaluates aggregate load against the original link capacity.
pub fn utilization_cost(capacity: f64, b: f64) -> Result<f64, CostError> {
    CostCurve::utilization(capacity)?.cost(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> CostCurve {
        CostCurve::utilization(x).unwrap()
    }

    #[test]
    fn cost_examples() {
        assert_eq!(c(1000.0).cost(0.0).unwrap(), 0.0);
        assert_eq!(c(1000.0).cost(500.0).unwrap(), 1.0);
        // direct evaluation: 900 / 100
        assert!((c(1000.0).cost(900.0).unwrap() - 9.0).abs() < 1e-12);
    }

    #[test]
    fn cost_domain() {
        assert!(c(1000.0).cost(1000.0).is_err());
        assert!(c(1000.0).cost(-1.0).is_err());
        assert!(c(1000.0).marginal(1200.0).is_err());
        assert!(CostCurve::utilization(0.0).is_err());
    }

    #[test]
    fn marginal_against_forward_difference() {
        let curve = c(1000.0);
        let h = 1e-3;
        for b in [0.0, 500.0] {
            let fd = (curve.cost(b + h).unwrap() - curve.cost(b).unwrap()) / h;
            assert!((curve.marginal(b).unwrap() - fd).abs() < 1e-6, "b={b}");
        }
        assert!((curve.marginal(0.0).unwrap() - 0.001).abs() < 1e-15);
        assert!((curve.marginal(500.0).unwrap() - 0.004).abs() < 1e-15);
    }

    #[test]
    fn marginal_diverges_near_pole() {
        let curve = c(1000.0);
        assert!(curve.marginal(999.999).unwrap() > 1e5);
        assert!(curve.marginal(1000.0 - 1e-6).unwrap() > 1e14);
    }

    #[test]
    fn inverse_marginal_thresholds() {
        let curve = c(1000.0);
        assert_eq!(curve.inverse_marginal(1.0, 1.001), 0.0);
        assert_eq!(curve.inverse_marginal(2.0, 1.5), 0.0);
    }

    #[test]
    fn inverse_marginal_against_bisection() {
        let curve = c(1000.0);
        let (price, level) = (1.0, 2.001);
        let (mut lo, mut hi) = (0.0f64, 1000.0 - 1e-9);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if price + curve.marginal(mid).unwrap() < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b = curve.inverse_marginal(price, level);
        assert!((b - lo).abs() < 0.1, "{b} vs {lo}");
        assert!((b - 968.4).abs() < 0.1);
    }

    #[test]
    fn inverse_marginal_clamps_below_pole() {
        let curve = c(1000.0);
        let b = curve.inverse_marginal(0.0, 1e30);
        assert!(b < 1000.0);
        assert!(curve.cost(b).unwrap().is_finite());
    }
}
