//! Scalar and vector calculus of the pinball (check) loss and the l1 penalty.
//!
//! The pinball loss at level `tau` is
//!
//! ```text
//! rho_tau(xi) = tau * xi          if xi > 0
//!             = (tau - 1) * xi    if xi <= 0
//! ```
//!
//! Everything here is a pure function. Membership tests take their tolerance
//! explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidQuantile(tau))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Offset of the dual box centre from the origin, `tau - 1/2`.
    #[inline]
    pub fn shift(self) -> f64 {
        self.0 - 0.5
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(tau: f64) -> Result<Self> {
        Self::new(tau)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(tau: QuantileLevel) -> f64 {
        tau.0
    }
}

/// Closed interval `[lo, hi]`, possibly a singleton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Self { lo, hi }
    }

    pub fn singleton(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    /// Distance from `v` to the interval, zero inside.
    pub fn distance(&self, v: f64) -> f64 {
        if v < self.lo {
            self.lo - v
        } else if v > self.hi {
            v - self.hi
        } else {
            0.0
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        if c >= 0.0 {
            Self::new(c * self.lo, c * self.hi)
        } else {
            Self::new(c * self.hi, c * self.lo)
        }
    }
}

/// Conjugate values are either finite or `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    PosInfinity,
}

impl Extended {
    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }
}

#[inline]
pub fn pinball_loss(xi: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if xi > 0.0 {
        t * xi
    } else {
        (t - 1.0) * xi
    }
}

/// Sum of the pinball loss over a residual vector.
pub fn pinball_sum(residuals: &[f64], tau: QuantileLevel) -> f64 {
    residuals.iter().map(|&r| pinball_loss(r, tau)).sum()
}

pub fn pinball_subdiff(xi: f64, tau: QuantileLevel) -> Interval {
    let t = tau.value();
    if xi > 0.0 {
        Interval::singleton(t)
    } else if xi < 0.0 {
        Interval::singleton(t - 1.0)
    } else {
        Interval::new(t - 1.0, t)
    }
}

/// Fenchel conjugate of the pinball loss: the indicator of `[tau - 1, tau]`.
pub fn pinball_conjugate(nu: f64, tau: QuantileLevel) -> Extended {
    let t = tau.value();
    if nu >= t - 1.0 && nu <= t {
        Extended::Finite(0.0)
    } else {
        Extended::PosInfinity
    }
}

/// `argmin_u  scale * rho_tau(u) + (u - xi)^2 / 2`.
///
/// The dead zone is `((tau - 1) * scale, tau * scale)`; outside it the input is
/// shifted toward zero by the slope of the active branch.
#[inline]
pub fn pinball_prox(xi: f64, tau: QuantileLevel, scale: f64) -> f64 {
    debug_assert!(scale > 0.0);
    let t = tau.value();
    let upper = t * scale;
    let lower = (t - 1.0) * scale;
    if xi >= upper {
        xi - upper
    } else if xi <= lower {
        xi - lower
    } else {
        0.0
    }
}

/// `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn soft_threshold_scalar(x: f64, t: f64) -> f64 {
    let m = x.abs() - t;
    if m > 0.0 {
        m * sign(x)
    } else {
        0.0
    }
}

/// Component-wise `[|x_i| - t]_+ * sign(x_i)`, the prox of `t * ||.||_1`.
pub fn soft_threshold(x: &[f64], t: f64) -> Vec<f64> {
    debug_assert!(t >= 0.0);
    x.iter().map(|&v| soft_threshold_scalar(v, t)).collect()
}

/// Subdifferential of `|x|` at `x`.
pub fn abs_subdiff(x: f64) -> Interval {
    if x == 0.0 {
        Interval::new(-1.0, 1.0)
    } else {
        Interval::singleton(sign(x))
    }
}

/// Tests `g ∈ lam * ∂||beta||_1` coordinate-wise with absolute tolerance `tol`.
pub fn l1_subdiff_member(beta: &[f64], g: &[f64], lam: f64, tol: f64) -> Result<bool> {
    if beta.len() != g.len() {
        return Err(Error::LengthMismatch {
            expected: beta.len(),
            found: g.len(),
        });
    }
    Ok(beta.iter().zip(g).all(|(&b, &gi)| {
        if b != 0.0 {
            (gi - lam * sign(b)).abs() <= tol
        } else {
            gi.abs() <= lam + tol
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    /// Brute-force minimizer of `c * rho(u) + (u - xi)^2 / 2` on a grid.
    fn prox_grid(xi: f64, tau: QuantileLevel, c: f64, lo: f64, hi: f64, step: f64) -> f64 {
        let steps = ((hi - lo) / step).round() as usize;
        let mut best = (f64::INFINITY, lo);
        for k in 0..=steps {
            let u = lo + k as f64 * step;
            let v = c * pinball_loss(u, tau) + 0.5 * (u - xi) * (u - xi);
            if v < best.0 {
                best = (v, u);
            }
        }
        best.1
    }

    #[test]
    fn quantile_level_rejects_closed_endpoints() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(-0.2).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(0.5).is_ok());
    }

    #[test]
    fn pinball_loss_values() {
        assert_eq!(pinball_loss(2.0, q(0.5)), 1.0);
        assert_eq!(pinball_loss(0.0, q(0.3)), 0.0);
        assert_eq!(pinball_loss(-4.0, q(0.25)), 3.0);
    }

    #[test]
    fn pinball_subdiff_values() {
        assert_eq!(pinball_subdiff(1.0, q(0.25)), Interval::new(0.25, 0.25));
        assert_eq!(pinball_subdiff(0.0, q(0.25)), Interval::new(-0.75, 0.25));
        assert_eq!(pinball_subdiff(-1.0, q(0.5)), Interval::new(-0.5, -0.5));
    }

    #[test]
    fn pinball_conjugate_values() {
        assert_eq!(pinball_conjugate(0.0, q(0.5)), Extended::Finite(0.0));
        for t in [0.1, 0.25, 0.9] {
            assert_eq!(pinball_conjugate(t, q(t)), Extended::Finite(0.0));
            assert_eq!(pinball_conjugate(t - 1.0, q(t)), Extended::Finite(0.0));
        }
        assert_eq!(pinball_conjugate(1.5, q(0.5)), Extended::PosInfinity);
    }

    #[test]
    fn pinball_prox_values() {
        assert_eq!(pinball_prox(0.3, q(0.5), 1.0), 0.0);
        assert_eq!(pinball_prox(1.0, q(0.25), 1.0), 0.75);
        assert_eq!(pinball_prox(2.0, q(0.5), 2.0), 1.0);
    }

    #[test]
    fn pinball_prox_scaled_example_matches_grid_scan() {
        let u = prox_grid(2.0, q(0.5), 2.0, -5.0, 5.0, 1e-6);
        assert!((u - 1.0).abs() <= 1e-6, "grid minimizer {u}");
    }

    #[test]
    fn pinball_prox_branches_agree_at_boundaries() {
        for t in [0.1, 0.5, 0.8] {
            for c in [0.5, 1.0, 3.0] {
                let tau = q(t);
                assert_eq!(pinball_prox(t * c, tau, c), 0.0);
                assert_eq!(pinball_prox((t - 1.0) * c, tau, c), 0.0);
                let eps = 1e-12;
                assert!(pinball_prox(t * c + eps, tau, c).abs() < 1e-11);
                assert!(pinball_prox((t - 1.0) * c - eps, tau, c).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn soft_threshold_values() {
        assert_eq!(soft_threshold(&[2.0, -0.5, 0.0], 1.0), vec![1.0, 0.0, 0.0]);
        let x = [3.5, -1.25, 0.0, 1e-9];
        assert_eq!(soft_threshold(&x, 0.0), x.to_vec());
        assert_eq!(soft_threshold(&[-3.0], 1.5), vec![-1.5]);
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn l1_membership() {
        let lam = 0.7;
        assert!(l1_subdiff_member(&[1.0, 0.0], &[lam, 0.5 * lam], lam, 0.0).unwrap());
        assert!(!l1_subdiff_member(&[0.0], &[1.1 * lam], lam, 0.0).unwrap());
        assert!(l1_subdiff_member(&[-2.0], &[-lam], lam, 0.0).unwrap());
        assert!(!l1_subdiff_member(&[-2.0], &[lam], lam, 0.0).unwrap());
        assert!(matches!(
            l1_subdiff_member(&[1.0], &[1.0, 2.0], lam, 0.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn interval_distance() {
        let i = Interval::new(-1.0, 2.0);
        assert_eq!(i.distance(0.0), 0.0);
        assert_eq!(i.distance(3.5), 1.5);
        assert_eq!(i.distance(-4.0), 3.0);
        assert_eq!(i.scale(-2.0), Interval::new(-4.0, 2.0));
    }
}
