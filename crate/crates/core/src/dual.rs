//! Dual-side quantities of l1-penalized quantile regression and the safe
//! screening rule built on them.
//!
//! The dual of
//!
//! ```text
//! min_beta  sum_i rho_tau(y_i - x_i^T beta) + lam * ||beta||_1
//! ```
//!
//! is `max <theta, y>` subject to `||X^T theta||_inf <= lam` and
//! `tau - 1 <= theta_i <= tau`. A feature with `|X_j^T theta*| < lam` has a zero
//! coefficient. Since `theta*` is unknown we bound it inside a region that is
//! cheap to optimize over: in the recentred variable `theta~ = theta - (tau - 1/2)`
//! the box becomes `[-1/2, 1/2]^n`, which sits inside the ball of radius
//! `sqrt(n)/2`, and the dual objective is pinned between two parallel
//! hyperplanes `b2 <= <theta~, y> <= b1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column, dot, gemv_t, norm2, norm_inf};
use crate::quantile::{pinball_subdiff, Interval, QuantileLevel};

/// Relative slack allowed when an active slab face touches the ball from
/// outside by rounding only.
const FACE_ROUNDING: f64 = 1e-12;

/// Per-coordinate subdifferential of the loss at the response: the set of
/// dual points that certify `beta = 0`.
pub fn dual_box(y: &[f64], tau: QuantileLevel) -> Vec<Interval> {
    y.iter().map(|&yi| pinball_subdiff(yi, tau)).collect()
}

/// Index sets of positive, negative and zero responses (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SignPartition {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
    pub zero: Vec<usize>,
}

pub fn sign_partition(y: &[f64]) -> SignPartition {
    let mut part = SignPartition::default();
    for (i, &yi) in y.iter().enumerate() {
        if yi > 0.0 {
            part.positive.push(i);
        } else if yi < 0.0 {
            part.negative.push(i);
        } else {
            part.zero.push(i);
        }
    }
    part
}

/// `g = max { <theta, y> : tau - 1 <= theta_i <= tau }`, which equals the
/// loss of the all-zero model.
pub fn box_dual_max(y: &[f64], tau: QuantileLevel) -> f64 {
    let t = tau.value();
    y.iter()
        .map(|&yi| if yi > 0.0 { t * yi } else { (t - 1.0) * yi })
        .sum()
}

fn check_rows(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(())
}

/// `Delta_j = max over theta in the dual box of |X_j^T theta|`.
///
/// Coordinates with `y_i != 0` are fixed at `tau` or `tau - 1`; coordinates with
/// `y_i = 0` range over `[tau - 1, tau]` and are pushed to whichever endpoint
/// increases the magnitude.
pub fn compute_delta(x: &DMatrix<f64>, y: &[f64], tau: QuantileLevel) -> Result<Vec<f64>> {
    check_rows(x, y)?;
    let t = tau.value();
    let delta = (0..x.ncols())
        .map(|j| {
            let col = column(x, j);
            let mut zeta = 0.0;
            let mut up = 0.0;
            let mut down = 0.0;
            for (&xij, &yi) in col.iter().zip(y) {
                if yi > 0.0 {
                    zeta += t * xij;
                } else if yi < 0.0 {
                    zeta += (t - 1.0) * xij;
                } else if xij >= 0.0 {
                    up += t * xij;
                    down += (t - 1.0) * xij;
                } else {
                    up += (t - 1.0) * xij;
                    down += t * xij;
                }
            }
            (zeta + up).max(-zeta - down)
        })
        .collect();
    Ok(delta)
}

/// Smallest penalty above which the zero vector is the unique solution.
///
/// Returns 0 when every column is zero; callers treat that as degenerate.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64], tau: QuantileLevel) -> Result<f64> {
    Ok(norm_inf(&compute_delta(x, y, tau)?))
}

pub fn validate_weights(w: &[f64], p: usize) -> Result<()> {
    if w.len() != p {
        return Err(Error::LengthMismatch {
            expected: p,
            found: w.len(),
        });
    }
    match w.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(index) => Err(Error::NonPositiveWeight {
            index,
            value: w[index],
        }),
        None => Ok(()),
    }
}

/// `lambda_max` for the weighted penalty `lam * sum_j w_j |beta_j|`.
pub fn lambda_max_weighted(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    w: &[f64],
) -> Result<f64> {
    validate_weights(w, x.ncols())?;
    let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(lambda_max(x, y, tau)? / min_w)
}

/// The relaxed dual region in the recentred variable `theta~`:
/// `{ b2 <= <theta~, y> <= b1, ||theta~||_2 <= rho }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualRegion {
    pub rho: f64,
    pub b1: f64,
    pub b2: f64,
    /// Per-coordinate recentring constant `tau - 1/2`.
    pub shift: f64,
    pub y_norm: f64,
}

impl DualRegion {
    pub fn t1(&self) -> f64 {
        if self.y_norm > 0.0 {
            self.b1.abs() / self.y_norm
        } else {
            0.0
        }
    }

    pub fn t2(&self) -> f64 {
        if self.y_norm > 0.0 {
            self.b2.abs() / self.y_norm
        } else {
            0.0
        }
    }
}

pub fn dual_region(y: &[f64], tau: QuantileLevel, lam: f64, lam_max: f64) -> Result<DualRegion> {
    if lam_max <= 0.0 {
        return Err(Error::DegenerateLambdaMax);
    }
    if !(lam > 0.0 && lam <= lam_max) {
        return Err(Error::LambdaOutOfRange {
            lambda: lam,
            lambda_max: lam_max,
        });
    }
    let g = box_dual_max(y, tau);
    let offset = tau.shift() * y.iter().sum::<f64>();
    Ok(DualRegion {
        rho: (y.len() as f64).sqrt() / 2.0,
        b1: g - offset,
        b2: (lam / lam_max) * g - offset,
        shift: tau.shift(),
        y_norm: norm2(y),
    })
}

/// Maximum of a linear form over the region, given the form's decomposition
/// relative to `y`: `along = <c, y>/||y||`, `across = ||c_perp||`, `norm = ||c||`.
fn slab_ball_max_parts(along: f64, across: f64, norm: f64, region: &DualRegion) -> Result<f64> {
    if norm == 0.0 {
        return Ok(0.0);
    }
    let rho = region.rho;
    if region.y_norm == 0.0 {
        // slab reduces to 0 <= b1 and 0 >= b2
        return if region.b2 <= 0.0 && region.b1 >= 0.0 {
            Ok(rho * norm)
        } else {
            let distance = if region.b1 < 0.0 {
                region.b1
            } else {
                region.b2
            };
            Err(Error::EmptyDualRegion {
                distance: distance.abs(),
                rho,
            })
        };
    }
    let s1 = region.b1 / region.y_norm;
    let s2 = region.b2 / region.y_norm;
    // coordinate of the unconstrained ball maximizer rho * c/||c|| along y
    let peak = rho * along;
    let face = if peak > s1 * norm {
        s1
    } else if peak < s2 * norm {
        s2
    } else {
        return Ok(rho * norm);
    };
    let mut chord_sq = rho * rho - face * face;
    if chord_sq < 0.0 {
        if -chord_sq <= FACE_ROUNDING * rho * rho {
            chord_sq = 0.0;
        } else {
            return Err(Error::EmptyDualRegion {
                distance: face.abs(),
                rho,
            });
        }
    }
    Ok(face * along + across * chord_sq.sqrt())
}

/// `max { <c, theta~> : b2 <= <y, theta~> <= b1, ||theta~||_2 <= rho }` in closed
/// form.
///
/// If the ball maximizer `rho * c/||c||` lies inside the slab the answer is
/// `rho * ||c||`. Otherwise the violated face is active and the optimum sits
/// on the circle where that face cuts the ball.
pub fn slab_ball_max(c: &[f64], y: &[f64], region: &DualRegion) -> Result<f64> {
    if c.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            found: c.len(),
        });
    }
    let norm = norm2(c);
    let (along, across) = decompose(c, y, region.y_norm);
    slab_ball_max_parts(along, across, norm, region)
}

/// Splits `c` into its component along `y` and the norm of the remainder.
fn decompose(c: &[f64], y: &[f64], y_norm: f64) -> (f64, f64) {
    if y_norm == 0.0 {
        return (0.0, norm2(c));
    }
    let along = dot(c, y) / y_norm;
    let scale = along / y_norm;
    let across = c
        .iter()
        .zip(y)
        .map(|(ci, yi)| {
            let r = ci - scale * yi;
            r * r
        })
        .sum::<f64>()
        .sqrt();
    (along, across)
}

/// Literal evaluation of the published case table for the normalized bound
/// `d = z*/||c||`, in terms of `cos(gamma)` (angle between `c` and `y`) and the
/// face distances `t1`, `t2`. Rows are tried in order; `None` when no row
/// applies.
///
/// Kept for comparison with [`slab_ball_max`]. The two agree whenever
/// `b1 >= 0`, which always holds for regions built by [`dual_region`]; the
/// table's `b1 < 0` rows do not describe the maximizer.
pub fn case_table_distance(cos_gamma: f64, region: &DualRegion) -> Option<f64> {
    let rho = region.rho;
    let (b1, b2) = (region.b1, region.b2);
    let (t1, t2) = (region.t1(), region.t2());
    let c = cos_gamma;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let tan = s / c;
    let sign_b2 = crate::quantile::sign(b2);
    let root = |t: f64| (rho * rho - t * t).max(0.0).sqrt();

    if (b1 >= 0.0 && sign_b2 * t2 / rho <= c && c <= t1 / rho)
        || (b1 < 0.0 && -t1 / rho <= c && c <= -t2 / rho)
    {
        return Some(rho);
    }
    if b1 >= 0.0 && c > t1 / rho {
        return Some(t1 / c + root(t1) * s - t1 * tan * s);
    }
    if b1 >= 0.0 && b2 >= 0.0 && c < t2 / rho {
        return Some(root(t2) * s + t2 * c);
    }
    if (b1 >= 0.0 && c < -t2 / rho) || (b1 < 0.0 && c < -t1 / rho) {
        return Some(-t2 / c + root(t2) * s + t2 * tan * s);
    }
    if b1 < 0.0 && b2 < 0.0 && c > t1 / rho {
        return Some(root(t1) * s - t1 * c);
    }
    None
}

/// How the per-feature bounds are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    /// Closed-form slab-and-ball maximizer.
    #[default]
    Exact,
    /// The literal case table; errors where no row applies.
    CaseTable,
}

/// Certificates `X_j^T theta* <= p_plus` and `-X_j^T theta* <= p_minus`, with
/// their geometry. The recentring term enters `p_minus` with a minus sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureBound {
    pub p_plus: f64,
    pub p_minus: f64,
    pub d_plus: f64,
    pub d_minus: f64,
    pub cos_gamma_plus: f64,
    pub cos_gamma_minus: f64,
    pub t1: f64,
    pub t2: f64,
}

impl FeatureBound {
    pub fn max(&self) -> f64 {
        self.p_plus.max(self.p_minus)
    }
}

/// Lambda-independent per-column statistics, computed once per dataset so
/// that screening along a path costs O(p) per penalty value.
#[derive(Debug, Clone)]
pub struct ScreeningGeometry {
    tau: QuantileLevel,
    y: Vec<f64>,
    col_norm: Vec<f64>,
    col_sum: Vec<f64>,
    along: Vec<f64>,
    across: Vec<f64>,
    lambda_max: f64,
}

impl ScreeningGeometry {
    pub fn new(x: &DMatrix<f64>, y: &[f64], tau: QuantileLevel) -> Result<Self> {
        check_rows(x, y)?;
        let y_norm = norm2(y);
        let p = x.ncols();
        let mut col_norm = Vec::with_capacity(p);
        let mut col_sum = Vec::with_capacity(p);
        let mut along = Vec::with_capacity(p);
        let mut across = Vec::with_capacity(p);
        for j in 0..p {
            let col = column(x, j);
            col_norm.push(norm2(col));
            col_sum.push(col.iter().sum());
            let (a, w) = decompose(col, y, y_norm);
            along.push(a);
            across.push(w);
        }
        Ok(Self {
            tau,
            y: y.to_vec(),
            col_norm,
            col_sum,
            along,
            across,
            lambda_max: lambda_max(x, y, tau)?,
        })
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn n_features(&self) -> usize {
        self.col_norm.len()
    }

    pub fn lambda_max_weighted(&self, w: &[f64]) -> Result<f64> {
        validate_weights(w, self.n_features())?;
        let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(self.lambda_max / min_w)
    }

    pub fn region(&self, lam: f64, lam_max: f64) -> Result<DualRegion> {
        dual_region(&self.y, self.tau, lam, lam_max)
    }

    pub fn bounds(&self, lam: f64, lam_max: f64, method: BoundMethod) -> Result<Vec<FeatureBound>> {
        let region = self.region(lam, lam_max)?;
        let (t1, t2) = (region.t1(), region.t2());
        (0..self.n_features())
            .map(|j| {
                let norm = self.col_norm[j];
                let shift_term = region.shift * self.col_sum[j];
                let cos_plus = if norm > 0.0 && region.y_norm > 0.0 {
                    (self.along[j] / norm).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                let (d_plus, d_minus) = match method {
                    BoundMethod::Exact => {
                        let zp = slab_ball_max_parts(self.along[j], self.across[j], norm, &region)?;
                        let zm =
                            slab_ball_max_parts(-self.along[j], self.across[j], norm, &region)?;
                        if norm > 0.0 {
                            (zp / norm, zm / norm)
                        } else {
                            (0.0, 0.0)
                        }
                    }
                    BoundMethod::CaseTable => {
                        if norm == 0.0 {
                            (0.0, 0.0)
                        } else {
                            let lookup = |c: f64| {
                                case_table_distance(c, &region).ok_or_else(|| {
                                    Error::InvalidArgument(format!(
                                        "case table has no row for cos(gamma) = {c}, b1 = {}, b2 = {}",
                                        region.b1, region.b2
                                    ))
                                })
                            };
                            (lookup(cos_plus)?, lookup(-cos_plus)?)
                        }
                    }
                };
                Ok(FeatureBound {
                    p_plus: d_plus * norm + shift_term,
                    p_minus: d_minus * norm - shift_term,
                    d_plus,
                    d_minus,
                    cos_gamma_plus: cos_plus,
                    cos_gamma_minus: -cos_plus,
                    t1,
                    t2,
                })
            })
            .collect()
    }

    /// Applies the elimination test `max(P+_j, P-_j) < lam * w_j - margin`.
    pub fn screen(
        &self,
        lam: f64,
        weights: Option<&[f64]>,
        opts: &ScreenOptions,
    ) -> Result<ScreeningReport> {
        if !(opts.margin >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "screening margin must be nonnegative, got {}",
                opts.margin
            )));
        }
        let lam_max = match weights {
            Some(w) => self.lambda_max_weighted(w)?,
            None => self.lambda_max,
        };
        let bounds = self.bounds(lam, lam_max, opts.method)?;
        let eliminated = bounds
            .iter()
            .enumerate()
            .filter(|(j, b)| {
                if self.col_norm[*j] == 0.0 {
                    return true;
                }
                let w = weights.map_or(1.0, |w| w[*j]);
                b.max() < lam * w - opts.margin
            })
            .map(|(j, _)| j)
            .collect();
        Ok(ScreeningReport {
            lambda: lam,
            eliminated,
            bounds,
            lambda_max_used: lam_max,
        })
    }
}

pub fn feature_bounds(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    lam: f64,
    lam_max: f64,
) -> Result<Vec<FeatureBound>> {
    ScreeningGeometry::new(x, y, tau)?.bounds(lam, lam_max, BoundMethod::Exact)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenOptions {
    pub method: BoundMethod,
    /// Extra slack subtracted from the threshold; can only shrink the
    /// eliminated set.
    pub margin: f64,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        Self {
            method: BoundMethod::Exact,
            margin: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub lambda: f64,
    /// 0-based indices of eliminated features, ascending.
    pub eliminated: Vec<usize>,
    pub bounds: Vec<FeatureBound>,
    pub lambda_max_used: f64,
}

/// Screens at penalty `lam`. With `weights`, uses the weighted rule and its
/// `lambda_max`.
pub fn screen(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    lam: f64,
    weights: Option<&[f64]>,
) -> Result<ScreeningReport> {
    ScreeningGeometry::new(x, y, tau)?.screen(lam, weights, &ScreenOptions::default())
}

/// Dual feasibility: `||X^T theta||_inf <= lam + tol` and every coordinate in
/// `[tau - 1 - tol, tau + tol]`.
pub fn dual_feasible(
    theta: &[f64],
    x: &DMatrix<f64>,
    tau: QuantileLevel,
    lam: f64,
    tol: f64,
) -> bool {
    if theta.len() != x.nrows() {
        return false;
    }
    let t = tau.value();
    if theta.iter().any(|&v| v < t - 1.0 - tol || v > t + tol) {
        return false;
    }
    let mut xt = vec![0.0; x.ncols()];
    gemv_t(x, theta, &mut xt);
    norm_inf(&xt) <= lam + tol
}
