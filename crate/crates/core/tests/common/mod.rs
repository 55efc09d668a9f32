//! Test-side oracles written directly from the optimality conditions, with
//! no calls into the library's own residual or objective code.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha20Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn rho(xi: f64, tau: f64) -> f64 {
    if xi > 0.0 {
        tau * xi
    } else {
        (tau - 1.0) * xi
    }
}

/// `X^T v` by explicit loops.
pub fn xt_mul(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..x.ncols())
        .map(|j| (0..x.nrows()).map(|i| x[(i, j)] * v[i]).sum())
        .collect()
}

pub fn x_mul(x: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| (0..x.ncols()).map(|j| x[(i, j)] * b[j]).sum())
        .collect()
}

/// `sum rho_tau(y - X beta) + lam * sum w_j |beta_j|`.
pub fn primal_objective(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    lam: f64,
    w: Option<&[f64]>,
    beta: &[f64],
) -> f64 {
    let fit = x_mul(x, beta);
    let loss: f64 = y.iter().zip(&fit).map(|(a, b)| rho(a - b, tau)).sum();
    let pen: f64 = beta
        .iter()
        .enumerate()
        .map(|(j, b)| w.map_or(1.0, |w| w[j]) * b.abs())
        .sum();
    loss + lam * pen
}

/// `g`: the dual objective maximized over the box alone, equal to the loss of
/// the zero model.
pub fn box_max(y: &[f64], tau: f64) -> f64 {
    y.iter()
        .map(|&v| if v > 0.0 { tau * v } else { (tau - 1.0) * v })
        .sum()
}

/// Largest violation of
/// `X^T theta ∈ lam w ∂||beta||_1`, `y = X beta + alpha`, `theta_i ∈ ∂rho(alpha_i)`.
#[allow(clippy::too_many_arguments)]
pub fn kkt_violation(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    lam: f64,
    w: Option<&[f64]>,
    beta: &[f64],
    alpha: &[f64],
    theta: &[f64],
) -> f64 {
    let xt = xt_mul(x, theta);
    let mut worst = 0.0_f64;
    for j in 0..beta.len() {
        let l = lam * w.map_or(1.0, |w| w[j]);
        let v = if beta[j] > 0.0 {
            (xt[j] - l).abs()
        } else if beta[j] < 0.0 {
            (xt[j] + l).abs()
        } else {
            (xt[j].abs() - l).max(0.0)
        };
        worst = worst.max(v);
    }
    let fit = x_mul(x, beta);
    for i in 0..y.len() {
        worst = worst.max((y[i] - fit[i] - alpha[i]).abs());
        let (lo, hi) = if alpha[i] > 0.0 {
            (tau, tau)
        } else if alpha[i] < 0.0 {
            (tau - 1.0, tau - 1.0)
        } else {
            (tau - 1.0, tau)
        };
        worst = worst.max((lo - theta[i]).max(theta[i] - hi).max(0.0));
    }
    worst
}

/// Projects `theta` onto the box, scales it into `|X_j^T theta| <= lam w_j`
/// and returns `P(beta) - <theta, y>`.
pub fn duality_gap(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: f64,
    lam: f64,
    beta: &[f64],
    theta: &[f64],
) -> f64 {
    let mut t: Vec<f64> = theta.iter().map(|v| v.clamp(tau - 1.0, tau)).collect();
    let xt = xt_mul(x, &t);
    let excess = xt.iter().fold(0.0_f64, |m, v| m.max(v.abs() / lam));
    if excess > 1.0 {
        t.iter_mut().for_each(|v| *v /= excess);
    }
    let dual: f64 = t.iter().zip(y).map(|(a, b)| a * b).sum();
    primal_objective(x, y, tau, lam, None, beta) - dual
}

/// `Delta_j` by enumerating every assignment of the box endpoints to the
/// coordinates where `y_i = 0`.
pub fn delta_brute_force(x: &DMatrix<f64>, y: &[f64], tau: f64) -> Vec<f64> {
    let zeros: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 0.0).collect();
    assert!(zeros.len() <= 16, "too many zero responses to enumerate");
    let base: Vec<f64> = y
        .iter()
        .map(|&v| {
            if v > 0.0 {
                tau
            } else if v < 0.0 {
                tau - 1.0
            } else {
                0.0
            }
        })
        .collect();
    (0..x.ncols())
        .map(|j| {
            let mut best = 0.0_f64;
            for mask in 0u32..(1 << zeros.len()) {
                let mut theta = base.clone();
                for (k, &i) in zeros.iter().enumerate() {
                    theta[i] = if mask >> k & 1 == 1 { tau } else { tau - 1.0 };
                }
                let v: f64 = (0..y.len()).map(|i| x[(i, j)] * theta[i]).sum();
                best = best.max(v.abs());
            }
            best
        })
        .collect()
}

/// Lower bound on the true penalty threshold of column `j`: the distance from
/// zero to the range of `X_j^T theta` over the admissible dual points.
pub fn column_floor(x: &DMatrix<f64>, y: &[f64], tau: f64, j: usize) -> f64 {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for i in 0..y.len() {
        let a = x[(i, j)];
        if y[i] > 0.0 {
            lo += tau * a;
            hi += tau * a;
        } else if y[i] < 0.0 {
            lo += (tau - 1.0) * a;
            hi += (tau - 1.0) * a;
        } else {
            lo += (tau * a).min((tau - 1.0) * a);
            hi += (tau * a).max((tau - 1.0) * a);
        }
    }
    if lo <= 0.0 && hi >= 0.0 {
        0.0
    } else {
        lo.abs().min(hi.abs())
    }
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, a| m.max(a.abs()))
}
