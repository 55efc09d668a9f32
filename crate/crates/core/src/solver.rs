//! Linearized proximal ADMM for l1-penalized quantile regression.
//!
//! The problem is split as
//!
//! ```text
//! min  sum_i rho_tau(alpha_i) + lam * sum_j w_j |beta_j|
//! s.t. y - X beta - alpha = 0
//! ```
//!
//! with multiplier `theta` entering the Lagrangian as `+<theta, y - X beta - alpha>`,
//! so `theta` is exactly the dual variable of the screening rule.
//!
//! Two ADMM schemes are available ([`AdmmVariant`]):
//!
//! * `Linearized`: exact prox step in `alpha`, a linearized prox step in `beta`
//!   (step `1/eta` with `eta >= sigma * ||X||_2^2`), dual ascent in `theta`.
//! * `Split` (default): adds the constraint `beta = gamma` with penalty `rho`.
//!   The `beta` step is an exact ridge solve, done through a Cholesky factor
//!   of the `n x n` matrix `(rho/sigma) I + X X^T`; the l1 prox acts on
//!   `gamma`, which is the coefficient vector returned. The linearized step
//!   is too short to make progress when columns have large means, which is
//!   the case for the simulation design.
//!
//! Both stop on the same test: the returned `(beta, alpha, theta)` must satisfy
//! `||y - X beta - alpha||_2 <= eps_pri` and the larger of the stationarity
//! and loss-subgradient violations must be `<= eps_dual`.
//!
//! On convergence an optional polish step guesses the active sets (nonzero
//! coefficients, zero residuals), solves the resulting linear systems and
//! keeps the result if it is a better KKT point.

use std::time::Instant;

use std::cell::OnceCell;

use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dual::{compute_delta, validate_weights, ScreenOptions, ScreeningGeometry};
use crate::error::{Error, Result};
use crate::linalg::{
    column, dot, gemv_sparse, gemv_t, norm2, norm_inf, select_columns, spectral_norm_sq,
};
use crate::quantile::{
    abs_subdiff, pinball_prox, pinball_subdiff, pinball_sum, soft_threshold_scalar, QuantileLevel,
};

/// Power-iteration sweeps used to estimate `||X||_2^2`.
pub const POWER_ITERATIONS: usize = 50;
/// Multiplier applied to the power-iteration estimate when setting `eta`.
pub const ETA_SAFETY: f64 = 1.05;
/// Iterations between residual checks (each check costs one `X^T theta`).
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
const MAX_POLISH_SUBSETS: usize = 32;
const MAX_POLISH_DROPS: usize = 2;
/// Longest run of checks skipped between polish attempts on a fixed support.
const MAX_POLISH_BACKOFF: usize = 64;
const MAX_POLISH_DROP_POOL: usize = 8;

fn default_relaxation() -> f64 {
    1.6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iter: usize,
    pub sigma: f64,
    /// Dual step length, in `(0, (1 + sqrt 5)/2)`.
    pub dual_step: f64,
    /// Over-relaxation factor in `(0, 2)` for the split scheme; 1 disables it.
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
    /// Rescale `sigma` by 2 when one residual exceeds the other tenfold.
    pub adaptive_sigma: bool,
    /// Active-set refinement at convergence.
    pub polish: bool,
    pub variant: AdmmVariant,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmmVariant {
    /// Exact coefficient step on a split copy of `beta`.
    #[default]
    Split,
    /// One proximal-gradient step in `beta` per iteration, step `1/eta`.
    Linearized,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_abs: 1e-6,
            tol_rel: 1e-4,
            max_iter: 20_000,
            sigma: 1.0,
            dual_step: 1.0,
            relaxation: default_relaxation(),
            adaptive_sigma: false,
            polish: true,
            variant: AdmmVariant::Split,
        }
    }
}

impl SolveOptions {
    /// Settings for reference solves in tests and benchmarks.
    pub fn tight() -> Self {
        Self {
            tol_abs: 1e-10,
            tol_rel: 0.0,
            max_iter: 1_000_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let bad = |what: &str, v: f64| Err(Error::InvalidArgument(format!("{what} = {v}")));
        if !(self.tol_abs >= 0.0) {
            return bad("tol_abs", self.tol_abs);
        }
        if !(self.tol_rel >= 0.0) {
            return bad("tol_rel", self.tol_rel);
        }
        if self.tol_abs == 0.0 && self.tol_rel == 0.0 {
            return bad("tol_abs + tol_rel", 0.0);
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", self.sigma);
        }
        if !(self.dual_step > 0.0 && self.dual_step < golden) {
            return bad("dual_step", self.dual_step);
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return bad("relaxation", self.relaxation);
        }
        if self.relaxation != 1.0 && self.dual_step != 1.0 {
            return Err(Error::InvalidArgument(
                "relaxation and a dual step other than 1 cannot be combined".into(),
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter", 0.0);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma: f64,
    /// Linearization constant, or `rho` for the split scheme.
    pub eta: f64,
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub converged: bool,
    pub polished: bool,
}

impl SolverState {
    /// Zero coefficients with `alpha = y`, the exact solution above `lambda_max`.
    pub fn cold(y: &[f64], p: usize) -> Self {
        Self {
            beta: vec![0.0; p],
            alpha: y.to_vec(),
            theta: vec![0.0; y.len()],
            sigma: 0.0,
            eta: 0.0,
            iter: 0,
            primal_res: 0.0,
            dual_res: 0.0,
            converged: false,
            polished: false,
        }
    }
}

/// A dataset bound to a quantile level and optional penalty weights, with the
/// spectral estimate the linearization needs.
#[derive(Debug, Clone)]
pub struct QuantileLasso<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    tau: QuantileLevel,
    weights: Option<&'a [f64]>,
    spectral: f64,
    gram: OnceCell<DMatrix<f64>>,
    zero_above: OnceCell<f64>,
}

impl<'a> QuantileLasso<'a> {
    pub fn new(x: &'a DMatrix<f64>, y: &'a [f64], tau: QuantileLevel) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::LengthMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        Ok(Self {
            x,
            y,
            tau,
            weights: None,
            spectral: spectral_norm_sq(x, POWER_ITERATIONS),
            gram: OnceCell::new(),
            zero_above: OnceCell::new(),
        })
    }

    pub fn with_weights(mut self, w: Option<&'a [f64]>) -> Result<Self> {
        if let Some(w) = w {
            validate_weights(w, self.x.ncols())?;
        }
        self.weights = w;
        Ok(self)
    }

    /// Estimated largest eigenvalue of `X^T X`.
    pub fn spectral(&self) -> f64 {
        self.spectral
    }

    fn weight(&self, j: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[j])
    }

    fn eta_for(&self, sigma: f64) -> f64 {
        sigma * (ETA_SAFETY * self.spectral).max(f64::MIN_POSITIVE)
    }

    pub fn solve(
        &self,
        lam: f64,
        opts: &SolveOptions,
        warm: Option<&SolverState>,
    ) -> Result<SolverState> {
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lam}"
            )));
        }
        opts.validate()?;
        let (n, p) = self.x.shape();
        if lam >= self.zero_above()? {
            return Ok(self.zero_solution(opts));
        }
        let start = match warm {
            Some(w) => {
                if w.beta.len() != p || w.alpha.len() != n || w.theta.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "warm start has shape ({}, {}, {}), problem needs ({p}, {n}, {n})",
                        w.beta.len(),
                        w.alpha.len(),
                        w.theta.len()
                    )));
                }
                (w.beta.clone(), w.alpha.clone(), w.theta.clone())
            }
            None => (vec![0.0; p], self.y.to_vec(), vec![0.0; n]),
        };
        let mut state = match opts.variant {
            AdmmVariant::Split => self.run_split(lam, opts, start)?,
            AdmmVariant::Linearized => self.run_linearized(lam, opts, start)?,
        };
        if opts.polish && !state.polished {
            if let Some(better) = self.polish(lam, &state) {
                state = SolverState {
                    converged: state.converged,
                    ..better
                };
            }
        }
        Ok(state)
    }

    /// `max_j Delta_j / w_j`: from here up the zero vector is optimal.
    fn zero_above(&self) -> Result<f64> {
        if let Some(&v) = self.zero_above.get() {
            return Ok(v);
        }
        let delta = compute_delta(self.x, self.y, self.tau)?;
        let v = delta
            .iter()
            .enumerate()
            .map(|(j, d)| d / self.weight(j))
            .fold(0.0_f64, f64::max);
        Ok(*self.zero_above.get_or_init(|| v))
    }

    /// `beta = 0`, `alpha = y`, with `theta` the subgradient of the loss at `y`
    /// (0 where `y_i = 0`).
    fn zero_solution(&self, opts: &SolveOptions) -> SolverState {
        let t = self.tau.value();
        let theta = self
            .y
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    t
                } else if v < 0.0 {
                    t - 1.0
                } else {
                    0.0
                }
            })
            .collect();
        SolverState {
            beta: vec![0.0; self.x.ncols()],
            alpha: self.y.to_vec(),
            theta,
            sigma: opts.sigma,
            eta: 0.0,
            iter: 0,
            primal_res: 0.0,
            dual_res: 0.0,
            converged: true,
            polished: false,
        }
    }

    fn run_linearized(
        &self,
        lam: f64,
        opts: &SolveOptions,
        (mut beta, mut alpha, mut theta): (Vec<f64>, Vec<f64>, Vec<f64>),
    ) -> Result<SolverState> {
        let (n, p) = self.x.shape();
        let x = self.x;
        let y = self.y;
        let mut sigma = opts.sigma;
        let mut eta = self.eta_for(sigma);
        let mut monitor = Monitor::new(p);

        let mut xb = vec![0.0; n];
        gemv_sparse(x, &beta, &mut xb);
        let mut w = vec![0.0; n];
        let mut grad = vec![0.0; p];

        let mut iter = 0;
        while iter < opts.max_iter {
            iter += 1;
            let inv_sigma = 1.0 / sigma;
            for i in 0..n {
                alpha[i] = pinball_prox(y[i] - xb[i] + theta[i] * inv_sigma, self.tau, inv_sigma);
                w[i] = xb[i] + alpha[i] - y[i] - theta[i] * inv_sigma;
            }
            gemv_t(x, &w, &mut grad);
            let step = sigma / eta;
            for j in 0..p {
                beta[j] =
                    soft_threshold_scalar(beta[j] - step * grad[j], lam * self.weight(j) / eta);
            }
            gemv_sparse(x, &beta, &mut xb);
            for i in 0..n {
                theta[i] += opts.dual_step * sigma * (y[i] - xb[i] - alpha[i]);
            }

            if iter % CHECK_EVERY != 0 && iter != opts.max_iter {
                continue;
            }
            match self.check(
                lam,
                opts,
                &mut monitor,
                &beta,
                &alpha,
                &theta,
                &xb,
                iter,
                sigma,
                eta,
            )? {
                Check::Continue => {}
                Check::Done(state) => return Ok(state),
            }
            if let Some(rescale) = monitor.rescale(opts, iter) {
                sigma *= rescale;
                eta = self.eta_for(sigma);
            }
        }
        Ok(monitor.finish(beta, alpha, theta, sigma, eta, iter))
    }

    /// Splitting with a copy `gamma = beta`: the `beta` step is an exact ridge
    /// solve through the `n x n` system `(rho/sigma) I + X X^T`, the penalty
    /// acts on `gamma`, and `gamma` is what gets returned.
    fn run_split(
        &self,
        lam: f64,
        opts: &SolveOptions,
        (warm_beta, mut alpha, mut theta): (Vec<f64>, Vec<f64>, Vec<f64>),
    ) -> Result<SolverState> {
        let (n, p) = self.x.shape();
        let x = self.x;
        let y = self.y;
        let gram = self.gram();
        let mut sigma = opts.sigma;
        let mut rho = self.rho_for(sigma);
        let mut chol = factor(gram, rho / sigma)?;
        let mut monitor = Monitor::new(p);

        let mut gamma = warm_beta;
        let mut beta = gamma.clone();
        // the coefficient multiplier converges to X^T theta, clipped to the penalty box
        let mut mu = vec![0.0; p];
        gemv_t(x, &theta, &mut mu);
        for (j, m) in mu.iter_mut().enumerate() {
            let bound = lam * self.weight(j);
            *m = m.clamp(-bound, bound);
        }
        let mut xg = vec![0.0; n];
        gemv_sparse(x, &gamma, &mut xg);
        let mut xmu = vec![0.0; n];
        gemv_sparse(x, &mu, &mut xmu);

        let mut u = DVector::zeros(n);
        let mut xb = vec![0.0; n];
        let mut v = vec![0.0; n];
        let relax = opts.relaxation;

        let mut iter = 0;
        while iter < opts.max_iter {
            iter += 1;
            let inv_sigma = 1.0 / sigma;
            // X r with r = X^T u + rho gamma - mu
            for i in 0..n {
                u[i] = sigma * (y[i] - alpha[i]) + theta[i];
            }
            let mut s = gram * &u;
            for i in 0..n {
                s[i] += rho * xg[i] - xmu[i];
            }
            let q = chol.solve(&s);
            for i in 0..n {
                v[i] = u[i] - q[i];
                xb[i] = q[i] * inv_sigma;
            }
            gemv_t(x, &v, &mut beta);
            for j in 0..p {
                beta[j] = (beta[j] + rho * gamma[j] - mu[j]) / rho;
            }

            // over-relaxed copies of X beta and beta stand in for the new iterates
            for i in 0..n {
                let hat = relax * xb[i] + (1.0 - relax) * (y[i] - alpha[i]);
                alpha[i] = pinball_prox(y[i] - hat + theta[i] * inv_sigma, self.tau, inv_sigma);
                theta[i] += opts.dual_step * sigma * (y[i] - hat - alpha[i]);
            }
            for j in 0..p {
                let hat = relax * beta[j] + (1.0 - relax) * gamma[j];
                gamma[j] = soft_threshold_scalar(hat + mu[j] / rho, lam * self.weight(j) / rho);
                mu[j] += opts.dual_step * rho * (hat - gamma[j]);
            }
            for i in 0..n {
                xb[i] = relax * xb[i] + (1.0 - relax) * xg[i];
            }
            gemv_sparse(x, &gamma, &mut xg);
            for i in 0..n {
                xmu[i] += opts.dual_step * rho * (xb[i] - xg[i]);
            }

            if iter % CHECK_EVERY != 0 && iter != opts.max_iter {
                continue;
            }
            if xg.iter().chain(&theta).any(|v| !v.is_finite()) {
                return Err(Error::NumericalDivergence { iter });
            }
            match self.check(
                lam,
                opts,
                &mut monitor,
                &gamma,
                &alpha,
                &theta,
                &xg,
                iter,
                sigma,
                rho,
            )? {
                Check::Continue => {}
                Check::Done(state) => return Ok(state),
            }
            // the running product drifts; refresh it with the checks
            gemv_sparse(x, &mu, &mut xmu);
            if let Some(rescale) = monitor.rescale(opts, iter) {
                sigma *= rescale;
                rho = self.rho_for(sigma);
                chol = factor(gram, rho / sigma)?;
            }
        }
        Ok(monitor.finish(gamma, alpha, theta, sigma, rho, iter))
    }

    /// Residual test on the returned triple, then a polish attempt once the
    /// supports of `beta` and of the zero residuals have settled.
    #[allow(clippy::too_many_arguments)]
    fn check(
        &self,
        lam: f64,
        opts: &SolveOptions,
        monitor: &mut Monitor,
        beta: &[f64],
        alpha: &[f64],
        theta: &[f64],
        xb: &[f64],
        iter: usize,
        sigma: f64,
        eta: f64,
    ) -> Result<Check> {
        let n = self.y.len();
        let y = self.y;
        let primal_res = (0..n)
            .map(|i| (y[i] - xb[i] - alpha[i]).powi(2))
            .sum::<f64>()
            .sqrt();
        gemv_t(self.x, theta, &mut monitor.xt);
        let xt = &monitor.xt;
        let stationarity = (0..beta.len())
            .map(|j| {
                abs_subdiff(beta[j])
                    .scale(lam * self.weight(j))
                    .distance(xt[j])
            })
            .fold(0.0_f64, f64::max);
        let loss = (0..n)
            .map(|i| pinball_subdiff(alpha[i], self.tau).distance(theta[i]))
            .fold(0.0_f64, f64::max);
        let dual_res = stationarity.max(loss);
        if !(primal_res.is_finite() && dual_res.is_finite()) {
            return Err(Error::NumericalDivergence { iter });
        }
        monitor.primal_res = primal_res;
        monitor.dual_res = dual_res;

        let eps_pri = opts.tol_abs + opts.tol_rel * norm2(y).max(norm2(xb)).max(norm2(alpha));
        let eps_dual = opts.tol_abs + opts.tol_rel * norm_inf(xt);
        let snapshot = |converged| SolverState {
            beta: beta.to_vec(),
            alpha: alpha.to_vec(),
            theta: theta.to_vec(),
            sigma,
            eta,
            iter,
            primal_res,
            dual_res,
            converged,
            polished: false,
        };
        if primal_res <= eps_pri && dual_res <= eps_dual {
            return Ok(Check::Done(snapshot(true)));
        }
        if opts.polish {
            let current = (
                beta.iter().map(|&b| b != 0.0).collect::<Vec<_>>(),
                alpha.iter().map(|&a| a == 0.0).collect::<Vec<_>>(),
            );
            if current != monitor.support {
                monitor.polish_wait = 0;
                monitor.polish_backoff = 1;
            } else if monitor.polish_wait > 0 {
                monitor.polish_wait -= 1;
            } else {
                if let Some(cand) = self.polish(lam, &snapshot(false)) {
                    if self.kkt_residual(lam, &cand) <= eps_pri.min(eps_dual) {
                        return Ok(Check::Done(SolverState {
                            converged: true,
                            ..cand
                        }));
                    }
                }
                monitor.polish_wait = monitor.polish_backoff;
                monitor.polish_backoff = (2 * monitor.polish_backoff).min(MAX_POLISH_BACKOFF);
            }
            monitor.support = current;
        }
        Ok(Check::Continue)
    }

    /// `X X^T`, computed on first use.
    fn gram(&self) -> &DMatrix<f64> {
        self.gram.get_or_init(|| self.x * self.x.transpose())
    }

    /// Penalty on `beta = gamma`: `sigma * n`, the squared norm of a
    /// unit-variance column. Scaling by actual column norms is much slower on
    /// designs whose columns have large means.
    fn rho_for(&self, sigma: f64) -> f64 {
        sigma * self.y.len().max(1) as f64
    }

    /// Active-set refinement. Returns a polished state only when its KKT
    /// residual improves on the input's.
    pub fn polish(&self, lam: f64, state: &SolverState) -> Option<SolverState> {
        let n = self.y.len();
        let active: Vec<usize> = (0..state.beta.len())
            .filter(|&j| state.beta[j] != 0.0)
            .collect();
        let exact_zeros: Vec<usize> = (0..n).filter(|&i| state.alpha[i] == 0.0).collect();
        // a vertex solution interpolates exactly as many samples as it has active features
        let mut candidates = vec![(active.clone(), exact_zeros.clone())];
        if !active.is_empty()
            && exact_zeros.len() > active.len()
            && subsets_at_most(exact_zeros.len(), active.len(), MAX_POLISH_SUBSETS)
        {
            candidates.extend(
                exact_zeros
                    .iter()
                    .copied()
                    .combinations(active.len())
                    .map(|zeros| (active.clone(), zeros)),
            );
        } else if !active.is_empty() && active.len() <= n && exact_zeros.len() != active.len() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| state.alpha[a].abs().total_cmp(&state.alpha[b].abs()));
            let mut smallest = order[..active.len()].to_vec();
            smallest.sort_unstable();
            candidates.push((active.clone(), smallest));
        }
        let surplus = active.len().saturating_sub(exact_zeros.len());
        if (1..=MAX_POLISH_DROPS).contains(&surplus) && !exact_zeros.is_empty() {
            // fewer zero residuals than active features: drop small coefficients
            let mut by_size = active.clone();
            by_size.sort_by(|&a, &b| state.beta[a].abs().total_cmp(&state.beta[b].abs()));
            by_size.truncate(MAX_POLISH_DROP_POOL);
            for dropped in by_size.into_iter().combinations(surplus) {
                let kept = active
                    .iter()
                    .copied()
                    .filter(|j| !dropped.contains(j))
                    .collect();
                candidates.push((kept, exact_zeros.clone()));
            }
        }

        let base = self.kkt_residual(lam, state);
        let mut scored: Vec<(f64, SolverState)> = candidates
            .iter()
            .filter_map(|(active, zeros)| self.polish_with(lam, state, active, zeros))
            .map(|cand| (self.kkt_lower_bound(lam, &cand), cand))
            .filter(|(bound, _)| bound.is_finite())
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut best: Option<(f64, SolverState)> = None;
        for (bound, cand) in scored {
            let target = best.as_ref().map_or(base, |(b, _)| *b);
            if bound >= target {
                break;
            }
            let res = self.kkt_residual(lam, &cand);
            if res < target {
                best = Some((res, cand));
            }
        }
        best.map(|(_, s)| s)
    }

    fn polish_with(
        &self,
        lam: f64,
        state: &SolverState,
        active: &[usize],
        zeros: &[usize],
    ) -> Option<SolverState> {
        let n = self.y.len();
        let t = self.tau.value();
        let x = self.x;
        let mut beta = vec![0.0; state.beta.len()];
        active.iter().for_each(|&j| beta[j] = state.beta[j]);

        if !active.is_empty() && !zeros.is_empty() {
            // interpolate the zero-residual samples with the active features
            let m = DMatrix::from_fn(zeros.len(), active.len(), |r, c| x[(zeros[r], active[c])]);
            let rhs = DVector::from_iterator(
                zeros.len(),
                zeros.iter().map(|&i| {
                    let fit: f64 = active.iter().map(|&j| x[(i, j)] * beta[j]).sum();
                    self.y[i] - fit
                }),
            );
            let delta = lstsq_min_norm(m, rhs)?;
            for (k, &j) in active.iter().enumerate() {
                beta[j] += delta[k];
            }
        }

        let mut fit = vec![0.0; n];
        gemv_sparse(x, &beta, &mut fit);
        let mut in_zeros = vec![false; n];
        zeros.iter().for_each(|&i| in_zeros[i] = true);
        let mut alpha = vec![0.0; n];
        let mut theta = vec![0.0; n];
        let mut free = Vec::new();
        for i in 0..n {
            if in_zeros[i] {
                alpha[i] = 0.0;
                theta[i] = state.theta[i].clamp(t - 1.0, t);
                free.push(i);
            } else {
                alpha[i] = self.y[i] - fit[i];
                if alpha[i] > 0.0 {
                    theta[i] = t;
                } else if alpha[i] < 0.0 {
                    theta[i] = t - 1.0;
                } else {
                    theta[i] = state.theta[i].clamp(t - 1.0, t);
                    free.push(i);
                }
            }
        }

        let signed: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        if !signed.is_empty() && !free.is_empty() {
            // X_A^T theta = lam * w_A * sign(beta_A), solved in the free coordinates
            let m = DMatrix::from_fn(signed.len(), free.len(), |r, c| x[(free[c], signed[r])]);
            let rhs = DVector::from_iterator(
                signed.len(),
                signed.iter().map(|&j| {
                    let target = lam * self.weight(j) * beta[j].signum();
                    target - dot(column(x, j), &theta)
                }),
            );
            let delta = lstsq_min_norm(m, rhs)?;
            for (k, &i) in free.iter().enumerate() {
                theta[i] += delta[k];
            }
        }

        Some(SolverState {
            beta,
            alpha,
            theta,
            polished: true,
            ..state.clone()
        })
    }

    /// Largest violation of the optimality system:
    /// `X^T theta ∈ lam * w ∘ ∂||beta||_1`, `y = X beta + alpha`,
    /// `theta_i ∈ ∂rho_tau(alpha_i)`.
    pub fn kkt_residual(&self, lam: f64, state: &SolverState) -> f64 {
        let mut xt = vec![0.0; self.x.ncols()];
        gemv_t(self.x, &state.theta, &mut xt);
        let stationarity = (0..xt.len())
            .map(|j| {
                abs_subdiff(state.beta[j])
                    .scale(lam * self.weight(j))
                    .distance(xt[j])
            })
            .fold(0.0_f64, f64::max);
        stationarity.max(self.sample_residual(state))
    }

    /// The KKT residual restricted to the samples and the nonzero coefficients,
    /// without a full pass over `X`.
    fn kkt_lower_bound(&self, lam: f64, state: &SolverState) -> f64 {
        let stationarity = (0..state.beta.len())
            .filter(|&j| state.beta[j] != 0.0)
            .map(|j| {
                let xt = dot(column(self.x, j), &state.theta);
                abs_subdiff(state.beta[j])
                    .scale(lam * self.weight(j))
                    .distance(xt)
            })
            .fold(0.0_f64, f64::max);
        stationarity.max(self.sample_residual(state))
    }

    /// Feasibility of `y = X beta + alpha` and of `theta_i ∈ ∂rho_tau(alpha_i)`.
    fn sample_residual(&self, state: &SolverState) -> f64 {
        let n = self.y.len();
        let x = self.x;
        let mut fit = vec![0.0; n];
        gemv_sparse(x, &state.beta, &mut fit);
        let feasibility = (0..n)
            .map(|i| (self.y[i] - fit[i] - state.alpha[i]).abs())
            .fold(0.0_f64, f64::max);
        let loss = (0..n)
            .map(|i| pinball_subdiff(state.alpha[i], self.tau).distance(state.theta[i]))
            .fold(0.0_f64, f64::max);
        feasibility.max(loss)
    }

    pub fn primal_objective(&self, lam: f64, beta: &[f64]) -> f64 {
        let mut fit = vec![0.0; self.y.len()];
        gemv_sparse(self.x, beta, &mut fit);
        let resid: Vec<f64> = self.y.iter().zip(&fit).map(|(a, b)| a - b).collect();
        let penalty: f64 = beta
            .iter()
            .enumerate()
            .map(|(j, b)| self.weight(j) * b.abs())
            .sum();
        pinball_sum(&resid, self.tau) + lam * penalty
    }

    /// Primal objective at `beta` minus dual objective at `theta`, after
    /// projecting `theta` onto the box and rescaling it into
    /// `|X_j^T theta| <= lam * w_j`.
    pub fn duality_gap(&self, lam: f64, state: &SolverState) -> f64 {
        let t = self.tau.value();
        let mut theta: Vec<f64> = state.theta.iter().map(|v| v.clamp(t - 1.0, t)).collect();
        let mut xt = vec![0.0; self.x.ncols()];
        gemv_t(self.x, &theta, &mut xt);
        let excess = xt
            .iter()
            .enumerate()
            .map(|(j, v)| v.abs() / (lam * self.weight(j)))
            .fold(0.0_f64, f64::max);
        if excess > 1.0 {
            theta.iter_mut().for_each(|v| *v /= excess);
        }
        self.primal_objective(lam, &state.beta) - dot(&theta, self.y)
    }

    /// Repeats warm-started solves with shrinking tolerance until the KKT
    /// residual reaches `target` or the iteration budget of
    /// [`SolveOptions::tight`] is spent.
    pub fn solve_tight(
        &self,
        lam: f64,
        target: f64,
        warm: Option<&SolverState>,
    ) -> Result<SolverState> {
        let budget = SolveOptions::tight().max_iter;
        let mut opts = SolveOptions {
            tol_abs: 1e-6,
            tol_rel: 1e-6,
            max_iter: budget,
            polish: true,
            ..SolveOptions::default()
        };
        let mut state = self.solve(lam, &opts, warm)?;
        let mut spent = state.iter;
        while self.kkt_residual(lam, &state) > target && spent < budget {
            opts.tol_abs = (opts.tol_abs * 0.1).max(1e-14);
            opts.tol_rel = (opts.tol_rel * 0.1).max(1e-14);
            opts.max_iter = budget - spent;
            state = self.solve(lam, &opts, Some(&state))?;
            spent += state.iter;
        }
        Ok(state)
    }
}

/// Minimum-norm least-squares solution. LU for square systems and Cholesky on
/// the normal equations otherwise; SVD when those fail.
fn lstsq_min_norm(m: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let fast = if m.is_square() {
        m.clone().lu().solve(&rhs)
    } else if m.nrows() > m.ncols() {
        let mt = m.transpose();
        (&mt * &m).cholesky().map(|c| c.solve(&(&mt * &rhs)))
    } else {
        let mt = m.transpose();
        (&m * &mt).cholesky().map(|c| &mt * c.solve(&rhs))
    };
    if let Some(sol) = fast {
        let scale = rhs.norm() + m.norm() * sol.norm();
        let normal_res = m.tr_mul(&(&m * &sol - &rhs)).norm();
        if sol.iter().all(|v| v.is_finite()) && normal_res <= 1e-10 * m.norm() * scale.max(1.0) {
            return Some(sol);
        }
    }
    let svd = m.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let eps = smax * 1e-12;
    let sol = svd.solve(&rhs, eps).ok()?;
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

fn factor(gram: &DMatrix<f64>, shift: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut k = gram.clone();
    for i in 0..k.nrows() {
        k[(i, i)] += shift;
    }
    Cholesky::new(k).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "ridge system not positive definite (shift {shift})"
        ))
    })
}

enum Check {
    Continue,
    Done(SolverState),
}

/// Residuals and support snapshot carried between checks.
struct Monitor {
    xt: Vec<f64>,
    support: (Vec<bool>, Vec<bool>),
    /// Checks to skip before the next polish attempt.
    polish_wait: usize,
    /// Skip count after the next failed attempt; doubles up to `MAX_POLISH_BACKOFF`.
    polish_backoff: usize,
    primal_res: f64,
    dual_res: f64,
}

impl Monitor {
    fn new(p: usize) -> Self {
        Self {
            xt: vec![0.0; p],
            support: (Vec::new(), Vec::new()),
            polish_wait: 0,
            polish_backoff: 1,
            primal_res: f64::INFINITY,
            dual_res: f64::INFINITY,
        }
    }

    fn rescale(&self, opts: &SolveOptions, iter: usize) -> Option<f64> {
        if !opts.adaptive_sigma || !iter.is_multiple_of(ADAPT_EVERY) {
            return None;
        }
        if self.primal_res > 10.0 * self.dual_res {
            Some(2.0)
        } else if self.dual_res > 10.0 * self.primal_res {
            Some(0.5)
        } else {
            None
        }
    }

    fn finish(
        self,
        beta: Vec<f64>,
        alpha: Vec<f64>,
        theta: Vec<f64>,
        sigma: f64,
        eta: f64,
        iter: usize,
    ) -> SolverState {
        SolverState {
            beta,
            alpha,
            theta,
            sigma,
            eta,
            iter,
            primal_res: self.primal_res,
            dual_res: self.dual_res,
            converged: false,
            polished: false,
        }
    }
}

pub fn admm_solve(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    lam: f64,
    opts: &SolveOptions,
    warm: Option<&SolverState>,
) -> Result<SolverState> {
    QuantileLasso::new(x, y, tau)?.solve(lam, opts, warm)
}

pub fn kkt_residual(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    lam: f64,
    state: &SolverState,
) -> Result<f64> {
    Ok(QuantileLasso::new(x, y, tau)?.kkt_residual(lam, state))
}

pub fn duality_gap(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    lam: f64,
    state: &SolverState,
) -> Result<f64> {
    Ok(QuantileLasso::new(x, y, tau)?.duality_gap(lam, state))
}

/// Column subset kept after screening, with what the solver precomputes on it.
struct Reduced {
    keep: Vec<usize>,
    x: DMatrix<f64>,
    weights: Option<Vec<f64>>,
    spectral: f64,
    gram: DMatrix<f64>,
}

impl Reduced {
    fn new(
        x: &DMatrix<f64>,
        weights: Option<&[f64]>,
        keep: Vec<usize>,
        variant: AdmmVariant,
    ) -> Self {
        let xr = select_columns(x, &keep);
        let spectral = match variant {
            AdmmVariant::Linearized => spectral_norm_sq(&xr, POWER_ITERATIONS),
            AdmmVariant::Split => 0.0,
        };
        Self {
            weights: weights.map(|w| keep.iter().map(|&j| w[j]).collect()),
            gram: &xr * xr.transpose(),
            spectral,
            x: xr,
            keep,
        }
    }
}

/// Per-penalty results along a regularization path, largest penalty first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub lambda_max: f64,
    pub ratios: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    /// 0-based eliminated features per penalty; empty when screening is off.
    pub eliminated: Vec<Vec<usize>>,
    /// Wall-clock seconds per penalty, screening included.
    pub solve_times: Vec<f64>,
    pub kkt_residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl PathResult {
    pub fn total_time(&self) -> f64 {
        self.solve_times.iter().sum()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Sorts ratios largest first; rejects values outside `(0, 1]` and duplicates.
pub fn normalize_grid(ratios: &[f64]) -> Result<Vec<f64>> {
    if let Some(&r) = ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "grid ratio {r} outside (0, 1]"
        )));
    }
    let mut sorted = ratios.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(
            "grid ratios must be distinct".into(),
        ));
    }
    Ok(sorted)
}

/// `size` equally spaced ratios from `min_ratio` to 1.
pub fn ratio_grid(size: usize, min_ratio: f64) -> Vec<f64> {
    match size {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..size)
            .map(|k| match k {
                0 => min_ratio,
                k if k == size - 1 => 1.0,
                k => min_ratio + (1.0 - min_ratio) * k as f64 / (size - 1) as f64,
            })
            .collect(),
    }
}

/// Solves along `ratio * lambda_max` from the top of the grid down, warm
/// starting each penalty from the previous one. With `screening`, eliminated
/// features are dropped before each solve and re-embedded as exact zeros.
pub fn solve_path(
    x: &DMatrix<f64>,
    y: &[f64],
    tau: QuantileLevel,
    grid: &[f64],
    screening: bool,
    weights: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<PathResult> {
    let ratios = normalize_grid(grid)?;
    opts.validate()?;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if let Some(w) = weights {
        validate_weights(w, p)?;
    }

    let mut result = PathResult {
        lambda_max: 0.0,
        ratios: ratios.clone(),
        lambdas: Vec::with_capacity(ratios.len()),
        betas: Vec::with_capacity(ratios.len()),
        eliminated: Vec::with_capacity(ratios.len()),
        solve_times: Vec::with_capacity(ratios.len()),
        kkt_residuals: Vec::with_capacity(ratios.len()),
        iterations: Vec::with_capacity(ratios.len()),
        converged: Vec::with_capacity(ratios.len()),
    };

    let setup = Instant::now();
    let geometry = ScreeningGeometry::new(x, y, tau)?;
    let lam_max = match weights {
        Some(w) => geometry.lambda_max_weighted(w)?,
        None => geometry.lambda_max(),
    };
    if lam_max <= 0.0 {
        return Err(Error::DegenerateLambdaMax);
    }
    result.lambda_max = lam_max;
    let full = if screening {
        None
    } else {
        Some(QuantileLasso::new(x, y, tau)?.with_weights(weights)?)
    };
    let mut setup_time = setup.elapsed().as_secs_f64();

    let mut prev = SolverState::cold(y, p);
    let mut reduced: Option<Reduced> = None;
    let diagnostics = QuantileLasso {
        x,
        y,
        tau,
        weights,
        spectral: 0.0,
        gram: OnceCell::new(),
        zero_above: OnceCell::new(),
    };

    for &ratio in &ratios {
        let lam = ratio * lam_max;
        let start = Instant::now();
        let (state, eliminated) = match &full {
            Some(problem) => (problem.solve(lam, opts, Some(&prev))?, Vec::new()),
            None => {
                let report = geometry.screen(lam, weights, &ScreenOptions::default())?;
                let mut dropped = vec![false; p];
                report.eliminated.iter().for_each(|&j| dropped[j] = true);
                let keep: Vec<usize> = (0..p).filter(|&j| !dropped[j]).collect();
                if reduced.as_ref().is_none_or(|r| r.keep != keep) {
                    reduced = Some(Reduced::new(x, weights, keep, opts.variant));
                }
                let r = reduced.as_ref().expect("reduced problem set above");
                let keep = &r.keep;
                let problem = QuantileLasso {
                    x: &r.x,
                    y,
                    tau,
                    weights: r.weights.as_deref(),
                    spectral: r.spectral,
                    gram: OnceCell::from(r.gram.clone()),
                    zero_above: OnceCell::new(),
                };
                let warm = SolverState {
                    beta: keep.iter().map(|&j| prev.beta[j]).collect(),
                    ..prev.clone()
                };
                let s = problem.solve(lam, opts, Some(&warm))?;
                let mut beta = vec![0.0; p];
                for (k, &j) in keep.iter().enumerate() {
                    beta[j] = s.beta[k];
                }
                (SolverState { beta, ..s }, report.eliminated)
            }
        };
        let elapsed = start.elapsed().as_secs_f64() + setup_time;
        setup_time = 0.0;

        result
            .kkt_residuals
            .push(diagnostics.kkt_residual(lam, &state));
        result.lambdas.push(lam);
        result.betas.push(state.beta.clone());
        result.eliminated.push(eliminated);
        result.solve_times.push(elapsed);
        result.iterations.push(state.iter);
        result.converged.push(state.converged);
        prev = state;
    }
    Ok(result)
}

/// Whether `k`-subsets of `n` items number at most `limit`.
fn subsets_at_most(n: usize, k: usize, limit: usize) -> bool {
    let k = k.min(n - k);
    let mut count: usize = 1;
    for i in 0..k {
        count = count * (n - i) / (i + 1);
        if count > limit {
            return false;
        }
    }
    true
}
