//! Seeded generator for the simulation design: Gaussian features with a
//! structured mean, identity or AR(1) covariance, a fixed sparse coefficient
//! vector and Student-t noise.
//!
//! Randomness comes from [`ChaCha20Rng`], a counter-based stream cipher
//! generator; the design matrix uses stream 0 and the noise stream 1 of the
//! same seed, so `(spec, seed)` reproduces every output bit for bit.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier recorded in reports.
pub const RNG_ID: &str = "ChaCha20Rng (rand_chacha 0.9), design stream 0, noise stream 1";

/// Leading entries of the true coefficient vector; the rest are zero.
pub const TRUE_BETA_PREFIX: [f64; 17] = [
    2.0, 0.0, 1.5, 0.0, 0.0, 0.8, 0.0, 0.0, 1.0, 0.0, 1.75, 0.0, 0.0, 0.75, 0.0, 0.0, 0.3,
];

const AR1_COEF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    Identity,
    /// `Sigma_ij = 0.5^|i - j|`.
    Ar1Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    pub covariance: Covariance,
    pub seed: u64,
    /// Degrees of freedom of the Student-t noise.
    pub df: u32,
}

impl SimSpec {
    pub fn new(n: usize, p: usize, covariance: Covariance, seed: u64) -> Self {
        Self {
            n,
            p,
            covariance,
            seed,
            df: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.p < TRUE_BETA_PREFIX.len() {
            return Err(Error::InvalidArgument(format!(
                "p must be at least {} to hold the true coefficients, got {}",
                TRUE_BETA_PREFIX.len(),
                self.p
            )));
        }
        if self.df < 1 {
            return Err(Error::InvalidArgument("df must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn true_beta(p: usize) -> Result<Vec<f64>> {
    if p < TRUE_BETA_PREFIX.len() {
        return Err(Error::InvalidArgument(format!(
            "p must be at least {}, got {p}",
            TRUE_BETA_PREFIX.len()
        )));
    }
    let mut beta = vec![0.0; p];
    beta[..TRUE_BETA_PREFIX.len()].copy_from_slice(&TRUE_BETA_PREFIX);
    Ok(beta)
}

/// Mean pattern, written with 1-based inclusive ranges:
/// `mu(3:7) = 10`, `mu(70:90) = 5`, `mu(floor(p/2) : floor(2p/3)) = -2`,
/// applied in that order and clipped to `p`.
pub fn mean_vector(p: usize) -> Vec<f64> {
    let mut mu = vec![0.0; p];
    let mut fill = |from: usize, to: usize, v: f64| {
        for k in from..=to.min(p) {
            if k >= 1 {
                mu[k - 1] = v;
            }
        }
    };
    fill(3, 7, 10.0);
    fill(70, 90, 5.0);
    fill(p / 2, 2 * p / 3, -2.0);
    mu
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Rows are drawn one after another; within a row an AR(1) design follows
/// `z_1 = e_1`, `z_j = 0.5 z_{j-1} + sqrt(0.75) e_j`.
pub fn gen_design(spec: &SimSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mu = mean_vector(p);
    let mut rng = stream(spec.seed, 0);
    let innovation = (1.0 - AR1_COEF * AR1_COEF).sqrt();
    let mut x = DMatrix::zeros(n, p);
    let mut row = vec![0.0; p];
    for i in 0..n {
        for j in 0..p {
            let e: f64 = rng.sample(StandardNormal);
            row[j] = match spec.covariance {
                Covariance::Identity => e,
                Covariance::Ar1Half if j == 0 => e,
                Covariance::Ar1Half => AR1_COEF * row[j - 1] + innovation * e,
            };
        }
        for j in 0..p {
            x[(i, j)] = row[j] + mu[j];
        }
    }
    Ok(x)
}

/// Student-t draws as `N(0,1) / sqrt(chi2(df) / df)`.
pub fn student_t_noise(len: usize, df: u32, seed: u64) -> Result<Vec<f64>> {
    if df < 1 {
        return Err(Error::InvalidArgument("df must be at least 1".into()));
    }
    let chi = ChiSquared::new(df as f64)
        .map_err(|e| Error::InvalidArgument(format!("chi-square({df}): {e}")))?;
    let mut rng = stream(seed, 1);
    Ok((0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let c: f64 = chi.sample(&mut rng);
            z / (c / df as f64).sqrt()
        })
        .collect())
}

/// `y = X beta* + eps` with Student-t noise.
pub fn gen_response(x: &DMatrix<f64>, beta_star: &[f64], df: u32, seed: u64) -> Result<Vec<f64>> {
    if beta_star.len() != x.ncols() {
        return Err(Error::LengthMismatch {
            expected: x.ncols(),
            found: beta_star.len(),
        });
    }
    let noise = student_t_noise(x.nrows(), df, seed)?;
    let mut y = vec![0.0; x.nrows()];
    crate::linalg::gemv_sparse(x, beta_star, &mut y);
    y.iter_mut().zip(noise).for_each(|(v, e)| *v += e);
    Ok(y)
}

/// Design and response together, both from `spec.seed`.
pub fn simulate(spec: &SimSpec) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let x = gen_design(spec)?;
    let y = gen_response(&x, &true_beta(spec.p)?, spec.df, spec.seed)?;
    Ok((x, y))
}
