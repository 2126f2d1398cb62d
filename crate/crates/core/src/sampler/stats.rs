//! Sufficient statistics of partial residuals and the conjugate formulas that
//! consume them.

use std::ops::{Add, AddAssign};

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// Count, sum and sum of squares of a set of residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SuffStats {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl SuffStats {
    #[inline]
    pub fn push(&mut self, r: f64) {
        self.n += 1;
        self.sum += r;
        self.sumsq += r * r;
    }

    pub fn from_slice(values: &[f64]) -> Self {
        let mut s = Self::default();
        for &v in values {
            s.push(v);
        }
        s
    }
}

impl Add for SuffStats {
    type Output = SuffStats;
    fn add(self, rhs: Self) -> Self {
        SuffStats {
            n: self.n + rhs.n,
            sum: self.sum + rhs.sum,
            sumsq: self.sumsq + rhs.sumsq,
        }
    }
}

impl AddAssign for SuffStats {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

/// Left/right child counts and residual sums for a BIRTH or DEATH decision.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MoveStats {
    pub n_left: u64,
    pub n_right: u64,
    pub sum_left: f64,
    pub sum_right: f64,
}

impl MoveStats {
    pub fn merged_n(&self) -> u64 {
        self.n_left + self.n_right
    }

    pub fn merged_sum(&self) -> f64 {
        self.sum_left + self.sum_right
    }
}

impl Add for MoveStats {
    type Output = MoveStats;
    fn add(self, rhs: Self) -> Self {
        MoveStats {
            n_left: self.n_left + rhs.n_left,
            n_right: self.n_right + rhs.n_right,
            sum_left: self.sum_left + rhs.sum_left,
            sum_right: self.sum_right + rhs.sum_right,
        }
    }
}

/// Log ratio of a node's integrated likelihood (leaf mean ~ N(0, tau^2)
/// integrated out) to the likelihood at mean zero. Reads only `(n, sum)`.
pub fn log_marginal_likelihood(n: u64, sum: f64, sigma: f64, tau: f64) -> f64 {
    let s2 = sigma * sigma;
    let t2 = tau * tau;
    let denom = s2 + n as f64 * t2;
    0.5 * (s2 / denom).ln() + t2 * sum * sum / (2.0 * s2 * denom)
}

/// Posterior mean and variance of a leaf mean given its residual stats.
pub fn mu_posterior(n: u64, sum: f64, sigma: f64, tau: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let t2 = tau * tau;
    let denom = s2 + n as f64 * t2;
    (t2 * sum / denom, s2 * t2 / denom)
}

pub fn draw_mu<R: Rng + ?Sized>(n: u64, sum: f64, sigma: f64, tau: f64, rng: &mut R) -> f64 {
    let (mean, var) = mu_posterior(n, sum, sigma, tau);
    let z: f64 = StandardNormal.sample(rng);
    mean + var.sqrt() * z
}

/// sigma for a given chi-square variate; exposed so monotonicity in `rss`
/// can be checked with the variate held fixed.
pub fn sigma_from_chisq(rss: f64, nu: f64, lambda: f64, chisq: f64) -> f64 {
    ((nu * lambda + rss) / chisq).sqrt()
}

/// Draws sigma from its scaled-inverse-chi-square full conditional.
pub fn draw_sigma<R: Rng + ?Sized>(n_total: u64, rss: f64, nu: f64, lambda: f64, rng: &mut R) -> f64 {
    let dof = nu + n_total as f64;
    let chisq = ChiSquared::new(dof)
        .expect("positive degrees of freedom")
        .sample(rng);
    sigma_from_chisq(rss, nu, lambda, chisq)
}
