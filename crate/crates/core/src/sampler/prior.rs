use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Prior settings for the sum-of-trees model on the internally rescaled
/// response (range mapped to `[-0.5, 0.5]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PriorParams {
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub kfac: f64,
    pub nu: f64,
    pub lambda: f64,
    pub min_leaf: u64,
}

impl PriorParams {
    /// Leaf-mean prior standard deviation.
    pub fn tau(&self) -> f64 {
        0.5 / (self.kfac * (self.m as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m < 1 {
            return Err("m".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err("alpha".into());
        }
        if !(self.beta >= 0.0) {
            return Err("beta".into());
        }
        if !(self.kfac > 0.0) {
            return Err("kfac".into());
        }
        if !(self.nu > 0.0) {
            return Err("nu".into());
        }
        if !(self.lambda > 0.0) {
            return Err("lambda".into());
        }
        Ok(())
    }
}

/// Probability that a node at `depth` is internal.
pub fn split_prior_prob(depth: usize, alpha: f64, beta: f64) -> f64 {
    alpha * (1.0 + depth as f64).powf(-beta)
}

/// Scale `lambda` such that `P(sigma < sigma_hat) = quantile` under
/// `sigma^2 ~ nu * lambda / chi^2_nu`.
pub fn lambda_for_quantile(sigma_hat: f64, nu: f64, quantile: f64) -> f64 {
    let chi = ChiSquared::new(nu).expect("nu > 0");
    sigma_hat * sigma_hat * chi.inverse_cdf(1.0 - quantile) / nu
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_probabilities() {
        assert_eq!(split_prior_prob(0, 0.95, 2.0), 0.95);
        assert!((split_prior_prob(1, 0.95, 2.0) - 0.2375).abs() < 1e-15);
        assert!((split_prior_prob(3, 0.95, 2.0) - 0.059375).abs() < 1e-15);
    }

    #[test]
    fn lambda_hits_quantile() {
        let (sigma_hat, nu, q) = (0.2, 3.0, 0.9);
        let lambda = lambda_for_quantile(sigma_hat, nu, q);
        // P(sigma < s) = P(chi2 > nu*lambda/s^2)
        let chi = ChiSquared::new(nu).unwrap();
        let p = 1.0 - chi.cdf(nu * lambda / (sigma_hat * sigma_hat));
        assert!((p - q).abs() < 1e-9);
    }

    #[test]
    fn tau_defaults() {
        let p = PriorParams {
            m: 200,
            alpha: 0.95,
            beta: 2.0,
            kfac: 2.0,
            nu: 3.0,
            lambda: 0.1,
            min_leaf: 5,
        };
        assert!((p.tau() - 0.5 / (2.0 * 200f64.sqrt())).abs() < 1e-15);
        assert!(p.validate().is_ok());
        let bad = PriorParams { kfac: 0.0, ..p };
        assert_eq!(bad.validate(), Err("kfac".to_string()));
    }
}
