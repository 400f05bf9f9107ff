//! Discrete-time diffusion forward process: coefficient tables, forward
//! noising, and the Gaussian posterior used in the per-step reduction.

use crate::Error;

/// Coefficient tables for a `T`-step forward process.
///
/// Index convention: `betas[t-1]` holds the timestep-`t` value, t in `1..=T`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub t_max: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub bar_alphas: Vec<f64>,
    pub sigma2s: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta ramp from `beta_start` to `beta_end` inclusive.
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self, Error> {
        if t_max < 2 {
            return Err(Error::Schedule(format!("T must be >= 2, got {t_max}")));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..t_max)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64)
            .collect();
        Ok(Self::from_betas(betas))
    }

    fn from_betas(betas: Vec<f64>) -> Self {
        let t_max = betas.len();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut bar_alphas = Vec::with_capacity(t_max);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            bar_alphas.push(acc);
        }
        // sigma_1^2 := beta_1 by convention; for t >= 2 the standard
        // posterior variance ((1 - abar_{t-1}) / (1 - abar_t)) * beta_t.
        let mut sigma2s = Vec::with_capacity(t_max);
        sigma2s.push(betas[0]);
        for t in 2..=t_max {
            sigma2s.push((1.0 - bar_alphas[t - 2]) / (1.0 - bar_alphas[t - 1]) * betas[t - 1]);
        }
        NoiseSchedule { t_max, betas, alphas, bar_alphas, sigma2s }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas up to `t`; `bar_alpha(0) == 1`.
    pub fn bar_alpha(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.bar_alphas[t - 1]
        }
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2s[t - 1]
    }

    fn check_t(&self, t: usize) -> Result<(), Error> {
        if t < 1 || t > self.t_max {
            return Err(Error::Schedule(format!(
                "timestep {t} out of range 1..={}",
                self.t_max
            )));
        }
        Ok(())
    }

    /// Forward marginal `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
    pub fn forward_marginal(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>, Error> {
        self.check_t(t)?;
        if x0.len() != eps.len() {
            return Err(Error::DimMismatch {
                expected: x0.len(),
                got: eps.len(),
            });
        }
        let ab = self.bar_alpha(t);
        let c0 = ab.sqrt();
        let ce = (1.0 - ab).sqrt();
        Ok(x0.iter().zip(eps).map(|(x, e)| c0 * x + ce * e).collect())
    }

    /// Coefficients of the forward posterior q(x_{t-1} | x_t, x_0):
    /// mean = coeff_x0 * x0 + coeff_xt * x_t, variance = sigma_t^2.
    /// Defined for t >= 2.
    pub fn posterior_mean_coeffs(&self, t: usize) -> Result<(f64, f64, f64), Error> {
        self.check_t(t)?;
        if t < 2 {
            return Err(Error::Schedule("posterior coefficients need t >= 2".into()));
        }
        let ab_prev = self.bar_alpha(t - 1);
        let ab = self.bar_alpha(t);
        let coeff_x0 = ab_prev.sqrt() * self.beta(t) / (1.0 - ab);
        let coeff_xt = self.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        Ok((coeff_x0, coeff_xt, self.sigma2(t)))
    }
}
