//! Pairwise preference losses on noised sample pairs: the signed
//! squared-error difference (delta terms), DPO-style and NPO-style
//! pairwise-logistic objectives, the pure self-play limit, the plain
//! denoising loss, and the squared-distance variant. Every loss returns its
//! analytic parameter gradient alongside the value.

use crate::denoiser::DenoiserParams;
use crate::Error;

/// Coefficients of the pairwise objectives.
///
/// `gamma = tau / eta` interpolates between the DPO-style objective
/// (gamma = 1, reference baseline only) and pure self-play (gamma = 0,
/// previous-policy baseline only). `effective_weight` stands in for the
/// composite timestep weight multiplying the logit.
#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub beta: f64,
    pub tau: f64,
    pub eta: f64,
    pub effective_weight: f64,
}

impl LossConfig {
    pub fn new(beta: f64, tau: f64, eta: f64, effective_weight: f64) -> Result<Self, Error> {
        if !(beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {beta}")));
        }
        if !(tau >= 0.0 && eta > 0.0 && tau <= eta) {
            return Err(Error::Config(format!(
                "need 0 <= tau <= eta and eta > 0, got tau={tau}, eta={eta}"
            )));
        }
        if !(effective_weight > 0.0) {
            return Err(Error::Config(format!(
                "effective_weight must be > 0, got {effective_weight}"
            )));
        }
        Ok(LossConfig { beta, tau, eta, effective_weight })
    }

    pub fn gamma(&self) -> f64 {
        self.tau / self.eta
    }
}

/// One preference pair after forward noising: shared prompt and timestep,
/// independent noises.
#[derive(Clone, Debug)]
pub struct PairItem {
    pub prompt: usize,
    pub t: usize,
    pub eps_pos: Vec<f64>,
    pub eps_neg: Vec<f64>,
    pub xt_pos: Vec<f64>,
    pub xt_neg: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct NoisedPairBatch {
    pub items: Vec<PairItem>,
}

/// One noised single for the denoising loss.
#[derive(Clone, Debug)]
pub struct SingleItem {
    pub prompt: usize,
    pub t: usize,
    pub eps: Vec<f64>,
    pub xt: Vec<f64>,
}

/// Numerically stable log sigmoid: for z < 0, z - ln(1 + e^z).
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sq_err(eps: &[f64], pred: &[f64]) -> f64 {
    eps.iter().zip(pred).map(|(e, p)| (e - p) * (e - p)).sum()
}

/// Signed squared-error difference
/// `-(||eps+ - pred+||^2 - ||eps- - pred-||^2)`; large when the model fits
/// the preferred noise better.
pub fn delta(params: &DenoiserParams, item: &PairItem) -> Result<f64, Error> {
    let pred_pos = params.forward(&item.xt_pos, item.t, item.prompt)?;
    let pred_neg = params.forward(&item.xt_neg, item.t, item.prompt)?;
    Ok(-(sq_err(&item.eps_pos, &pred_pos) - sq_err(&item.eps_neg, &pred_neg)))
}

/// Accumulate `coef * d(delta_theta)/d(theta)` for one item.
fn accumulate_delta_grad(
    theta: &DenoiserParams,
    item: &PairItem,
    coef: f64,
    grad: &mut [f64],
) -> Result<(), Error> {
    let pred_pos = theta.forward(&item.xt_pos, item.t, item.prompt)?;
    let pred_neg = theta.forward(&item.xt_neg, item.t, item.prompt)?;
    let up_pos: Vec<f64> = item
        .eps_pos
        .iter()
        .zip(&pred_pos)
        .map(|(e, p)| coef * 2.0 * (e - p))
        .collect();
    let up_neg: Vec<f64> = item
        .eps_neg
        .iter()
        .zip(&pred_neg)
        .map(|(e, p)| -coef * 2.0 * (e - p))
        .collect();
    theta.backward_into(&item.xt_pos, item.t, item.prompt, &up_pos, grad)?;
    theta.backward_into(&item.xt_neg, item.t, item.prompt, &up_neg, grad)?;
    Ok(())
}

/// Per-item logit of the NPO objective:
/// `w * (delta_theta - gamma * delta_ref - (1 - gamma) * delta_prev)`.
fn npo_logit(
    theta: &DenoiserParams,
    reference: &DenoiserParams,
    prev: &DenoiserParams,
    item: &PairItem,
    cfg: &LossConfig,
) -> Result<f64, Error> {
    let g = cfg.gamma();
    let d_theta = delta(theta, item)?;
    // Skip baseline passes whose coefficient is exactly zero.
    let d_ref = if g != 0.0 { delta(reference, item)? } else { 0.0 };
    let d_prev = if g != 1.0 { delta(prev, item)? } else { 0.0 };
    Ok(cfg.effective_weight * (d_theta - g * d_ref - (1.0 - g) * d_prev))
}

fn check_finite(v: f64, what: &str, idx: usize) -> Result<f64, Error> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} at batch index {idx}")))
    }
}

/// Pairwise-logistic NPO loss with its gradient w.r.t. `theta` only.
pub fn diff_npo_loss(
    theta: &DenoiserParams,
    reference: &DenoiserParams,
    prev: &DenoiserParams,
    batch: &NoisedPairBatch,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), Error> {
    let n = batch.items.len();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.theta.len()];
    let inv_n = 1.0 / n as f64;
    for (i, item) in batch.items.iter().enumerate() {
        let z = check_finite(npo_logit(theta, reference, prev, item, cfg)?, "logit", i)?;
        loss += -log_sigmoid(z) * inv_n;
        // d/dz of -log sigmoid(z) is -sigmoid(-z).
        let coef = -sigmoid(-z) * cfg.effective_weight * inv_n;
        accumulate_delta_grad(theta, item, coef, &mut grad)?;
    }
    check_finite(loss, "loss", n)?;
    Ok((loss, grad))
}

/// Diffusion-DPO loss: the NPO objective with the reference as the only
/// baseline (gamma forced to 1); `prev` is not consulted.
pub fn diff_dpo_loss(
    theta: &DenoiserParams,
    reference: &DenoiserParams,
    batch: &NoisedPairBatch,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), Error> {
    let dpo_cfg = LossConfig { tau: cfg.eta, ..*cfg };
    diff_npo_loss(theta, reference, reference, batch, &dpo_cfg)
}

/// Mean batch logit of the NPO objective, for diagnostics.
pub fn mean_logit(
    theta: &DenoiserParams,
    reference: &DenoiserParams,
    prev: &DenoiserParams,
    batch: &NoisedPairBatch,
    cfg: &LossConfig,
) -> Result<f64, Error> {
    let mut s = 0.0;
    for item in &batch.items {
        s += npo_logit(theta, reference, prev, item, cfg)?;
    }
    Ok(s / batch.items.len() as f64)
}

/// Unweighted denoising matching loss: mean over items of
/// `||eps - eps_theta(x_t, t, c)||^2`.
pub fn denoising_loss(
    theta: &DenoiserParams,
    batch: &[SingleItem],
) -> Result<(f64, Vec<f64>), Error> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.theta.len()];
    for (i, item) in batch.iter().enumerate() {
        let pred = theta.forward(&item.xt, item.t, item.prompt)?;
        loss += check_finite(sq_err(&item.eps, &pred), "squared error", i)? * inv_n;
        let upstream: Vec<f64> = item
            .eps
            .iter()
            .zip(&pred)
            .map(|(e, p)| -2.0 * (e - p) * inv_n)
            .collect();
        theta.backward_into(&item.xt, item.t, item.prompt, &upstream, &mut grad)?;
    }
    Ok((loss, grad))
}

/// Squared-distance variant: mean of `(logit - target_margin)^2`.
pub fn inpo_square_loss(
    theta: &DenoiserParams,
    reference: &DenoiserParams,
    prev: &DenoiserParams,
    batch: &NoisedPairBatch,
    cfg: &LossConfig,
    target_margin: f64,
) -> Result<(f64, Vec<f64>), Error> {
    if batch.items.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    if !target_margin.is_finite() {
        return Err(Error::Config("target_margin must be finite".into()));
    }
    let n = batch.items.len();
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; theta.theta.len()];
    for (i, item) in batch.items.iter().enumerate() {
        let z = check_finite(npo_logit(theta, reference, prev, item, cfg)?, "logit", i)?;
        let resid = z - target_margin;
        loss += resid * resid * inv_n;
        let coef = 2.0 * resid * cfg.effective_weight * inv_n;
        accumulate_delta_grad(theta, item, coef, &mut grad)?;
    }
    Ok((loss, grad))
}
