//! Synthetic conditional data: per-prompt 2-D Gaussian mixtures with a
//! shared isotropic standard deviation.

use crate::rng::StreamRng;
use crate::Error;

#[derive(Clone, Debug)]
pub struct PromptMixture {
    pub means: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct MixtureSpec {
    pub prompts: Vec<PromptMixture>,
    pub std: f64,
}

impl MixtureSpec {
    pub fn new(prompts: Vec<PromptMixture>, std: f64) -> Result<Self, Error> {
        if prompts.is_empty() {
            return Err(Error::Config("mixture needs at least one prompt".into()));
        }
        if std < 0.0 {
            return Err(Error::Config(format!("std must be >= 0, got {std}")));
        }
        for (c, p) in prompts.iter().enumerate() {
            if p.means.is_empty() || p.means.len() != p.weights.len() {
                return Err(Error::Config(format!(
                    "prompt {c}: means/weights length mismatch"
                )));
            }
            let dim = p.means[0].len();
            if p.means.iter().any(|m| m.len() != dim) {
                return Err(Error::Config(format!("prompt {c}: inconsistent mean dims")));
            }
            let sum: f64 = p.weights.iter().sum();
            if p.weights.iter().any(|w| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "prompt {c}: weights must be a simplex point"
                )));
            }
        }
        Ok(MixtureSpec { prompts, std })
    }

    pub fn n_prompts(&self) -> usize {
        self.prompts.len()
    }

    pub fn dim(&self) -> usize {
        self.prompts[0].means[0].len()
    }

    /// Draw one sample: component then Gaussian, both from `rng`.
    pub fn sample_one(&self, c: usize, rng: &mut StreamRng) -> Result<Vec<f64>, Error> {
        let prompt = self
            .prompts
            .get(c)
            .ok_or_else(|| Error::Config(format!("unknown prompt {c}")))?;
        let comp = rng.next_weighted(&prompt.weights);
        Ok(prompt.means[comp]
            .iter()
            .map(|m| m + self.std * rng.next_normal())
            .collect())
    }

    /// Draw `n` samples deterministically from a stream derived off `seed`.
    pub fn sample_data(&self, c: usize, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, Error> {
        if n < 1 {
            return Err(Error::Config("sample count must be >= 1".into()));
        }
        let mut rng = StreamRng::new(seed).derive("toydata").derive_idx(c as u64);
        (0..n).map(|_| self.sample_one(c, &mut rng)).collect()
    }
}
