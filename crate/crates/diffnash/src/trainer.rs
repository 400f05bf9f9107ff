//! Online Nash preference training: reference pretraining, ancestral
//! sampling, and the self-play loop (candidate generation from the evolving
//! opponent, average-rank pair selection, one preference-loss step, soft
//! opponent update).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{LossName, OptimizerName, RunConfig};
use crate::denoiser::{soft_update, soft_update_lambda, Architecture, DenoiserParams, PromptSet};
use crate::losses::{
    denoising_loss, diff_dpo_loss, diff_npo_loss, inpo_square_loss, mean_logit, LossConfig,
    NoisedPairBatch, PairItem, SingleItem,
};
use crate::oracles::{rank_candidates, Oracle};
use crate::rng::StreamRng;
use crate::schedule::NoiseSchedule;
use crate::toydata::MixtureSpec;
use crate::Error;

/// Everything the online loop needs, flattened out of the run document.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub steps: usize,
    pub prompts_per_step: usize,
    pub candidates: usize,
    pub inference_steps: usize,
    pub loss_name: LossName,
    pub loss: LossConfig,
    pub target_margin: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: OptimizerName,
    pub inner_iters: usize,
    pub pretrain_epochs: usize,
    pub pretrain_samples_per_prompt: usize,
    pub pretrain_batch: usize,
    pub pretrain_learning_rate: f64,
    pub checkpoint_interval: usize,
    pub eval_interval: usize,
    pub eval_n_per_prompt: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn from_run(cfg: &RunConfig) -> Result<Self, Error> {
        let t = &cfg.train;
        Ok(TrainConfig {
            steps: t.steps,
            prompts_per_step: t.prompts_per_step,
            candidates: t.candidates,
            inference_steps: t.inference_steps,
            loss_name: cfg.loss.name,
            loss: cfg.build_loss_config()?,
            target_margin: cfg.target_margin(),
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            optimizer: t.optimizer,
            inner_iters: t.inner_iters,
            pretrain_epochs: t.pretrain_epochs,
            pretrain_samples_per_prompt: t.pretrain_samples_per_prompt,
            pretrain_batch: t.pretrain_batch,
            pretrain_learning_rate: t.pretrain_learning_rate,
            checkpoint_interval: t.checkpoint_interval,
            eval_interval: t.eval_interval,
            eval_n_per_prompt: cfg.eval.n_per_prompt,
            seed: cfg.seed,
        })
    }
}

/// First-order optimizer over the flat parameter vector.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerName,
    momentum: f64,
    velocity: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    t: usize,
}

impl Optimizer {
    pub fn new(kind: OptimizerName, momentum: f64, n_params: usize) -> Self {
        Optimizer {
            kind,
            momentum,
            velocity: vec![0.0; n_params],
            adam_m: vec![0.0; n_params],
            adam_v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        match self.kind {
            OptimizerName::Sgd => {
                for i in 0..theta.len() {
                    self.velocity[i] = self.momentum * self.velocity[i] + grad[i];
                    theta[i] -= lr * self.velocity[i];
                }
            }
            OptimizerName::Adam => {
                let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for i in 0..theta.len() {
                    self.adam_m[i] = b1 * self.adam_m[i] + (1.0 - b1) * grad[i];
                    self.adam_v[i] = b2 * self.adam_v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let mhat = self.adam_m[i] / c1;
                    let vhat = self.adam_v[i] / c2;
                    theta[i] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Mutable state of the online loop: the learner, the evolving opponent, and
/// the frozen reference.
#[derive(Clone, Debug)]
pub struct TrainerState {
    pub step: usize,
    pub theta: DenoiserParams,
    pub prev: DenoiserParams,
    pub reference: DenoiserParams,
    pub optimizer: Optimizer,
}

impl TrainerState {
    pub fn from_reference(reference: DenoiserParams, cfg: &TrainConfig) -> Self {
        let n = reference.theta.len();
        TrainerState {
            step: 0,
            theta: reference.clone(),
            prev: reference.clone(),
            reference,
            optimizer: Optimizer::new(cfg.optimizer, cfg.momentum, n),
        }
    }
}

/// Per-step record of the metrics log. Everything here is deterministic
/// given config and seed; wall-clock timing goes to a separate file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub mean_logit: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winrate_vs_ref: Option<f64>,
    pub lambda: f64,
}

/// Train the reference denoiser on mixture samples with the plain denoising
/// loss until the epoch loss plateaus or the epoch budget runs out.
pub fn pretrain_reference(
    spec: &MixtureSpec,
    sched: &NoiseSchedule,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<DenoiserParams, Error> {
    let root = StreamRng::new(cfg.seed);
    let mut params = DenoiserParams::init(arch, &mut root.derive("pretrain_init"));
    if cfg.pretrain_epochs == 0 {
        return Ok(params);
    }
    let data: Vec<Vec<Vec<f64>>> = (0..spec.n_prompts())
        .map(|c| spec.sample_data(c, cfg.pretrain_samples_per_prompt, cfg.seed))
        .collect::<Result<_, _>>()?;
    let n_total = spec.n_prompts() * cfg.pretrain_samples_per_prompt;
    let batches_per_epoch = (n_total / cfg.pretrain_batch).max(1);
    let mut opt = Optimizer::new(OptimizerName::Adam, cfg.momentum, params.theta.len());
    let mut epoch_losses: Vec<f64> = Vec::new();
    for epoch in 0..cfg.pretrain_epochs {
        let mut rng = root.derive("pretrain").derive_idx(epoch as u64);
        let mut epoch_loss = 0.0;
        for b in 0..batches_per_epoch {
            let batch: Vec<SingleItem> = (0..cfg.pretrain_batch)
                .map(|_| {
                    let c = rng.next_usize(spec.n_prompts());
                    let x0 = &data[c][rng.next_usize(data[c].len())];
                    let t = 1 + rng.next_usize(sched.t_max);
                    let eps = rng.normal_vec(x0.len());
                    let xt = sched.forward_marginal(x0, t, &eps)?;
                    Ok(SingleItem { prompt: c, t, eps, xt })
                })
                .collect::<Result<_, Error>>()?;
            let (loss, grad) = denoising_loss(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pretrain loss at epoch {epoch}, batch {b}"
                )));
            }
            opt.step(&mut params.theta, &grad, cfg.pretrain_learning_rate);
            epoch_loss += loss / batches_per_epoch as f64;
        }
        epoch_losses.push(epoch_loss);
        if epoch_losses.len() > 10 {
            let old = epoch_losses[epoch_losses.len() - 11];
            if (old - epoch_loss) / old.abs().max(1e-12) < 1e-3 {
                break;
            }
        }
    }
    Ok(params)
}

/// Epsilon-parameterized ancestral sampling over a uniformly subsampled
/// timestep sequence. With `inference_steps == T` this is the full-schedule
/// sampler; fewer steps jump between the selected marginals.
pub fn ancestral_sample(
    params: &DenoiserParams,
    c: usize,
    sched: &NoiseSchedule,
    inference_steps: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>, Error> {
    let t_max = sched.t_max;
    if inference_steps < 1 || inference_steps > t_max {
        return Err(Error::Config(format!(
            "inference_steps {inference_steps} out of range 1..={t_max}"
        )));
    }
    // Descending subsequence t_k = round(k T / m), k = m..1; ends at t_1 >= 1.
    let timesteps: Vec<usize> = (1..=inference_steps)
        .rev()
        .map(|k| ((k * t_max) as f64 / inference_steps as f64).round() as usize)
        .collect();
    let mut x = rng.normal_vec(params.arch.sample_dim);
    for (i, &t) in timesteps.iter().enumerate() {
        let t_prev = if i + 1 < timesteps.len() { timesteps[i + 1] } else { 0 };
        let ab_t = sched.bar_alpha(t);
        let ab_prev = sched.bar_alpha(t_prev);
        let alpha_eff = ab_t / ab_prev;
        let beta_eff = 1.0 - alpha_eff;
        let eps_hat = params.forward(&x, t, c)?;
        let inv_sqrt_a = 1.0 / alpha_eff.sqrt();
        let eps_coeff = beta_eff / (1.0 - ab_t).sqrt();
        for (xi, ei) in x.iter_mut().zip(&eps_hat) {
            *xi = inv_sqrt_a * (*xi - eps_coeff * ei);
        }
        if t_prev > 0 {
            let sigma = ((1.0 - ab_prev) / (1.0 - ab_t) * beta_eff).sqrt();
            for xi in x.iter_mut() {
                *xi += sigma * rng.next_normal();
            }
        }
    }
    Ok(x)
}

/// The immutable context of a training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub sched: NoiseSchedule,
    pub mixture: MixtureSpec,
    pub oracles: Vec<Oracle>,
    pub prompts: PromptSet,
}

impl Trainer {
    pub fn from_run_config(run: &RunConfig) -> Result<Self, Error> {
        Ok(Trainer {
            cfg: TrainConfig::from_run(run)?,
            sched: run.build_schedule()?,
            mixture: run.build_mixture()?,
            oracles: run.build_oracles()?,
            prompts: PromptSet::new(run.prompt_weights())?,
        })
    }

    /// Generate, rank, and noise one preference pair for slot `j` of online
    /// step `s`. The RNG stream depends only on (seed, s, j), so parallel
    /// execution order cannot change the result.
    fn build_pair(
        &self,
        prev: &DenoiserParams,
        s: usize,
        j: usize,
    ) -> Result<PairItem, Error> {
        let root = StreamRng::new(self.cfg.seed)
            .derive("online")
            .derive_idx(s as u64)
            .derive_idx(j as u64);
        let c = root.derive("prompt").next_weighted(&self.prompts.weights);
        let cands: Vec<Vec<f64>> = (0..self.cfg.candidates)
            .map(|i| {
                ancestral_sample(
                    prev,
                    c,
                    &self.sched,
                    self.cfg.inference_steps,
                    &mut root.derive("cand").derive_idx(i as u64),
                )
            })
            .collect::<Result<_, _>>()?;
        let ranking = rank_candidates(&cands, c, &self.oracles)?;
        let x0_pos = &cands[ranking.best];
        let x0_neg = &cands[ranking.worst];
        // Shared timestep per pair, independent noises.
        let mut noise_rng = root.derive("noise");
        let t = 1 + noise_rng.next_usize(self.sched.t_max);
        let eps_pos = noise_rng.normal_vec(x0_pos.len());
        let eps_neg = noise_rng.normal_vec(x0_neg.len());
        let xt_pos = self.sched.forward_marginal(x0_pos, t, &eps_pos)?;
        let xt_neg = self.sched.forward_marginal(x0_neg, t, &eps_neg)?;
        Ok(PairItem { prompt: c, t, eps_pos, eps_neg, xt_pos, xt_neg })
    }

    fn loss_and_grad(
        &self,
        state: &TrainerState,
        batch: &NoisedPairBatch,
    ) -> Result<(f64, Vec<f64>), Error> {
        match self.cfg.loss_name {
            LossName::Npo => diff_npo_loss(
                &state.theta,
                &state.reference,
                &state.prev,
                batch,
                &self.cfg.loss,
            ),
            LossName::Dpo => {
                diff_dpo_loss(&state.theta, &state.reference, batch, &self.cfg.loss)
            }
            LossName::Selfplay => {
                let sp = LossConfig { tau: 0.0, ..self.cfg.loss };
                diff_npo_loss(&state.theta, &state.reference, &state.prev, batch, &sp)
            }
            LossName::Sft => {
                let singles: Vec<SingleItem> = batch
                    .items
                    .iter()
                    .map(|p| SingleItem {
                        prompt: p.prompt,
                        t: p.t,
                        eps: p.eps_pos.clone(),
                        xt: p.xt_pos.clone(),
                    })
                    .collect();
                denoising_loss(&state.theta, &singles)
            }
            LossName::InpoSq => inpo_square_loss(
                &state.theta,
                &state.reference,
                &state.prev,
                batch,
                &self.cfg.loss,
                self.cfg.target_margin,
            ),
        }
    }

    /// One online step: build pairs from the opponent, take the configured
    /// number of gradient steps, soft-update the opponent.
    pub fn npo_step(&self, state: &mut TrainerState) -> Result<StepRecord, Error> {
        let s = state.step + 1;
        let items: Vec<PairItem> = (0..self.cfg.prompts_per_step)
            .into_par_iter()
            .map(|j| self.build_pair(&state.prev, s, j))
            .collect::<Result<_, _>>()?;
        let batch = NoisedPairBatch { items };
        let mut last_loss = f64::NAN;
        for _ in 0..self.cfg.inner_iters {
            let (loss, grad) = self.loss_and_grad(state, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at online step {s}")));
            }
            state
                .optimizer
                .step(&mut state.theta.theta, &grad, self.cfg.learning_rate);
            last_loss = loss;
        }
        let logit = mean_logit(
            &state.theta,
            &state.reference,
            &state.prev,
            &batch,
            &self.cfg.loss,
        )?;
        let lambda = soft_update_lambda(s);
        state.prev = soft_update(&state.prev, &state.theta, lambda)?;
        state.step = s;
        Ok(StepRecord {
            step: s,
            loss: last_loss,
            mean_logit: logit,
            winrate_vs_ref: None,
            lambda,
        })
    }
}

/// Paths produced by a full run.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub final_checkpoint: PathBuf,
    pub ref_checkpoint: PathBuf,
    pub metrics_path: PathBuf,
    pub final_params: DenoiserParams,
    pub reference: DenoiserParams,
}

fn save_checkpoint(
    params: &DenoiserParams,
    run: &RunConfig,
    step: u64,
    path: &Path,
) -> Result<(), Error> {
    Checkpoint {
        params: params.clone(),
        t_max: run.schedule.t_max,
        beta_start: run.schedule.beta_start,
        beta_end: run.schedule.beta_end,
        seed: run.seed,
        step,
    }
    .save(path)
}

/// Pretrain (or load) the reference, run the online loop, and write
/// checkpoints plus the metrics log under `out_dir`.
pub fn run_training(run: &RunConfig, out_dir: &Path) -> Result<RunArtifacts, Error> {
    run.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let trainer = Trainer::from_run_config(run)?;
    let arch = run.architecture();

    let reference = match &run.train.ref_checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(Path::new(path))?;
            if ck.params.arch != arch {
                return Err(Error::Checkpoint(format!(
                    "reference checkpoint architecture {:?} does not match config {:?}",
                    ck.params.arch, arch
                )));
            }
            ck.params
        }
        None => pretrain_reference(&trainer.mixture, &trainer.sched, arch, &trainer.cfg)?,
    };
    let ref_path = out_dir.join("ref.ckpt");
    save_checkpoint(&reference, run, 0, &ref_path)?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics = std::fs::File::create(&metrics_path)?;
    let timing_path = out_dir.join("timing.jsonl");
    let mut timing = std::fs::File::create(&timing_path)?;

    let mut state = TrainerState::from_reference(reference.clone(), &trainer.cfg);
    for _ in 0..trainer.cfg.steps {
        let t0 = Instant::now();
        let mut record = trainer.npo_step(&mut state)?;
        let s = state.step;
        if trainer.cfg.eval_interval > 0 && s % trainer.cfg.eval_interval == 0 {
            let report = crate::eval::winrate(
                &state.theta,
                &reference,
                trainer.prompts.len(),
                &trainer.oracles[0],
                &trainer.sched,
                trainer.cfg.inference_steps,
                trainer.cfg.eval_n_per_prompt,
                StreamRng::new(trainer.cfg.seed).derive("train_eval").derive_idx(s as u64),
            )?;
            record.winrate_vs_ref = Some(report.winrate);
        }
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Config(format!("metrics serialization: {e}")))?;
        writeln!(metrics, "{line}")?;
        metrics.flush()?;
        writeln!(
            timing,
            "{{\"step\":{s},\"wallclock_ms\":{}}}",
            t0.elapsed().as_millis()
        )?;
        timing.flush()?;
        if trainer.cfg.checkpoint_interval > 0 && s % trainer.cfg.checkpoint_interval == 0 {
            save_checkpoint(
                &state.theta,
                run,
                s as u64,
                &out_dir.join(format!("step_{s:06}.ckpt")),
            )?;
        }
    }
    let final_path = out_dir.join("final.ckpt");
    save_checkpoint(&state.theta, run, state.step as u64, &final_path)?;
    Ok(RunArtifacts {
        final_checkpoint: final_path,
        ref_checkpoint: ref_path,
        metrics_path,
        final_params: state.theta,
        reference,
    })
}
