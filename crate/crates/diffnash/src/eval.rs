//! Win-rate evaluation between two models under a preference oracle, and
//! the gamma ablation sweep that retrains per grid point and tabulates
//! final-vs-reference win rates.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::denoiser::DenoiserParams;
use crate::oracles::Oracle;
use crate::rng::StreamRng;
use crate::schedule::NoiseSchedule;
use crate::trainer::{ancestral_sample, run_training};
use crate::Error;

/// Outcome of a pairwise model comparison under one oracle.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub winrate: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub mean_score_a: Option<f64>,
    pub mean_score_b: Option<f64>,
    pub n_comparisons: usize,
}

/// Win rate of `model_a` against `model_b`: for each (prompt, repetition)
/// both models generate from the same derived noise stream (paired seeds),
/// the oracle judges, and ties count one half.
#[allow(clippy::too_many_arguments)]
pub fn winrate(
    model_a: &DenoiserParams,
    model_b: &DenoiserParams,
    n_prompts: usize,
    oracle: &Oracle,
    sched: &NoiseSchedule,
    inference_steps: usize,
    n_per_prompt: usize,
    root: StreamRng,
) -> Result<EvalReport, Error> {
    if n_per_prompt < 1 {
        return Err(Error::Config("n_per_prompt must be >= 1".into()));
    }
    if model_a.arch != model_b.arch {
        return Err(Error::Config("winrate: architecture mismatch".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..n_prompts)
        .flat_map(|c| (0..n_per_prompt).map(move |r| (c, r)))
        .collect();
    let results: Vec<(f64, Option<f64>, Option<f64>)> = jobs
        .par_iter()
        .map(|&(c, r)| -> Result<_, Error> {
            let stream = root.derive_idx(c as u64).derive_idx(r as u64);
            let xa = ancestral_sample(model_a, c, sched, inference_steps, &mut stream.clone())?;
            let xb = ancestral_sample(model_b, c, sched, inference_steps, &mut stream.clone())?;
            let p = oracle.pairwise_pref(&xa, &xb, c);
            let win = if p > 0.5 {
                1.0
            } else if p < 0.5 {
                0.0
            } else {
                0.5
            };
            Ok((win, oracle.score(&xa, c), oracle.score(&xb, c)))
        })
        .collect::<Result<_, _>>()?;
    let n = results.len();
    let wr = results.iter().map(|r| r.0).sum::<f64>() / n as f64;
    let ci = 1.96 * (wr * (1.0 - wr) / n as f64).sqrt();
    let mean_opt = |f: &dyn Fn(&(f64, Option<f64>, Option<f64>)) -> Option<f64>| {
        let vals: Vec<f64> = results.iter().filter_map(f).collect();
        if vals.len() == n {
            Some(vals.iter().sum::<f64>() / n as f64)
        } else {
            None
        }
    };
    Ok(EvalReport {
        winrate: wr,
        ci_halfwidth: ci,
        mean_score_a: mean_opt(&|r| r.1),
        mean_score_b: mean_opt(&|r| r.2),
        n_comparisons: n,
    })
}

/// One row of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub gamma: f64,
    pub seed: u64,
    pub winrate: f64,
    pub ci_halfwidth: f64,
    pub mean_score_a: Option<f64>,
    pub mean_score_b: Option<f64>,
}

/// The default gamma grid of the ablation.
pub fn default_gamma_grid() -> Vec<f64> {
    vec![0.0, 1.0 / 9.0, 1.0 / 3.0, 0.5, 8.0 / 9.0, 1.0]
}

/// Retrain per (gamma, seed) with everything else held fixed, then report
/// the final model's win rate against its own reference. Run directories
/// land under `work_dir`.
pub fn ablation_sweep(
    base: &RunConfig,
    gammas: &[f64],
    seeds: &[u64],
    work_dir: &Path,
) -> Result<Vec<AblationRow>, Error> {
    if gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::Config("gammas must lie in [0, 1]".into()));
    }
    if gammas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one gamma and one seed".into()));
    }
    let mut rows = Vec::with_capacity(gammas.len() * seeds.len());
    for (gi, &gamma) in gammas.iter().enumerate() {
        for &seed in seeds {
            let mut run = base.clone();
            run.loss.tau = gamma * run.loss.eta;
            run.seed = seed;
            let out = work_dir.join(format!("gamma_{gi}_seed_{seed}"));
            let art = run_training(&run, &out)?;
            let report = winrate(
                &art.final_params,
                &art.reference,
                run.n_prompts(),
                &run.build_oracles()?[0],
                &run.build_schedule()?,
                run.train.inference_steps,
                run.eval.n_per_prompt,
                StreamRng::new(seed).derive("ablation_eval"),
            )?;
            rows.push(AblationRow {
                gamma,
                seed,
                winrate: report.winrate,
                ci_halfwidth: report.ci_halfwidth,
                mean_score_a: report.mean_score_a,
                mean_score_b: report.mean_score_b,
            });
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Write ablation rows as CSV with a header.
pub fn write_ablation_csv(rows: &[AblationRow], path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "gamma,seed,winrate,ci_halfwidth,mean_score_a,mean_score_b")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.gamma,
            r.seed,
            r.winrate,
            r.ci_halfwidth,
            fmt_opt(r.mean_score_a),
            fmt_opt(r.mean_score_b)
        )?;
    }
    Ok(())
}
