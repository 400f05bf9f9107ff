//! End-to-end acceptance suite. Each test prints a single
//! "criterion N: PASS/FAIL" line (visible with --nocapture) and asserts it.

use std::time::Instant;

use diffnash::checkpoint::Checkpoint;
use diffnash::config::RunConfig;
use diffnash::denoiser::{Architecture, DenoiserParams};
use diffnash::eval::{ablation_sweep, default_gamma_grid, winrate, write_ablation_csv};
use diffnash::losses::{
    denoising_loss, diff_dpo_loss, diff_npo_loss, inpo_square_loss, LossConfig, NoisedPairBatch,
    PairItem, SingleItem,
};
use diffnash::plot::{render_plot, PlotKind};
use diffnash::rng::StreamRng;
use diffnash::schedule::NoiseSchedule;
use diffnash::tabular::{
    bt_fit_test, duality_gap, game_value, omd_update, solve_nash, GameParams, PreferenceMatrix,
    TabularPolicy,
};
use diffnash::trainer::run_training;

fn report(criterion: usize, ok: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} failed: {detail}");
}

fn default_run() -> RunConfig {
    RunConfig::from_file(std::path::Path::new(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/default.toml"
    )))
    .unwrap()
}

fn random_matrix(rng: &mut StreamRng, n: usize) -> PreferenceMatrix {
    let mut p = vec![0.5; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.05 + 0.9 * rng.next_f64();
            p[i * n + j] = v;
            p[j * n + i] = 1.0 - v;
        }
    }
    PreferenceMatrix::new(n, p).unwrap()
}

fn random_interior_policy(rng: &mut StreamRng, n: usize) -> TabularPolicy {
    let raw: Vec<f64> = (0..n).map(|_| 0.1 + rng.next_f64()).collect();
    let z: f64 = raw.iter().sum();
    TabularPolicy::new(raw.iter().map(|v| v / z).collect()).unwrap()
}

#[test]
fn criterion_1_tabular_exactness_rps() {
    let t0 = Instant::now();
    let mat = PreferenceMatrix::rock_paper_scissors();
    let params = GameParams::new(0.5, 1.0, TabularPolicy::uniform(3)).unwrap();
    let sol = solve_nash(&mat, &params, 500, 1e-8).unwrap();
    let elapsed = t0.elapsed();
    let tv = sol.policy.tv_distance(&TabularPolicy::uniform(3));
    let gap = *sol.gap_history.last().unwrap();
    let ok = sol.converged && gap < 1e-8 && tv < 1e-6 && elapsed.as_secs_f64() < 1.0;
    report(
        1,
        ok,
        &format!(
            "RPS gap {gap:.2e}, TV-to-uniform {tv:.2e}, {} iters in {:.3}s",
            sol.gap_history.len() - 1,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_brute_force_nash_equivalence() {
    let mat = PreferenceMatrix::parse(
        &std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../games/n2_biased.txt"
        ))
        .unwrap(),
    )
    .unwrap();
    let params = GameParams::new(1.0, 2.0, TabularPolicy::uniform(2)).unwrap();
    let sol = solve_nash(&mat, &params, 5_000, 1e-10).unwrap();
    assert!(sol.converged);

    // Exhaustive maximin over the 1e-3 simplex grid.
    let steps = 1000usize;
    let grid: Vec<TabularPolicy> = (0..=steps)
        .map(|i| {
            let x = i as f64 / steps as f64;
            TabularPolicy::new(vec![x, 1.0 - x]).unwrap()
        })
        .collect();
    let mut best: Option<(f64, usize)> = None;
    for (i, p1) in grid.iter().enumerate() {
        let mut inner = f64::INFINITY;
        for p2 in &grid {
            inner = inner.min(game_value(p1, p2, &mat, &params).unwrap());
        }
        if best.map(|(v, _)| inner > v).unwrap_or(true) {
            best = Some((inner, i));
        }
    }
    let grid_policy = grid[best.unwrap().1].clone();
    let tv = sol.policy.tv_distance(&grid_policy);
    let grid_gap = duality_gap(&grid_policy, &mat, &params).unwrap();
    let ok = tv < 2e-3 && grid_gap < 1e-3;
    report(
        2,
        ok,
        &format!("TV to grid minimax {tv:.2e}, grid-solution gap {grid_gap:.2e}"),
    );
}

#[test]
fn criterion_3_omd_closed_form_vs_grid() {
    let mut rng = StreamRng::new(33).derive("omd");
    let mut worst_tv: f64 = 0.0;
    for _ in 0..20 {
        let mat = random_matrix(&mut rng, 3);
        let p_ref = random_interior_policy(&mut rng, 3);
        let p_s = random_interior_policy(&mut rng, 3);
        let (tau, eta) = (0.2 + 0.6 * rng.next_f64(), 1.0 + rng.next_f64());
        let tau = tau.min(eta);
        let params = GameParams::new(tau, eta, p_ref.clone()).unwrap();
        let closed = omd_update(&p_s, &mat, &params).unwrap();

        // Linearized objective <grad l_s(p_s), p> + eta KL(p || p_s), with
        // l_s(p) = -<P p_s, p> + tau KL(p || ref).
        let wins = mat.matvec(&p_s.probs);
        let grad: Vec<f64> = (0..3)
            .map(|i| -wins[i] + tau * ((p_s.probs[i] / p_ref.probs[i]).ln() + 1.0))
            .collect();
        let steps = 1000usize;
        let mut best = (f64::INFINITY, TabularPolicy::uniform(3));
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let k = steps - i - j;
                let p = [
                    i as f64 / steps as f64,
                    j as f64 / steps as f64,
                    k as f64 / steps as f64,
                ];
                let mut obj = 0.0;
                for d in 0..3 {
                    obj += grad[d] * p[d];
                    if p[d] > 0.0 {
                        obj += eta * p[d] * (p[d] / p_s.probs[d]).ln();
                    }
                }
                if obj < best.0 {
                    best = (obj, TabularPolicy::new(p.to_vec()).unwrap());
                }
            }
        }
        worst_tv = worst_tv.max(closed.tv_distance(&best.1));
    }
    report(3, worst_tv < 2e-3, &format!("worst TV over 20 games {worst_tv:.2e}"));
}

fn random_batch(rng: &mut StreamRng, sched: &NoiseSchedule, n: usize) -> NoisedPairBatch {
    let items = (0..n)
        .map(|_| {
            let t = 1 + rng.next_usize(sched.t_max);
            let x0p = rng.normal_vec(2);
            let x0n = rng.normal_vec(2);
            let ep = rng.normal_vec(2);
            let en = rng.normal_vec(2);
            PairItem {
                prompt: rng.next_usize(2),
                t,
                xt_pos: sched.forward_marginal(&x0p, t, &ep).unwrap(),
                xt_neg: sched.forward_marginal(&x0n, t, &en).unwrap(),
                eps_pos: ep,
                eps_neg: en,
            }
        })
        .collect();
    NoisedPairBatch { items }
}

fn small_models(seed: u64) -> (DenoiserParams, DenoiserParams, DenoiserParams) {
    let arch = Architecture { sample_dim: 2, hidden: 8, depth: 2, n_prompts: 2 };
    let mk = |label: u64| {
        DenoiserParams::init(arch, &mut StreamRng::new(seed).derive("m").derive_idx(label))
    };
    (mk(0), mk(1), mk(2))
}

#[test]
fn criterion_4_gradient_suite() {
    let t0 = Instant::now();
    let sched = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
    let mut rng = StreamRng::new(4).derive("grad");
    let (theta, reference, prev) = small_models(44);
    let batch = random_batch(&mut rng, &sched, 4);
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

    let mut checks: Vec<(&str, Box<dyn Fn(&DenoiserParams) -> (f64, Vec<f64>)>)> = Vec::new();
    checks.push(("denoising", Box::new({
        let singles = singles.clone();
        move |th: &DenoiserParams| denoising_loss(th, &singles).unwrap()
    })));
    let dpo_cfg = LossConfig::new(1.0, 1.0, 1.0, 5.0).unwrap();
    checks.push(("dpo", Box::new({
        let (r, b) = (reference.clone(), batch.clone());
        move |th: &DenoiserParams| diff_dpo_loss(th, &r, &b, &dpo_cfg).unwrap()
    })));
    for gamma in [0.0, 0.5, 1.0] {
        let cfg = LossConfig::new(1.0, gamma, 1.0, 5.0).unwrap();
        checks.push(("npo", Box::new({
            let (r, p, b) = (reference.clone(), prev.clone(), batch.clone());
            move |th: &DenoiserParams| diff_npo_loss(th, &r, &p, &b, &cfg).unwrap()
        })));
    }
    let sq_cfg = LossConfig::new(1.0, 0.5, 1.0, 5.0).unwrap();
    checks.push(("inpo_sq", Box::new({
        let (r, p, b) = (reference.clone(), prev.clone(), batch.clone());
        move |th: &DenoiserParams| inpo_square_loss(th, &r, &p, &b, &sq_cfg, 0.5).unwrap()
    })));

    let h = 1e-5;
    let mut worst_rel: f64 = 0.0;
    for (name, f) in &checks {
        let (_, grad) = f(&theta);
        let mut coord_rng = StreamRng::new(7).derive(name).derive_idx(grad.len() as u64);
        for _ in 0..50 {
            let i = coord_rng.next_usize(theta.theta.len());
            let mut plus = theta.clone();
            plus.theta[i] += h;
            let mut minus = theta.clone();
            minus.theta[i] -= h;
            let fd = (f(&plus).0 - f(&minus).0) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-7);
            worst_rel = worst_rel.max((fd - grad[i]).abs() / denom);
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let ok = worst_rel < 1e-5 && elapsed < 30.0;
    report(
        4,
        ok,
        &format!("worst relative gradient error {worst_rel:.2e} in {elapsed:.2}s"),
    );
}

#[test]
fn criterion_5_reduction_identities() {
    let sched = NoiseSchedule::linear(10, 1e-3, 0.1).unwrap();
    let mut rng = StreamRng::new(5).derive("red");
    let mut max_dpo_diff: f64 = 0.0;
    let mut max_ref_diff: f64 = 0.0;
    let mut max_ln2_diff: f64 = 0.0;
    let mut max_grad_norm: f64 = 0.0;
    for i in 0..100 {
        let (theta, reference, prev) = small_models(100 + i);
        let batch = random_batch(&mut rng, &sched, 3);
        let cfg1 = LossConfig::new(1.0, 1.0, 1.0, 5.0).unwrap();
        let (l_npo, _) = diff_npo_loss(&theta, &reference, &prev, &batch, &cfg1).unwrap();
        let (l_dpo, _) = diff_dpo_loss(&theta, &reference, &batch, &cfg1).unwrap();
        max_dpo_diff = max_dpo_diff.max((l_npo - l_dpo).abs());

        let cfg0 = LossConfig::new(1.0, 0.0, 1.0, 5.0).unwrap();
        let mut ref2 = reference.clone();
        for v in ref2.theta.iter_mut() {
            *v += 0.3;
        }
        let (a, _) = diff_npo_loss(&theta, &reference, &prev, &batch, &cfg0).unwrap();
        let (b, _) = diff_npo_loss(&theta, &ref2, &prev, &batch, &cfg0).unwrap();
        max_ref_diff = max_ref_diff.max((a - b).abs());

        let mut same = batch.clone();
        for item in &mut same.items {
            item.xt_neg = item.xt_pos.clone();
            item.eps_neg = item.eps_pos.clone();
        }
        let cfg_half = LossConfig::new(1.0, 0.5, 1.0, 5.0).unwrap();
        let (l, g) = diff_npo_loss(&theta, &reference, &prev, &same, &cfg_half).unwrap();
        max_ln2_diff = max_ln2_diff.max((l - std::f64::consts::LN_2).abs());
        max_grad_norm = max_grad_norm.max(g.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
    let ok = max_dpo_diff < 1e-12
        && max_ref_diff < 1e-12
        && max_ln2_diff < 1e-12
        && max_grad_norm < 1e-10;
    report(
        5,
        ok,
        &format!(
            "gamma=1 vs dpo {max_dpo_diff:.2e}, gamma=0 ref sensitivity {max_ref_diff:.2e}, \
             ln2 deviation {max_ln2_diff:.2e}, identical-pair grad {max_grad_norm:.2e}"
        ),
    );
}

#[test]
fn criterion_6_intransitivity_certificate() {
    let mut rng = StreamRng::new(6).derive("bt");
    let mut worst_residual: f64 = 0.0;
    let mut all_pass = true;
    for _ in 0..20 {
        let scores: Vec<f64> = (0..5).map(|_| 3.0 * (rng.next_f64() - 0.5)).collect();
        let mat = PreferenceMatrix::from_scores(&scores);
        let (fits, residual) = bt_fit_test(&mat, 1e-9);
        all_pass &= fits;
        worst_residual = worst_residual.max(residual);
    }
    let (rps_fits, rps_residual) = bt_fit_test(&PreferenceMatrix::rock_paper_scissors(), 1e-9);
    let ok = all_pass && worst_residual < 1e-9 && !rps_fits && rps_residual > 1.0;
    report(
        6,
        ok,
        &format!(
            "score matrices worst residual {worst_residual:.2e}; RPS residual {rps_residual:.2}"
        ),
    );
}

#[test]
fn criterion_7_end_to_end_alignment() {
    let t0 = Instant::now();
    let base = default_run();
    let dir = tempfile::tempdir().unwrap();
    let mut rates = Vec::new();
    for seed in 1..=5u64 {
        let mut run = base.clone();
        run.seed = seed;
        let art = run_training(&run, &dir.path().join(format!("seed_{seed}"))).unwrap();
        let rep = winrate(
            &art.final_params,
            &art.reference,
            run.n_prompts(),
            &run.build_oracles().unwrap()[0],
            &run.build_schedule().unwrap(),
            run.train.inference_steps,
            run.eval.n_per_prompt,
            StreamRng::new(seed).derive("ablation_eval"),
        )
        .unwrap();
        rates.push(rep.winrate);
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = rates[2];
    let elapsed = t0.elapsed().as_secs_f64();
    let ok = median >= 0.60 && elapsed < 1500.0;
    report(
        7,
        ok,
        &format!("median winrate over 5 seeds {median:.3} (all {rates:?}) in {elapsed:.0}s"),
    );
}

#[test]
fn criterion_8_ablation_shape() {
    let base = default_run();
    let dir = tempfile::tempdir().unwrap();
    let gammas = default_gamma_grid();
    let seeds: Vec<u64> = (1..=5).collect();
    let rows = ablation_sweep(&base, &gammas, &seeds, dir.path()).unwrap();

    let csv_path = dir.path().join("ablation.csv");
    write_ablation_csv(&rows, &csv_path).unwrap();
    render_plot(PlotKind::Ablation, &csv_path, &dir.path().join("ablation.svg")).unwrap();
    // Keep the artifacts regardless of pass/fail.
    let keep = std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../target"))
        .join("ablation");
    std::fs::create_dir_all(&keep).unwrap();
    std::fs::copy(&csv_path, keep.join("ablation.csv")).unwrap();
    std::fs::copy(dir.path().join("ablation.svg"), keep.join("ablation.svg")).unwrap();

    let median_at = |g: f64| -> f64 {
        let mut v: Vec<f64> = rows
            .iter()
            .filter(|r| (r.gamma - g).abs() < 1e-12)
            .map(|r| r.winrate)
            .collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let (m0, m_half, m1) = (median_at(0.0), median_at(0.5), median_at(1.0));
    let ok = m_half >= m0 && m_half >= m1 - 0.02;
    report(
        8,
        ok,
        &format!("medians: gamma=0 {m0:.3}, gamma=1/2 {m_half:.3}, gamma=1 {m1:.3}"),
    );
}

#[test]
fn criterion_9_determinism() {
    let run = RunConfig::from_toml_with_overrides(
        &default_run().to_toml(),
        &[
            "schedule.t_max=40".into(),
            "train.steps=6".into(),
            "train.prompts_per_step=4".into(),
            "train.candidates=4".into(),
            "train.inference_steps=5".into(),
            "train.pretrain_epochs=2".into(),
            "train.pretrain_samples_per_prompt=64".into(),
            "train.pretrain_batch=64".into(),
            "train.eval_interval=3".into(),
            "eval.n_per_prompt=4".into(),
        ],
    )
    .unwrap();
    let run_with_threads = |n: usize| -> Vec<u8> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let dir = tempfile::tempdir().unwrap();
        pool.install(|| {
            let art = run_training(&run, dir.path()).unwrap();
            std::fs::read(&art.metrics_path).unwrap()
        })
    };
    let a = run_with_threads(1);
    let b = run_with_threads(1);
    let c = run_with_threads(4);
    let ok = !a.is_empty() && a == b && a == c;
    report(
        9,
        ok,
        &format!(
            "metrics bytes: repeat identical = {}, 1-vs-4 threads identical = {}",
            a == b,
            a == c
        ),
    );
}

#[test]
fn criterion_10_formats() {
    // Checkpoint round trip, bit for bit.
    let arch = Architecture { sample_dim: 2, hidden: 16, depth: 2, n_prompts: 4 };
    let params = DenoiserParams::init(arch, &mut StreamRng::new(10).derive("fmt"));
    let ck = Checkpoint {
        params,
        t_max: 100,
        beta_start: 1e-4,
        beta_end: 0.02,
        seed: 123,
        step: 77,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let bits_equal = ck
        .params
        .theta
        .iter()
        .zip(&loaded.params.theta)
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && ck == loaded;

    // Malformed matrix rejected with the offending indices, and the binary
    // exits 1 on it.
    let bad = "2\n0.5 0.8\n0.3 0.5\n";
    let err = PreferenceMatrix::parse(bad).unwrap_err().to_string();
    let located = err.contains("complement violation at (0,1)");
    let bad_path = dir.path().join("bad.txt");
    std::fs::write(&bad_path, bad).unwrap();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_diffnash"))
        .args(["tabular-solve", "--game"])
        .arg(&bad_path)
        .args(["--out"])
        .arg(dir.path().join("gaps.csv"))
        .output()
        .unwrap();
    let exit_one = out.status.code() == Some(1);

    let ok = bits_equal && located && exit_one;
    report(
        10,
        ok,
        &format!(
            "round trip bit-exact = {bits_equal}, located error = {located}, exit code 1 = {exit_one}"
        ),
    );
}
