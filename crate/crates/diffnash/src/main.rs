//! Command-line entry point: tabular Nash solving, reference pretraining,
//! online preference training, evaluation, the gamma ablation sweep, and
//! SVG plot emission.
//!
//! Exit codes: 0 success, 1 input/validation error, 2 non-convergence.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diffnash::checkpoint::Checkpoint;
use diffnash::config::RunConfig;
use diffnash::denoiser::Architecture;
use diffnash::eval::{ablation_sweep, default_gamma_grid, winrate, write_ablation_csv};
use diffnash::plot::{render_plot, PlotKind};
use diffnash::rng::StreamRng;
use diffnash::tabular::{solve_nash, GameParams, PreferenceMatrix, TabularPolicy};
use diffnash::trainer::{pretrain_reference, run_training, TrainConfig};
use diffnash::Error;

/// Output-root override; run directories are created beneath it when set.
const OUT_ROOT_ENV: &str = "DIFFNASH_OUT_ROOT";

#[derive(Parser)]
#[command(name = "diffnash", version, about = "Nash preference optimization on toy diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set loss.tau=0.25.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the KL-regularized two-player game for a preference matrix.
    TabularSolve {
        /// Matrix file: first line N, then N rows of N probabilities.
        #[arg(long)]
        game: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        /// Where to write the per-iteration gap history CSV.
        #[arg(long, default_value = "gaps.csv")]
        out: PathBuf,
    },
    /// Pretrain the reference denoiser only.
    Pretrain(ConfigArgs),
    /// Full run: pretrain (or load) the reference, then the online loop.
    Train(ConfigArgs),
    /// Win-rate report between two checkpoints under the configured oracles.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long, default_value = "eval.csv")]
        out: PathBuf,
    },
    /// Retrain across a gamma grid and tabulate win rates vs reference.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated gamma values; defaults to the standard grid.
        #[arg(long)]
        gammas: Option<String>,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3,4,5")]
        seeds: String,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Render a CSV or metrics file as a static SVG.
    Plot {
        #[arg(long)]
        input: PathBuf,
        /// One of: gap, loss, ablation.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(&args.config)?;
    RunConfig::from_toml_with_overrides(&text, &args.set)
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var(OUT_ROOT_ENV) {
        Ok(root) if !root.is_empty() => Path::new(&root).join(&cfg.out_dir),
        _ => PathBuf::from(&cfg.out_dir),
    }
}

/// Write the fully resolved configuration next to the run outputs so the
/// exact run can be re-launched later.
fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.resolved.toml"), cfg.to_toml())?;
    Ok(())
}

fn cmd_tabular_solve(
    game: &Path,
    tau: f64,
    eta: f64,
    tol: f64,
    max_iters: usize,
    out: &Path,
) -> Result<ExitCode, Error> {
    let text = std::fs::read_to_string(game)?;
    let mat = PreferenceMatrix::parse(&text)?;
    let params = GameParams::new(tau, eta, TabularPolicy::uniform(mat.n))?;
    let solution = solve_nash(&mat, &params, max_iters, tol)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(out)?;
    writeln!(f, "iter,gap")?;
    for (i, g) in solution.gap_history.iter().enumerate() {
        writeln!(f, "{i},{g}")?;
    }
    println!("policy:");
    for (i, p) in solution.policy.probs.iter().enumerate() {
        println!("  action {i}: {p:.6}");
    }
    let final_gap = *solution.gap_history.last().unwrap();
    println!("final gap: {final_gap:e} after {} iterations", solution.gap_history.len() - 1);
    if solution.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("did not reach gap <= {tol} within {max_iters} iterations");
        Ok(ExitCode::from(2))
    }
}

fn cmd_pretrain(args: &ConfigArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let dir = out_dir(&cfg);
    echo_config(&cfg, &dir)?;
    let trainer_cfg = TrainConfig::from_run(&cfg)?;
    let mixture = cfg.build_mixture()?;
    let sched = cfg.build_schedule()?;
    let arch: Architecture = cfg.architecture();
    let params = pretrain_reference(&mixture, &sched, arch, &trainer_cfg)?;
    let path = dir.join("ref.ckpt");
    Checkpoint {
        params,
        t_max: cfg.schedule.t_max,
        beta_start: cfg.schedule.beta_start,
        beta_end: cfg.schedule.beta_end,
        seed: cfg.seed,
        step: 0,
    }
    .save(&path)?;
    println!("reference written to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: &ConfigArgs) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let dir = out_dir(&cfg);
    echo_config(&cfg, &dir)?;
    let artifacts = run_training(&cfg, &dir)?;
    println!("final checkpoint: {}", artifacts.final_checkpoint.display());
    println!("metrics: {}", artifacts.metrics_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    args: &ConfigArgs,
    model_a: &Path,
    model_b: &Path,
    out: &Path,
) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let a = Checkpoint::load(model_a)?;
    let b = Checkpoint::load(model_b)?;
    if a.params.arch != b.params.arch {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: {:?} vs {:?}",
            a.params.arch, b.params.arch
        )));
    }
    if a.params.arch != cfg.architecture() {
        return Err(Error::Checkpoint(
            "checkpoint architecture does not match config".into(),
        ));
    }
    let sched = cfg.build_schedule()?;
    let oracles = cfg.build_oracles()?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(out)?;
    writeln!(f, "oracle,winrate,ci_halfwidth,mean_score_a,mean_score_b")?;
    for (i, oracle) in oracles.iter().enumerate() {
        let report = winrate(
            &a.params,
            &b.params,
            cfg.n_prompts(),
            oracle,
            &sched,
            cfg.train.inference_steps,
            cfg.eval.n_per_prompt,
            StreamRng::new(cfg.seed).derive("cli_eval").derive_idx(i as u64),
        )?;
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{i},{},{},{},{}",
            report.winrate,
            report.ci_halfwidth,
            fmt(report.mean_score_a),
            fmt(report.mean_score_b)
        )?;
        println!(
            "oracle {i}: winrate {:.4} +/- {:.4} over {} comparisons",
            report.winrate, report.ci_halfwidth, report.n_comparisons
        );
    }
    println!("report written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} value '{p}'")))
        })
        .collect()
}

fn cmd_ablate(
    args: &ConfigArgs,
    gammas: &Option<String>,
    seeds: &str,
    out: &Path,
) -> Result<ExitCode, Error> {
    let cfg = load_config(args)?;
    let gammas: Vec<f64> = match gammas {
        Some(s) => parse_list(s, "gamma")?,
        None => default_gamma_grid(),
    };
    let seeds: Vec<u64> = parse_list(seeds, "seed")?;
    let dir = out_dir(&cfg);
    echo_config(&cfg, &dir)?;
    let rows = ablation_sweep(&cfg, &gammas, &seeds, &dir.join("sweep"))?;
    write_ablation_csv(&rows, out)?;
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(input: &Path, kind: &str, out: &Path) -> Result<ExitCode, Error> {
    let kind = PlotKind::parse(kind)?;
    render_plot(kind, input, out)?;
    println!("plot written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match &cli.command {
        Command::TabularSolve { game, tau, eta, tol, max_iters, out } => {
            cmd_tabular_solve(game, *tau, *eta, *tol, *max_iters, out)
        }
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval { config, model_a, model_b, out } => {
            cmd_eval(config, model_a, model_b, out)
        }
        Command::Ablate { config, gammas, seeds, out } => cmd_ablate(config, gammas, seeds, out),
        Command::Plot { input, kind, out } => cmd_plot(input, kind, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
