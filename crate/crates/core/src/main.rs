use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use moral_ipd::experiment::{parse_config, run_experiment, Overrides};

/// Train populations of moral Q-learning agents on the iterated prisoner's dilemma with partner selection.
#[derive(Parser, Debug)]
#[command(name = "moral-ipd", version)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, env = "MORAL_IPD_CONFIG")]
    config: Option<PathBuf>,
    /// Population label, e.g. majority-S or majority-V-Ki.
    #[arg(long, env = "MORAL_IPD_POPULATION")]
    population: Option<String>,
    /// Run all nine populations (enables cross-population normalization).
    #[arg(long)]
    all_populations: bool,
    #[arg(long, env = "MORAL_IPD_EPISODES")]
    episodes: Option<usize>,
    #[arg(long, env = "MORAL_IPD_RUNS")]
    runs: Option<usize>,
    /// Base seed; run k uses seed + k.
    #[arg(long, env = "MORAL_IPD_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "MORAL_IPD_XI")]
    xi: Option<f64>,
    #[arg(long, env = "MORAL_IPD_GAMMA")]
    gamma: Option<f64>,
    #[arg(long, env = "MORAL_IPD_LR")]
    lr: Option<f64>,
    #[arg(long, env = "MORAL_IPD_EPS_SEL")]
    eps_sel: Option<f64>,
    #[arg(long, env = "MORAL_IPD_EPS_DIL")]
    eps_dil: Option<f64>,
    /// Hidden layer width of both networks.
    #[arg(long, env = "MORAL_IPD_HIDDEN")]
    hidden: Option<usize>,
    /// JSON payoff matrix: {"CC":[3,3],"CD":[0,4],"DC":[4,0],"DD":[1,1]}.
    #[arg(long, env = "MORAL_IPD_PAYOFF_MATRIX")]
    payoff_matrix: Option<PathBuf>,
    #[arg(long, env = "MORAL_IPD_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "MORAL_IPD_MA_WINDOW")]
    ma_window: Option<usize>,
    /// Final episodes counted for popularity and selection matrices.
    #[arg(long, env = "MORAL_IPD_POPULARITY_WINDOW")]
    popularity_window: Option<usize>,
    /// full | metrics
    #[arg(long, env = "MORAL_IPD_LOG")]
    log: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "MORAL_IPD_JOBS")]
    jobs: Option<usize>,
    /// intrinsic | extrinsic
    #[arg(long, env = "MORAL_IPD_SELECTION_REWARD")]
    selection_reward: Option<String>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let overrides = Overrides {
        population: cli.population,
        all_populations: cli.all_populations,
        episodes: cli.episodes,
        runs: cli.runs,
        seed: cli.seed,
        xi: cli.xi,
        gamma: cli.gamma,
        lr: cli.lr,
        eps_sel: cli.eps_sel,
        eps_dil: cli.eps_dil,
        hidden: cli.hidden,
        payoff_matrix: cli.payoff_matrix,
        out: cli.out,
        ma_window: cli.ma_window,
        popularity_window: cli.popularity_window,
        log: cli.log,
        jobs: cli.jobs,
        selection_reward: cli.selection_reward,
    };
    let cfg = parse_config(&overrides, cli.config.as_deref())?;
    let report = run_experiment(&cfg).context("experiment failed")?;
    for (label, coop) in &report.final_cooperation {
        println!("{label}\tfinal cooperation {coop:.3}");
    }
    println!("outputs written to {}", report.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
