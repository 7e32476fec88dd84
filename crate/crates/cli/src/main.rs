use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use srm_core::config::{EnvConfig, ExperimentConfig};
use srm_core::experiment::{self, RunOutcome};
use srm_core::selftest::{self, Scale};

#[derive(Parser)]
#[command(name = "srm-rl", version, about = "Static spectral-risk policy learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set agent.lr=1e-4 --set spectrum=cvar:0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, &self.overrides),
            None => ExperimentConfig::from_overrides(&self.overrides),
        };
        cfg.context("invalid configuration")
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train online (or solve a tabular config exactly) and evaluate.
    TrainOnline(ConfigArgs),
    /// Train on the dataset at `dataset.path` and evaluate.
    TrainOffline(ConfigArgs),
    /// Build an offline dataset as described by the `dataset` section.
    GenDataset(ConfigArgs),
    /// Evaluate saved checkpoints without training.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding `checkpoint-seed<k>.json`; defaults to `output_dir`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// CVaR-versus-level curve of saved checkpoints.
    RiskCurve {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
    },
    /// Run the oracle suites.
    Selftest {
        /// Full-size checks, including the long neural runs.
        #[arg(long)]
        full: bool,
    },
    /// Print the effective configuration as JSON.
    ShowConfig(ConfigArgs),
}

fn summarize(out: &RunOutcome) {
    let r = &out.report.report;
    println!("episodes: {} over {} seed(s)", r.episodes(), r.seeds.len());
    println!("mean return: {:.6}", r.mean);
    println!("CVaR_{}: {:.6}", r.alpha, r.cvar);
    if let Some(n) = r.normalized {
        println!("normalized score: {n:.2}");
    }
    if let Some(s) = r.sharpe {
        println!("sharpe: {s:.4}");
    }
    if let Some(d) = r.max_drawdown {
        println!("max drawdown: {d:.4}");
    }
    if let Some(t) = &out.report.tabular {
        if let Some(srm) = t.srm_history.last() {
            println!("exact SRM of the final policy: {srm:.6}");
        }
        println!("initial action probabilities: {:?}", t.initial_action_probs);
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let threads = srm_core::exec::init_thread_pool();
    match cli.command {
        Command::TrainOnline(args) => {
            let cfg = args.load()?;
            let exact = matches!(&cfg.env, EnvConfig::Tabular(t) if t.exact);
            if !exact && cfg.agent.algorithm.is_offline() {
                bail!("agent.algorithm is an offline algorithm; use train-offline");
            }
            eprintln!("{} [{threads} thread(s)]", experiment::describe(&cfg));
            let out = experiment::run_experiment(&cfg)?;
            summarize(&out);
        }
        Command::TrainOffline(args) => {
            let cfg = args.load()?;
            eprintln!("{} on {} [{threads} thread(s)]", experiment::describe(&cfg), cfg.dataset.path.display());
            let out = experiment::run_offline(&cfg)?;
            summarize(&out);
        }
        Command::GenDataset(args) => {
            let cfg = args.load()?;
            let (ds, path) = experiment::generate(&cfg)?;
            let episodes = ds.records.iter().filter(|r| r.t == 0).count();
            println!("wrote {} records ({episodes} episodes) to {}", ds.len(), path.display());
        }
        Command::Evaluate { cfg, checkpoints } => {
            let cfg = cfg.load()?;
            let dir = checkpoints.unwrap_or_else(|| cfg.output_dir.clone());
            let out = experiment::evaluate_checkpoints(&cfg, &dir)?;
            summarize(&out);
        }
        Command::RiskCurve { cfg, checkpoints } => {
            let cfg = cfg.load()?;
            let dir = checkpoints.unwrap_or_else(|| cfg.output_dir.clone());
            let (curve, path) = experiment::risk_curve_from_checkpoints(&cfg, &dir)?;
            print!("{}", srm_core::metrics::risk_curve_csv(&curve));
            println!("wrote {}", path.display());
        }
        Command::Selftest { full } => {
            let outcomes = selftest::run(if full { Scale::Full } else { Scale::Quick });
            for o in &outcomes {
                println!("{}", o.line());
            }
            return Ok(outcomes.iter().all(|o| o.passed()));
        }
        Command::ShowConfig(args) => {
            println!("{}", args.load()?.to_json_string()?);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
