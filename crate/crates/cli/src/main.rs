use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ipwsgd::env::load_replay_log;
use ipwsgd::experiment::{
    run_monte_carlo, run_replay, run_single, tune_alpha, write_monte_carlo, write_single,
    write_tune, ConfigLayer, ExperimentConfig, ListValue,
};
use ipwsgd::model::{Family, HessianVariant};
use ipwsgd::report::OutputFormat;

#[derive(Parser)]
#[command(
    name = "ipwsgd",
    version,
    about = "Online epsilon-greedy decision experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One stream with inference reports at each checkpoint
    Run(Settings),
    /// Monte Carlo replications summarized by SE/SD ratio, coverage and CI length
    Mc(Settings),
    /// Compare learning rates by their binned loss trajectories
    TuneAlpha(Settings),
    /// Evaluate the policy offline against a logged randomized trial
    Replay(Settings),
}

#[derive(Args, Clone, Default)]
struct Settings {
    /// Flat TOML file with any of the settings below
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    model: Option<Family>,
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated true parameters, action 0 block first
    #[arg(long, allow_hyphen_values = true)]
    beta0: Option<String>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// fixed:F or decay:EXP,FLOOR
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated update counts
    #[arg(long)]
    checkpoints: Option<String>,
    #[arg(long, value_parser = parse_hessian)]
    hessian: Option<HessianVariant>,
    /// Also report the augmented IPW value (experimental)
    #[arg(long)]
    aipw: bool,
    /// Fall back to a small ridge when the plugin Hessian is singular
    #[arg(long)]
    ridge: bool,
    /// Leave burn-in steps out of the value estimate
    #[arg(long)]
    exclude_burn_in_value: bool,
    /// Confidence level of the Wald intervals
    #[arg(long)]
    level: Option<f64>,
    /// Reward delay: const:S or geom:P
    #[arg(long)]
    lag: Option<String>,
    #[arg(long)]
    replay_log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
    /// Comma-separated learning rates for tune-alpha
    #[arg(long)]
    alpha_grid: Option<String>,
    /// Updates per loss bin
    #[arg(long)]
    loss_bin: Option<usize>,
    /// Write a per-step trace.csv (run only)
    #[arg(long)]
    trace: bool,
    /// Monte Carlo draws for the oracle value
    #[arg(long)]
    oracle_draws: Option<usize>,
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: ipwsgd::Error| e.to_string())
}

fn parse_hessian(s: &str) -> std::result::Result<HessianVariant, String> {
    s.parse().map_err(|e: ipwsgd::Error| e.to_string())
}

fn parse_format(s: &str) -> std::result::Result<OutputFormat, String> {
    s.parse().map_err(|e: ipwsgd::Error| e.to_string())
}

impl Settings {
    fn layer(&self) -> Result<ConfigLayer> {
        let mut layer = match &self.config {
            Some(path) => ConfigLayer::from_file(path)?,
            None => ConfigLayer::default(),
        };
        let flag = |b: bool| b.then_some(true);
        layer.merge(&ConfigLayer {
            model: self.model,
            p: self.p,
            beta0: self.beta0.clone().map(ListValue::Text),
            sigma2: self.sigma2,
            alpha: self.alpha,
            gamma: self.gamma,
            eps: self.eps.clone(),
            burn_in: self.burn_in,
            horizon: self.horizon,
            reps: self.reps,
            seed: self.seed,
            checkpoints: self.checkpoints.clone().map(ListValue::Text),
            hessian: self.hessian,
            aipw: flag(self.aipw),
            ridge: flag(self.ridge),
            value_burn_in: self.exclude_burn_in_value.then_some(false),
            level: self.level,
            lag: self.lag.clone(),
            replay_log: self.replay_log.clone(),
            out: self.out.clone(),
            format: self.format,
            alpha_grid: self.alpha_grid.clone().map(ListValue::Text),
            loss_bin: self.loss_bin,
            trace: flag(self.trace),
            oracle_draws: self.oracle_draws,
        });
        Ok(layer)
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(s) => {
            let cfg = ExperimentConfig::resolve(&s.layer()?)?;
            let run = run_single(&cfg).context("run failed")?;
            for rep in &run.reports {
                for flag in &rep.flags {
                    eprintln!("t={}: {flag}", rep.t);
                }
            }
            print_paths(&write_single(&cfg, &run)?);
        }
        Command::Mc(s) => {
            let cfg = ExperimentConfig::resolve(&s.layer()?)?;
            let summary = run_monte_carlo(&cfg).context("Monte Carlo failed")?;
            for note in &summary.notes {
                eprintln!("{note}");
            }
            print_paths(&[write_monte_carlo(&cfg, &summary)?]);
        }
        Command::TuneAlpha(s) => {
            let cfg = ExperimentConfig::resolve(&s.layer()?)?;
            let result = tune_alpha(&cfg).context("tuning failed")?;
            print_paths(&write_tune(&cfg, &result)?);
            println!("best alpha {}", result.best_alpha);
        }
        Command::Replay(s) => {
            let mut layer = s.layer()?;
            let Some(path) = layer.replay_log.clone() else {
                bail!("replay needs --replay-log PATH");
            };
            let log = load_replay_log(&path)?;
            if layer.horizon.is_none() {
                layer.horizon = Some(log.len().max(1));
            }
            if layer.p.is_none() && layer.beta0.is_none() {
                layer.p = Some(log.dim());
                layer.beta0 = Some(ListValue::Items(vec![0.0; 2 * log.dim()]));
            }
            let cfg = ExperimentConfig::resolve(&layer)?;
            let run = run_replay(&cfg, &log).context("replay failed")?;
            println!(
                "matched {} of {} entries",
                run.summary.steps,
                run.summary.steps + run.summary.skipped
            );
            print_paths(&write_single(&cfg, &run)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
