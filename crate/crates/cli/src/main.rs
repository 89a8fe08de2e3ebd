use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use iab_core::harness::{self, RunConfig};
use iab_core::profiles::{generate_default_profiles, ProfileGenConfig, ProfileSet};
use iab_core::{Agent, SlicingEnv, Split, Topology};

#[derive(Parser)]
#[command(name = "iab", version, about = "IAB network slicing with a double DQN")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write synthetic slice and load profiles as CSV.
    GenProfiles {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one agent with early stopping.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy reward of a saved agent on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Profile CSV directory; the default generator when absent.
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value_t = 1000.0)]
        capacity: f64,
    },
    /// Train over the hidden layer/width grid.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum servable requests on one split.
    Oracle {
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        split: Split,
        #[arg(long, default_value_t = 1000.0)]
        capacity: f64,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn env_for(profiles: Option<&PathBuf>, n_bs: usize, capacity: f64) -> Result<SlicingEnv> {
    let set = match profiles {
        Some(dir) => ProfileSet::load_csv(dir, n_bs)?,
        None => generate_default_profiles(&ProfileGenConfig {
            n_bs,
            capacity_mbps: capacity,
            ..ProfileGenConfig::default()
        })?,
    };
    Ok(SlicingEnv::new(
        Topology::build(n_bs, capacity, capacity)?,
        Arc::new(set),
    )?)
}

fn dnc<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "DNC".into(), |x| x.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenProfiles { seed, out } => {
            let set = generate_default_profiles(&ProfileGenConfig {
                seed,
                ..ProfileGenConfig::default()
            })?;
            set.save_csv(&out)?;
            println!(
                "wrote {} (mean demand {:.3} Gbps)",
                out.display(),
                set.mean_aggregate_mbps() / 1000.0
            );
        }
        Cmd::Train { config, seed, out } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            let r = harness::run_training(&cfg)?.report;
            println!(
                "episodes {} last {} avg {} val {}/{} test {}/{} full {}/{}",
                dnc(r.episodes_to_target),
                dnc(r.last_episode_reward),
                dnc(r.average_episode_reward.map(|a| format!("{a:.1}"))),
                r.validation_reward,
                r.max_rewards.validation,
                r.test_reward,
                r.max_rewards.test,
                r.full_day_reward,
                r.max_rewards.full_day,
            );
        }
        Cmd::Eval {
            checkpoint,
            split,
            profiles,
            capacity,
        } => {
            let agent = Agent::load(&checkpoint)?;
            let env = env_for(profiles.as_ref(), 7, capacity)?;
            let reward = harness::evaluate(&agent, &env, split)?;
            println!("{} {}/{}", split.name(), reward, env.max_episode_reward(split));
        }
        Cmd::Sweep { config, out } => {
            let mut cfg = load_config(config.as_ref())?;
            if out.is_some() {
                cfg.out_dir = out;
            }
            let result = harness::run_sweep(&cfg)?;
            print!("{}", harness::sweep_csv(&result));
            for row in result.rows.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "cell {}x{} failed: {}",
                    row.hidden_layers,
                    row.hidden_width,
                    row.error.as_deref().unwrap_or_default()
                );
            }
        }
        Cmd::Oracle {
            profiles,
            split,
            capacity,
        } => {
            let env = env_for(profiles.as_ref(), 7, capacity)?;
            let best = harness::oracle_max_reward(&env, split)?;
            println!("{} {}/{}", split.name(), best, env.max_episode_reward(split));
        }
    }
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
