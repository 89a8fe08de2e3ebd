//! Training driver: early-stopped episodes on the training split, greedy
//! evaluation on the held-out splits, a greedy feasibility oracle, the
//! hidden-layer/width sweep, and CSV/JSON export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{Agent, EpsilonSchedule, Hyperparameters};
use crate::env::{SlicingEnv, Split};
use crate::error::{io_err, Error, Result};
use crate::profiles::{generate_default_profiles, ProfileGenConfig, ProfileSet};
use crate::qnet::NetSpec;
use crate::topology::{NodeId, Topology};

pub const EPISODES_FILE: &str = "episodes.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKPOINT_FILE: &str = "agent.json";
pub const CONFIG_FILE: &str = "config.txt";

const EPISODES_HEADER: &str = "episode,train_reward,moving_avg,epsilon,mean_throughput_gbps";
const SWEEP_HEADER: &str = "hidden_layers,hidden_width,training_episodes,last_episode_reward,average_episode_reward,validation_reward,testing_reward,full_day_reward";

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    /// Default generator with this seed.
    Generated { seed: u64 },
    /// `slices.csv` and `loads.csv` in a directory.
    Csv { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_bs: usize,
    pub wired_mbps: f64,
    pub wireless_mbps: f64,
    pub profiles: ProfileSource,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub hyperparameters: Hyperparameters,
    pub window: usize,
    pub fraction: f64,
    pub max_episodes: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub sweep_layers: Vec<usize>,
    pub sweep_widths: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_bs: 7,
            wired_mbps: 1000.0,
            wireless_mbps: 1000.0,
            profiles: ProfileSource::Generated {
                seed: ProfileGenConfig::default().seed,
            },
            hidden_layers: 1,
            hidden_width: 32,
            hyperparameters: Hyperparameters::default(),
            window: 10,
            fraction: 0.975,
            max_episodes: 200,
            seed: 1,
            out_dir: None,
            sweep_layers: vec![1, 3, 5],
            sweep_widths: vec![8, 16, 24, 32, 40, 48],
        }
    }
}

fn cfg_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',')
        .map(|x| x.trim().parse::<usize>().map_err(|_| format!("bad list item {x:?}")))
        .collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!("fraction must be in (0, 1], got {}", self.fraction)));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.sweep_layers.is_empty() || self.sweep_widths.is_empty() {
            return Err(Error::Config("sweep grid must not be empty".into()));
        }
        self.hyperparameters.validate()?;
        NetSpec::new(1, self.hidden_layers, self.hidden_width)?;
        Ok(())
    }

    /// Parses the flat `key = value` format. `#` starts a comment; unknown
    /// keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut profile_seed = None;
        let mut profiles_dir = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| cfg_err(line, format!("expected key = value, got {body:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| cfg_err(line, format!("{key}: {e}"));
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| bad(&e))?
                };
            }
            let hp = &mut cfg.hyperparameters;
            match key {
                "n_bs" => cfg.n_bs = num!(),
                "wired_mbps" => cfg.wired_mbps = num!(),
                "wireless_mbps" => cfg.wireless_mbps = num!(),
                "profile_seed" => profile_seed = Some(num!()),
                "profiles_dir" => profiles_dir = Some(PathBuf::from(value)),
                "hidden_layers" => cfg.hidden_layers = num!(),
                "hidden_width" => cfg.hidden_width = num!(),
                "alpha" => hp.alpha = num!(),
                "gamma" => hp.gamma = num!(),
                "epsilon_init" => hp.epsilon_init = num!(),
                "epsilon_decay" => hp.epsilon_decay = num!(),
                "epsilon_min" => hp.epsilon_min = num!(),
                "epsilon_schedule" => {
                    hp.epsilon_schedule = match value {
                        "per_step" => EpsilonSchedule::PerStep,
                        "per_episode" => EpsilonSchedule::PerEpisode,
                        _ => return Err(bad(&"expected per_step or per_episode")),
                    }
                }
                "minibatch_size" => hp.minibatch_size = num!(),
                "buffer_size" => hp.buffer_size = num!(),
                "target_sync" => hp.target_sync = num!(),
                "target_smooth" => hp.target_smooth = num!(),
                "persist_replay" => hp.persist_replay = num!(),
                "clip_norm" => {
                    hp.clip_norm = if value == "none" { None } else { Some(num!()) }
                }
                "window" => cfg.window = num!(),
                "fraction" => cfg.fraction = num!(),
                "max_episodes" => cfg.max_episodes = num!(),
                "seed" => cfg.seed = num!(),
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                "sweep_layers" => cfg.sweep_layers = parse_list(value).map_err(|e| bad(&e))?,
                "sweep_widths" => cfg.sweep_widths = parse_list(value).map_err(|e| bad(&e))?,
                _ => return Err(cfg_err(line, format!("unknown key {key:?}"))),
            }
        }
        cfg.profiles = match (profiles_dir, profile_seed) {
            (Some(_), Some(_)) => {
                return Err(Error::Config("profile_seed and profiles_dir are exclusive".into()))
            }
            (Some(dir), None) => ProfileSource::Csv { dir },
            (None, Some(seed)) => ProfileSource::Generated { seed },
            (None, None) => cfg.profiles,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }

    /// Inverse of [`RunConfig::parse`].
    pub fn to_config_string(&self) -> String {
        let hp = &self.hyperparameters;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("n_bs", self.n_bs.to_string());
        kv("wired_mbps", self.wired_mbps.to_string());
        kv("wireless_mbps", self.wireless_mbps.to_string());
        match &self.profiles {
            ProfileSource::Generated { seed } => kv("profile_seed", seed.to_string()),
            ProfileSource::Csv { dir } => kv("profiles_dir", dir.display().to_string()),
        }
        kv("hidden_layers", self.hidden_layers.to_string());
        kv("hidden_width", self.hidden_width.to_string());
        kv("alpha", hp.alpha.to_string());
        kv("gamma", hp.gamma.to_string());
        kv("epsilon_init", hp.epsilon_init.to_string());
        kv("epsilon_decay", hp.epsilon_decay.to_string());
        kv("epsilon_min", hp.epsilon_min.to_string());
        kv(
            "epsilon_schedule",
            match hp.epsilon_schedule {
                EpsilonSchedule::PerStep => "per_step",
                EpsilonSchedule::PerEpisode => "per_episode",
            }
            .into(),
        );
        kv("minibatch_size", hp.minibatch_size.to_string());
        kv("buffer_size", hp.buffer_size.to_string());
        kv("target_sync", hp.target_sync.to_string());
        kv("target_smooth", hp.target_smooth.to_string());
        kv("persist_replay", hp.persist_replay.to_string());
        kv("clip_norm", hp.clip_norm.map_or("none".into(), |c| c.to_string()));
        kv("window", self.window.to_string());
        kv("fraction", self.fraction.to_string());
        kv("max_episodes", self.max_episodes.to_string());
        kv("seed", self.seed.to_string());
        if let Some(out) = &self.out_dir {
            kv("out_dir", out.display().to_string());
        }
        kv("sweep_layers", list(&self.sweep_layers));
        kv("sweep_widths", list(&self.sweep_widths));
        s
    }

    pub fn load_profiles(&self) -> Result<ProfileSet> {
        match &self.profiles {
            ProfileSource::Generated { seed } => generate_default_profiles(&ProfileGenConfig {
                n_bs: self.n_bs,
                capacity_mbps: self.wired_mbps,
                seed: *seed,
                ..ProfileGenConfig::default()
            }),
            ProfileSource::Csv { dir } => ProfileSet::load_csv(dir, self.n_bs),
        }
    }

    pub fn build_env(&self) -> Result<SlicingEnv> {
        let topo = Topology::build(self.n_bs, self.wired_mbps, self.wireless_mbps)?;
        SlicingEnv::new(topo, Arc::new(self.load_profiles()?))
    }

    /// Early-stop threshold: `fraction` of the best possible training reward.
    pub fn threshold(&self, env: &SlicingEnv) -> f64 {
        self.fraction * env.max_episode_reward(Split::Train) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub train_reward: f64,
    pub moving_avg: f64,
    pub epsilon: f64,
    /// Mean over the episode's intervals of DL+UL carried for all slices.
    pub mean_throughput_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub threshold: f64,
    pub converged: bool,
    /// Episode at which the moving average first reached the threshold.
    pub episodes_to_target: Option<usize>,
    pub episodes_run: usize,
    pub last_episode_reward: Option<f64>,
    /// Moving average over the final window.
    pub average_episode_reward: Option<f64>,
    pub validation_reward: usize,
    pub test_reward: usize,
    pub full_day_reward: usize,
    pub max_rewards: SplitMaxima,
    pub mean_demand_gbps: f64,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMaxima {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub full_day: usize,
}

impl SplitMaxima {
    pub fn of(env: &SlicingEnv) -> Self {
        Self {
            train: env.max_episode_reward(Split::Train),
            validation: env.max_episode_reward(Split::Validation),
            test: env.max_episode_reward(Split::Test),
            full_day: env.max_episode_reward(Split::FullDay),
        }
    }
}

pub struct TrainingRun {
    pub report: TrainingReport,
    pub agent: Agent,
}

fn moving_average(rewards: &[f64], window: usize) -> f64 {
    let tail = &rewards[rewards.len().saturating_sub(window)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Trains a fresh agent until the moving average of training rewards over
/// `window` episodes reaches the threshold, or `max_episodes` have run.
/// The stop test only arms once a full window exists. Writes outputs when
/// `out_dir` is set.
pub fn run_training(cfg: &RunConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let mut env = cfg.build_env()?;
    let n = env.n_choices();
    let spec = NetSpec::critic(env.observation_len(), n, cfg.hidden_layers, cfg.hidden_width)?;
    let mut agent = Agent::new(spec, n, cfg.hyperparameters.clone(), cfg.seed)?;
    let threshold = cfg.threshold(&env);
    let train_intervals = Split::Train.intervals(env.profiles().n_intervals()).len().max(1);

    let mut rewards = Vec::new();
    let mut episodes = Vec::new();
    let mut episodes_to_target = None;
    for episode in 1..=cfg.max_episodes {
        env.reset(Split::Train);
        let mut reward = 0.0;
        let mut carried = 0.0;
        while !env.is_done() {
            let out = agent.interact(&mut env)?;
            reward += out.reward;
            carried += out.allocated.dl + out.allocated.ul;
        }
        agent.end_episode();
        rewards.push(reward);
        let avg = moving_average(&rewards, cfg.window);
        episodes.push(EpisodeRecord {
            episode,
            train_reward: reward,
            moving_avg: avg,
            epsilon: agent.epsilon(),
            mean_throughput_gbps: carried / train_intervals as f64 / 1000.0,
        });
        if rewards.len() >= cfg.window && avg >= threshold {
            episodes_to_target = Some(episode);
            break;
        }
    }

    let report = TrainingReport {
        hidden_layers: cfg.hidden_layers,
        hidden_width: cfg.hidden_width,
        seed: cfg.seed,
        threshold,
        converged: episodes_to_target.is_some(),
        episodes_to_target,
        episodes_run: episodes.len(),
        last_episode_reward: rewards.last().copied(),
        average_episode_reward: (!rewards.is_empty()).then(|| moving_average(&rewards, cfg.window)),
        validation_reward: evaluate(&agent, &env, Split::Validation)?,
        test_reward: evaluate(&agent, &env, Split::Test)?,
        full_day_reward: evaluate(&agent, &env, Split::FullDay)?,
        max_rewards: SplitMaxima::of(&env),
        mean_demand_gbps: env.profiles().mean_aggregate_mbps() / 1000.0,
        episodes,
    };
    if let Some(dir) = &cfg.out_dir {
        export_outputs(&report, Some(&agent), Some(cfg), dir)?;
    }
    Ok(TrainingRun { report, agent })
}

/// Greedy rollout over `split` with exploration and learning off. Neither
/// the agent nor `env` is modified.
pub fn evaluate(agent: &Agent, env: &SlicingEnv, split: Split) -> Result<usize> {
    let mut env = env.clone();
    let mut obs = env.reset(split);
    let mut total = 0;
    while !env.is_done() {
        let a = agent.greedy_action(&obs)?;
        let out = env.step_choice(a)?;
        total += out.reward as usize;
        obs = out.observation;
    }
    Ok(total)
}

/// Donor preference of the oracle: BS1's wired link first, then donors by
/// how little of their bottleneck residual the demand would use.
fn oracle_order(env: &SlicingEnv) -> Vec<NodeId> {
    let demand = env.current_demand();
    let topo = env.topology();
    let usage = |k: NodeId| {
        let r = topo.path_residual(k).expect("valid BS");
        let frac = |d: f64, r: f64| if d == 0.0 { 0.0 } else if r == 0.0 { f64::INFINITY } else { d / r };
        frac(demand.dl, r.dl).max(frac(demand.ul, r.ul))
    };
    let mut donors: Vec<NodeId> = (2..=env.n_choices()).collect();
    donors.sort_by(|&a, &b| usage(a).total_cmp(&usage(b)).then(a.cmp(&b)));
    let mut order = vec![1];
    order.extend(donors);
    order
}

/// Greedy feasibility oracle: at every step take the first feasible choice
/// in [`oracle_order`]; count the steps that could be served.
pub fn oracle_max_reward(env: &SlicingEnv, split: Split) -> Result<usize> {
    let mut env = env.clone();
    env.reset(split);
    let mut total = 0;
    while !env.is_done() {
        let feasible = env.feasible_choices()?;
        let pick = oracle_order(&env)
            .into_iter()
            .find(|k| feasible.contains(k))
            .unwrap_or(1);
        total += env.step_choice(pick - 1)?.reward as usize;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub training_episodes: Option<usize>,
    pub last_episode_reward: Option<f64>,
    pub average_episode_reward: Option<f64>,
    pub validation_reward: Option<usize>,
    pub testing_reward: Option<usize>,
    pub full_day_reward: Option<usize>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn converged(&self) -> bool {
        self.training_episodes.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Seed of one sweep cell, derived from the root seed and the cell shape.
pub fn cell_seed(root: u64, layers: usize, width: usize) -> u64 {
    // splitmix64 finalizer over the mixed key
    let mut z = root ^ ((layers as u64) << 32 | width as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d1_49bb_133b_11eb);
    z ^ (z >> 31)
}

/// Trains one agent per `(layers, width)` cell of the configured grid.
/// Cells run in parallel, each with its own seed and output subdirectory;
/// a failing cell is recorded and the sweep continues.
pub fn run_sweep(cfg: &RunConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .sweep_layers
        .iter()
        .flat_map(|&l| cfg.sweep_widths.iter().map(move |&w| (l, w)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(layers, width)| {
            let seed = cell_seed(cfg.seed, layers, width);
            let cell = RunConfig {
                hidden_layers: layers,
                hidden_width: width,
                seed,
                out_dir: cfg.out_dir.as_ref().map(|d| d.join(format!("L{layers}_W{width}"))),
                ..cfg.clone()
            };
            match run_training(&cell) {
                Ok(run) => {
                    let r = run.report;
                    SweepRow {
                        hidden_layers: layers,
                        hidden_width: width,
                        seed,
                        training_episodes: r.episodes_to_target,
                        last_episode_reward: r.last_episode_reward,
                        average_episode_reward: r.average_episode_reward,
                        validation_reward: Some(r.validation_reward),
                        testing_reward: Some(r.test_reward),
                        full_day_reward: Some(r.full_day_reward),
                        error: None,
                    }
                }
                Err(e) => SweepRow {
                    hidden_layers: layers,
                    hidden_width: width,
                    seed,
                    training_episodes: None,
                    last_episode_reward: None,
                    average_episode_reward: None,
                    validation_reward: None,
                    testing_reward: None,
                    full_day_reward: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let result = SweepResult { rows };
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(SWEEP_FILE);
        fs::write(&path, sweep_csv(&result)).map_err(io_err(&path))?;
    }
    Ok(result)
}

/// Table with one row per cell; cells that never reached the threshold
/// show `DNC` in the episode column, failed cells show `DNC` everywhere.
pub fn sweep_csv(result: &SweepResult) -> String {
    fn cell<T: ToString>(v: Option<T>) -> String {
        v.map_or_else(|| "DNC".to_string(), |x| x.to_string())
    }
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in &result.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.hidden_layers,
            r.hidden_width,
            cell(r.training_episodes),
            cell(r.last_episode_reward),
            cell(r.average_episode_reward.map(|a| format!("{a:.1}"))),
            cell(r.validation_reward),
            cell(r.testing_reward),
            cell(r.full_day_reward),
        );
    }
    s
}

pub fn episodes_csv(records: &[EpisodeRecord]) -> String {
    let mut s = String::from(EPISODES_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.episode, r.train_reward, r.moving_avg, r.epsilon, r.mean_throughput_gbps
        );
    }
    s
}

pub fn parse_episodes_csv(text: &str) -> Result<Vec<EpisodeRecord>> {
    let path = PathBuf::from(EPISODES_FILE);
    let mut lines = text.lines();
    if lines.next() != Some(EPISODES_HEADER) {
        return Err(Error::Parse {
            path,
            line: 1,
            message: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let err = |m: &str| Error::Parse {
                path: path.clone(),
                line: i as u64 + 2,
                message: m.into(),
            };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err("bad number"));
            Ok(EpisodeRecord {
                episode: f[0].parse().map_err(|_| err("bad episode index"))?,
                train_reward: num(f[1])?,
                moving_avg: num(f[2])?,
                epsilon: num(f[3])?,
                mean_throughput_gbps: num(f[4])?,
            })
        })
        .collect()
}

/// Writes `episodes.csv`, `report.json`, and, when given, the agent
/// checkpoint and the effective config. Returns the written paths.
pub fn export_outputs(
    report: &TrainingReport,
    agent: Option<&Agent>,
    cfg: Option<&RunConfig>,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut write = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    write(EPISODES_FILE, episodes_csv(&report.episodes))?;
    write(
        REPORT_FILE,
        serde_json::to_string_pretty(report).expect("report serializes") + "\n",
    )?;
    if let Some(cfg) = cfg {
        write(CONFIG_FILE, cfg.to_config_string())?;
    }
    if let Some(agent) = agent {
        let path = dir.join(CHECKPOINT_FILE);
        agent.save(&path)?;
        written.push(path);
    }
    Ok(written)
}
