//! Double DQN agent: epsilon-greedy acting, uniform experience replay, and
//! targets that pick the next action with the online network but score it
//! with a target network. Every `target_sync` steps the target is pulled
//! toward the online weights by `target_smooth` (1 copies them outright).

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation, SlicingEnv, StepOutcome};
use crate::error::{domain, io_err, Error, Result};
use crate::qnet::{NetSpec, OptimizerConfig, QNetwork};

pub const CHECKPOINT_FORMAT: &str = "iab-ddqn-agent";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSchedule {
    /// Decay once per environment step.
    PerStep,
    /// Decay once per finished episode.
    PerEpisode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_init: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub epsilon_schedule: EpsilonSchedule,
    pub minibatch_size: usize,
    pub buffer_size: usize,
    /// Environment steps between target network refreshes.
    pub target_sync: u64,
    /// Share of the online parameters blended into the target at each
    /// refresh; 1 copies outright.
    pub target_smooth: f64,
    /// Keep replay contents between episodes.
    pub persist_replay: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    pub clip_norm: Option<f64>,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            gamma: 0.99,
            epsilon_init: 0.99,
            epsilon_decay: 0.01,
            epsilon_min: 0.01,
            epsilon_schedule: EpsilonSchedule::PerStep,
            minibatch_size: 64,
            buffer_size: 10_000,
            target_sync: 4,
            target_smooth: 1e-3,
            persist_replay: true,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            clip_norm: None,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.gamma) || !unit(self.epsilon_init) || !unit(self.epsilon_min) || !unit(self.epsilon_decay) {
            return Err(domain("gamma, epsilon_init, epsilon_min and epsilon_decay must lie in [0, 1]"));
        }
        if self.minibatch_size == 0 || self.minibatch_size > self.buffer_size {
            return Err(domain(format!(
                "minibatch size {} must be in 1..={}",
                self.minibatch_size, self.buffer_size
            )));
        }
        if self.target_sync == 0 {
            return Err(domain("target_sync must be at least 1"));
        }
        if !(self.target_smooth > 0.0 && self.target_smooth <= 1.0) {
            return Err(domain("target_smooth must be in (0, 1]"));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_hat: self.eps_hat,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_state: Observation,
    pub terminal: bool,
}

/// Bounded FIFO of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total pushes since creation, including evicted ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `m` distinct transitions drawn uniformly.
    pub fn sample<R: Rng>(&self, rng: &mut R, m: usize) -> Vec<&Transition> {
        index::sample(rng, self.items.len(), m)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Learning targets together with the action the online network chose for
/// each non-terminal next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub values: Vec<f64>,
    pub online_argmax: Vec<Option<usize>>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    online: QNetwork,
    target: QNetwork,
    buffer: ReplayBuffer,
    hp: Hyperparameters,
    n_actions: usize,
    epsilon: f64,
    step_counter: u64,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(spec: NetSpec, n_actions: usize, hp: Hyperparameters, seed: u64) -> Result<Self> {
        hp.validate()?;
        if n_actions == 0 || n_actions >= spec.input_size {
            return Err(domain(format!(
                "{n_actions} actions do not fit a {}-input critic",
                spec.input_size
            )));
        }
        let online = QNetwork::init(spec, seed)?;
        let target = online.clone();
        Ok(Self {
            online,
            target,
            buffer: ReplayBuffer::new(hp.buffer_size),
            epsilon: hp.epsilon_init,
            hp,
            n_actions,
            step_counter: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a9e7_0000_0001),
        })
    }

    pub fn online(&self) -> &QNetwork {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut QNetwork {
        &mut self.online
    }

    pub fn target(&self) -> &QNetwork {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut QNetwork {
        &mut self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hp
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        self.online.q_all_actions(obs.as_slice(), self.n_actions)
    }

    /// Argmax of the online network; does not touch the rng.
    pub fn greedy_action(&self, obs: &Observation) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    pub fn select_action(&mut self, obs: &Observation, greedy: bool) -> Result<usize> {
        if greedy {
            return self.greedy_action(obs);
        }
        if self.rng.random::<f64>() < self.epsilon {
            Ok(self.rng.random_range(0..self.n_actions))
        } else {
            self.greedy_action(obs)
        }
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon = (self.epsilon * (1.0 - self.hp.epsilon_decay)).max(self.hp.epsilon_min);
    }

    pub fn compute_targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        Ok(self.compute_targets_detailed(batch)?.values)
    }

    /// `y = r` for terminal transitions, otherwise
    /// `y = r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
    pub fn compute_targets_detailed(&self, batch: &[&Transition]) -> Result<Targets> {
        if batch.is_empty() {
            return Err(domain("empty batch"));
        }
        let mut values = Vec::with_capacity(batch.len());
        let mut online_argmax = Vec::with_capacity(batch.len());
        for t in batch {
            if t.terminal {
                values.push(t.reward);
                online_argmax.push(None);
                continue;
            }
            let next = t.next_state.as_slice();
            let a_star = argmax(&self.online.q_all_actions(next, self.n_actions)?);
            let q_next = self.target.q_all_actions(next, self.n_actions)?[a_star];
            values.push(t.reward + self.hp.gamma * q_next);
            online_argmax.push(Some(a_star));
        }
        Ok(Targets {
            values,
            online_argmax,
        })
    }

    fn critic_input(&self, obs: &Observation, action: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(obs.len() + self.n_actions);
        x.extend_from_slice(obs.as_slice());
        x.extend((0..self.n_actions).map(|k| if k == action { 1.0 } else { 0.0 }));
        x
    }

    /// One minibatch update once the buffer holds at least a minibatch,
    /// followed by the periodic target refresh. Returns the loss when an
    /// update ran.
    pub fn learn_step(&mut self) -> Result<Option<f64>> {
        let mut loss = None;
        let m = self.hp.minibatch_size;
        if self.buffer.len() >= m {
            let batch = self.buffer.sample(&mut self.rng, m);
            let targets = self.compute_targets(&batch)?;
            let samples: Vec<(Vec<f64>, f64)> = batch
                .iter()
                .zip(targets)
                .map(|(t, y)| (self.critic_input(&t.state, t.action), y))
                .collect();
            let (l, grads) = self.online.loss_and_gradients(&samples)?;
            self.online.adam_step(&grads, &self.hp.optimizer())?;
            loss = Some(l);
        }
        if self.step_counter > 0 && self.step_counter.is_multiple_of(self.hp.target_sync) {
            self.target
                .blend_parameters_from(&self.online, self.hp.target_smooth)?;
        }
        Ok(loss)
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// Acts once in `env` with exploration, stores the transition and learns.
    pub fn interact(&mut self, env: &mut SlicingEnv) -> Result<StepOutcome> {
        let state = env.observe()?;
        let action = self.select_action(&state, false)?;
        let outcome = env.step(&Action::one_hot(action, self.n_actions)?)?;
        self.buffer.push(Transition {
            state,
            action,
            reward: outcome.reward,
            next_state: outcome.observation.clone(),
            terminal: outcome.done,
        });
        self.step_counter += 1;
        if self.hp.epsilon_schedule == EpsilonSchedule::PerStep {
            self.decay_epsilon();
        }
        self.learn_step()?;
        Ok(outcome)
    }

    /// Episode bookkeeping: per-episode decay and optional replay reset.
    pub fn end_episode(&mut self) {
        if self.hp.epsilon_schedule == EpsilonSchedule::PerEpisode {
            self.decay_epsilon();
        }
        if !self.hp.persist_replay {
            self.buffer.clear();
        }
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            n_actions: self.n_actions,
            hyperparameters: self.hp.clone(),
            epsilon: self.epsilon,
            step_counter: self.step_counter,
            rng_seed: self.rng.get_seed(),
            rng_word_pos: self.rng.get_word_pos().to_string(),
            online: self.online.clone(),
            target: self.target.clone(),
        }
    }

    /// Restores networks, schedule position and rng; the replay buffer
    /// starts empty.
    pub fn from_checkpoint(c: AgentCheckpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(domain(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        c.hyperparameters.validate()?;
        if c.online.spec() != c.target.spec() {
            return Err(domain("online and target networks differ in shape"));
        }
        let mut rng = ChaCha8Rng::from_seed(c.rng_seed);
        rng.set_word_pos(
            c.rng_word_pos
                .parse()
                .map_err(|_| domain("bad rng position in checkpoint"))?,
        );
        Ok(Self {
            buffer: ReplayBuffer::new(c.hyperparameters.buffer_size),
            online: c.online,
            target: c.target,
            hp: c.hyperparameters,
            n_actions: c.n_actions,
            epsilon: c.epsilon,
            step_counter: c.step_counter,
            rng,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.checkpoint()).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let c: AgentCheckpoint = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_checkpoint(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub n_actions: usize,
    pub hyperparameters: Hyperparameters,
    pub epsilon: f64,
    pub step_counter: u64,
    pub rng_seed: [u8; 32],
    pub rng_word_pos: String,
    pub online: QNetwork,
    pub target: QNetwork,
}
