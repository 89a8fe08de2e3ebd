//! Discrete-action environment over one day of BS1 slice demands.
//!
//! Each interval needs one decision per slice, taken in ascending slice
//! order. A decision picks the backhaul for the slice: BS1's wired link or
//! the wireless path through one donor. Reward is 1 when the whole demand
//! fits in both directions, 0 otherwise (the slice is then left unserved).
//! Allocations last for one interval.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::profiles::ProfileSet;
use crate::topology::{NodeId, Throughput, Topology};

/// Rates are divided by this before entering an observation.
pub const DEFAULT_NORM_MBPS: f64 = 1000.0;

/// Contiguous portion of the day an episode runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    FullDay,
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::FullDay, Split::Train, Split::Validation, Split::Test];

    /// Interval range covered by the split: the first 70% of intervals
    /// (rounded down) train, the next 10% validate, the rest test.
    pub fn intervals(self, n_intervals: usize) -> Range<usize> {
        let train = n_intervals * 7 / 10;
        let val = n_intervals / 10;
        match self {
            Split::FullDay => 0..n_intervals,
            Split::Train => 0..train,
            Split::Validation => train..train + val,
            Split::Test => train + val..n_intervals,
        }
    }

    pub fn steps(self, n_intervals: usize, n_slices: usize) -> Range<usize> {
        let r = self.intervals(n_intervals);
        r.start * n_slices..r.end * n_slices
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::FullDay => "full",
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" | "full_day" => Ok(Split::FullDay),
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            _ => Err(domain(format!("unknown split {s:?} (train|val|test|full)"))),
        }
    }
}

/// One-hot choice over BS1 wired (index 0) and donors BS2..BSN.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Action(Vec<bool>);

impl Action {
    pub fn one_hot(index: usize, n_choices: usize) -> Result<Self> {
        if index >= n_choices {
            return Err(domain(format!("action index {index} >= {n_choices}")));
        }
        let mut v = vec![false; n_choices];
        v[index] = true;
        Ok(Self(v))
    }

    pub fn from_flags(flags: Vec<bool>) -> Result<Self> {
        let set = flags.iter().filter(|&&f| f).count();
        if set != 1 {
            return Err(domain(format!("action must have exactly one TRUE entry, got {set}")));
        }
        Ok(Self(flags))
    }

    pub fn index(&self) -> usize {
        self.0.iter().position(|&f| f).expect("validated one-hot")
    }

    /// Base station the action routes through.
    pub fn choice(&self) -> NodeId {
        self.index() + 1
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `[req_dl, req_ul, free_dl(BS1), free_ul(BS1), ..., free_dl(BSN), free_ul(BSN)]`,
/// all divided by the normalization rate and clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn requirement(&self) -> (f64, f64) {
        (self.0[0], self.0[1])
    }

    /// Normalized free (DL, UL) for choice `k` (1-based BS id).
    pub fn free(&self, k: NodeId) -> (f64, f64) {
        (self.0[2 * k], self.0[2 * k + 1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    /// Throughput actually carried for the decided slice.
    pub allocated: Throughput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicingEnv {
    topology: Topology,
    profiles: Arc<ProfileSet>,
    split: Split,
    step_index: usize,
    done: bool,
    norm_mbps: f64,
}

impl SlicingEnv {
    /// Wraps a topology and a day of profiles. Every donor load in the
    /// profiles must fit its links.
    pub fn new(topology: Topology, profiles: Arc<ProfileSet>) -> Result<Self> {
        if profiles.n_bs() != topology.n_bs() {
            return Err(domain(format!(
                "profiles describe {} BSs, topology has {}",
                profiles.n_bs(),
                topology.n_bs()
            )));
        }
        let mut probe = topology.clone();
        for t in 0..profiles.n_intervals() {
            probe.set_bs_loads(profiles.donor_loads(t)?)?;
        }
        let mut env = Self {
            topology,
            profiles,
            split: Split::FullDay,
            step_index: 0,
            done: false,
            norm_mbps: DEFAULT_NORM_MBPS,
        };
        env.reset(Split::FullDay);
        Ok(env)
    }

    pub fn with_norm(mut self, norm_mbps: f64) -> Result<Self> {
        if !(norm_mbps > 0.0 && norm_mbps.is_finite()) {
            return Err(domain("normalization rate must be positive"));
        }
        self.norm_mbps = norm_mbps;
        Ok(self)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn profiles(&self) -> &ProfileSet {
        &self.profiles
    }

    pub fn n_choices(&self) -> usize {
        self.topology.n_bs()
    }

    pub fn observation_len(&self) -> usize {
        2 + 2 * self.n_choices()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn current_interval(&self) -> usize {
        self.step_index / self.profiles.n_slices()
    }

    pub fn current_slice(&self) -> usize {
        self.step_index % self.profiles.n_slices() + 1
    }

    pub fn current_demand(&self) -> Throughput {
        self.profiles
            .slice_demand(self.current_interval(), self.current_slice())
            .expect("step index stays within the profile table")
    }

    pub fn split_steps(&self, split: Split) -> Range<usize> {
        split.steps(self.profiles.n_intervals(), self.profiles.n_slices())
    }

    /// Upper bound on episode reward: one per step of the split.
    pub fn max_episode_reward(&self, split: Split) -> usize {
        self.split_steps(split).len()
    }

    pub fn reset(&mut self, split: Split) -> Observation {
        self.split = split;
        let steps = self.split_steps(split);
        self.step_index = steps.start;
        self.done = steps.is_empty();
        self.enter_interval();
        self.build_observation(self.demand_or_zero())
    }

    fn demand_or_zero(&self) -> Throughput {
        if self.done {
            Throughput::ZERO
        } else {
            self.current_demand()
        }
    }

    fn enter_interval(&mut self) {
        self.topology.release_interval();
        if self.done {
            return;
        }
        let loads = self
            .profiles
            .donor_loads(self.current_interval())
            .expect("validated at construction");
        self.topology
            .set_bs_loads(loads)
            .expect("validated at construction");
    }

    pub fn observe(&self) -> Result<Observation> {
        if self.done {
            return Err(Error::Usage("episode is over; call reset".into()));
        }
        Ok(self.build_observation(self.current_demand()))
    }

    fn build_observation(&self, demand: Throughput) -> Observation {
        let norm = |v: f64| (v / self.norm_mbps).clamp(0.0, 1.0);
        let mut v = Vec::with_capacity(self.observation_len());
        v.push(norm(demand.dl));
        v.push(norm(demand.ul));
        for k in 1..=self.n_choices() {
            let free = self.topology.path_residual(k).expect("k is a valid BS");
            v.push(norm(free.dl));
            v.push(norm(free.ul));
        }
        Observation(v)
    }

    /// BS ids whose path can carry the current slice. Does not change state.
    pub fn feasible_choices(&self) -> Result<Vec<NodeId>> {
        if self.done {
            return Err(Error::Usage("episode is over; call reset".into()));
        }
        let demand = self.current_demand();
        Ok((1..=self.n_choices())
            .filter(|&k| self.topology.can_allocate(k, demand).expect("valid BS"))
            .collect())
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step after episode end; call reset".into()));
        }
        if action.len() != self.n_choices() {
            return Err(domain(format!(
                "action has {} entries, expected {}",
                action.len(),
                self.n_choices()
            )));
        }
        let demand = self.current_demand();
        let accepted = self
            .topology
            .try_allocate(
                self.current_slice(),
                action.choice(),
                demand,
                self.current_interval(),
            )?
            .is_accepted();

        let interval = self.current_interval();
        self.step_index += 1;
        self.done = self.step_index >= self.split_steps(self.split).end;
        if !self.done && self.current_interval() != interval {
            self.enter_interval();
        }
        Ok(StepOutcome {
            observation: self.build_observation(self.demand_or_zero()),
            reward: if accepted { 1.0 } else { 0.0 },
            done: self.done,
            allocated: if accepted { demand } else { Throughput::ZERO },
        })
    }

    pub fn step_choice(&mut self, index: usize) -> Result<StepOutcome> {
        let a = Action::one_hot(index, self.n_choices())?;
        self.step(&a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::{generate_default_profiles, ProfileGenConfig};
    use proptest::prelude::*;

    fn zero_env() -> SlicingEnv {
        let p = Arc::new(ProfileSet::zeros(7, 3, 96));
        SlicingEnv::new(Topology::build(7, 1000.0, 1000.0).unwrap(), p).unwrap()
    }

    fn env_with(p: ProfileSet) -> SlicingEnv {
        SlicingEnv::new(Topology::build(7, 1000.0, 1000.0).unwrap(), Arc::new(p)).unwrap()
    }

    fn default_env() -> SlicingEnv {
        env_with(generate_default_profiles(&ProfileGenConfig::default()).unwrap())
    }

    #[test]
    fn split_sizes() {
        let env = zero_env();
        assert_eq!(env.max_episode_reward(Split::FullDay), 288);
        assert_eq!(env.max_episode_reward(Split::Train), 201);
        assert_eq!(env.max_episode_reward(Split::Validation), 27);
        assert_eq!(env.max_episode_reward(Split::Test), 60);
        assert_eq!(env.split_steps(Split::Test), 228..288);
        assert_eq!(env.split_steps(Split::Validation), 201..228);

        let one = env_with(ProfileSet::zeros(7, 1, 96));
        assert_eq!(one.max_episode_reward(Split::FullDay), 96);
    }

    #[test]
    fn reset_positions() {
        let mut env = default_env();
        let o = env.reset(Split::FullDay);
        assert_eq!((env.current_interval(), env.current_slice()), (0, 1));
        assert_eq!(o.len(), 16);
        env.reset(Split::Test);
        assert_eq!(env.step_index(), 228);
        assert_eq!((env.current_interval(), env.current_slice()), (76, 1));

        let mut other = default_env();
        assert_eq!(env.reset(Split::Train), other.reset(Split::Train));
    }

    #[test]
    fn fresh_observation_is_all_free() {
        let env = zero_env();
        let o = env.observe().unwrap();
        assert_eq!(o.requirement(), (0.0, 0.0));
        assert!(o.as_slice()[2..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn observation_scaling() {
        let mut p = ProfileSet::zeros(7, 3, 96);
        p.set_slice_demand(0, 1, Throughput::new(400.0, 250.0)).unwrap();
        p.set_profile_load(3, 0, Throughput::new(600.0, 400.0)).unwrap();
        let env = env_with(p);
        let o = env.observe().unwrap();
        assert_eq!(o.requirement(), (0.4, 0.25));
        assert_eq!(o.free(3), (0.4, 0.6));
        assert_eq!(o.free(6), (0.4, 0.6));
        assert_eq!(o.free(1), (1.0, 1.0));
    }

    #[test]
    fn rewards_follow_capacity() {
        let mut p = ProfileSet::zeros(7, 3, 96);
        p.set_slice_demand(0, 1, Throughput::new(600.0, 0.0)).unwrap();
        p.set_slice_demand(0, 2, Throughput::new(600.0, 0.0)).unwrap();
        p.set_slice_demand(0, 3, Throughput::new(1200.0, 10.0)).unwrap();
        let mut env = env_with(p);
        let a = env.step_choice(0).unwrap();
        assert_eq!((a.reward, a.allocated), (1.0, Throughput::new(600.0, 0.0)));
        let b = env.step_choice(0).unwrap();
        assert_eq!((b.reward, b.allocated), (0.0, Throughput::ZERO));
        assert!(env.feasible_choices().unwrap().is_empty());
        for k in 0..7 {
            let mut e = env.clone();
            assert_eq!(e.step_choice(k).unwrap().reward, 0.0);
        }
        // next interval starts from released capacity
        env.step_choice(3).unwrap();
        assert_eq!(env.current_interval(), 1);
        assert!(env.topology().allocations().is_empty());
        assert_eq!(env.step_choice(0).unwrap().reward, 1.0);
    }

    #[test]
    fn malformed_actions_and_late_steps() {
        let mut env = zero_env();
        assert!(Action::from_flags(vec![false; 7]).is_err());
        assert!(Action::from_flags(vec![true, true, false, false, false, false, false]).is_err());
        assert!(env.step(&Action::one_hot(0, 5).unwrap()).is_err());

        env.reset(Split::Validation);
        let mut total = 0.0;
        let mut last = None;
        while !env.is_done() {
            let o = env.step_choice(0).unwrap();
            total += o.reward;
            last = Some(o);
        }
        assert!(last.unwrap().done);
        assert_eq!(total, 27.0);
        assert!(matches!(env.step_choice(0), Err(Error::Usage(_))));
        assert!(env.observe().is_err());
    }

    #[test]
    fn zero_demand_always_feasible() {
        let env = zero_env();
        assert_eq!(env.feasible_choices().unwrap(), (1..=7).collect::<Vec<_>>());
    }

    fn random_env(choices: &[usize], split: usize) -> SlicingEnv {
        let mut env = default_env();
        env.reset(Split::ALL[split % 4]);
        for &c in choices {
            if env.is_done() {
                break;
            }
            env.step_choice(c % 7).unwrap();
        }
        env
    }

    proptest! {
        #[test]
        fn feasible_set_matches_cloned_steps(choices in proptest::collection::vec(0usize..7, 0..250), split in 0usize..4) {
            let env = random_env(&choices, split);
            prop_assume!(!env.is_done());
            let snapshot = env.clone();
            let feasible = env.feasible_choices().unwrap();
            let _ = env.observe().unwrap();
            prop_assert_eq!(&env, &snapshot);
            let brute: Vec<usize> = (0..7)
                .filter(|&k| env.clone().step_choice(k).unwrap().reward == 1.0)
                .map(|k| k + 1)
                .collect();
            prop_assert_eq!(feasible, brute);
        }

        #[test]
        fn observations_in_unit_range(choices in proptest::collection::vec(0usize..7, 0..290)) {
            let mut env = default_env();
            let mut obs = vec![env.reset(Split::FullDay)];
            let mut reward = 0.0;
            for c in choices {
                if env.is_done() { break; }
                let o = env.step_choice(c).unwrap();
                prop_assert!(o.reward == 0.0 || o.reward == 1.0);
                prop_assert_eq!(o.reward == 1.0, o.allocated != Throughput::ZERO || env.profiles().slice_demand(
                    (env.step_index() - 1) / 3, (env.step_index() - 1) % 3 + 1).unwrap() == Throughput::ZERO);
                reward += o.reward;
                obs.push(o.observation);
            }
            prop_assert!(reward <= 288.0);
            for o in obs {
                prop_assert!(o.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn steps_are_deterministic(choices in proptest::collection::vec(0usize..7, 1..100), next in 0usize..7) {
            let mut a = random_env(&choices, 0);
            let mut b = a.clone();
            prop_assume!(!a.is_done());
            prop_assert_eq!(a.step_choice(next).unwrap(), b.step_choice(next).unwrap());
            prop_assert_eq!(a, b);
        }
    }
}
