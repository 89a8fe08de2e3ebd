//! Integrated access and backhaul (IAB) slice backhauling: a capacity
//! simulator for a congested base station and its donors, a discrete-action
//! environment over a day of traffic, and a Double DQN agent trained on it.

pub mod agent;
pub mod env;
pub mod error;
pub mod harness;
pub mod profiles;
pub mod qnet;
pub mod topology;



pub use agent::{Agent, Hyperparameters, ReplayBuffer, Transition};
pub use env::{Action, Observation, SlicingEnv, Split, StepOutcome};
pub use error::{Error, Result};
pub use harness::{RunConfig, TrainingReport};
pub use profiles::{generate_default_profiles, ProfileGenConfig, ProfileSet};
pub use qnet::{Gradients, NetSpec, OptimizerConfig, QNetwork};
pub use topology::{Throughput, Topology};
