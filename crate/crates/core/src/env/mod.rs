//! Benchmark domains. All environments are pure transition functions; any
//! randomness (start states) comes from the caller-supplied generator.

pub mod acrobot;
pub mod gridworld;
pub mod mountain_car;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mdp::{MdpSpec, State};

/// A reset-able episodic environment with deterministic dynamics.
pub trait Environment: Send + Sync {
    fn n_actions(&self) -> usize;
    /// Draws a start state.
    fn reset(&self, rng: &mut ChaCha8Rng) -> State;
    /// Applies one action. Errors on invalid actions or states outside the
    /// domain's documented bounds.
    fn step(&self, state: &State, action: usize) -> Result<(State, f64, bool)>;
}

/// The three benchmark domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    GridWorld,
    MountainCar,
    Acrobot,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::GridWorld => "gridworld",
            Domain::MountainCar => "mountain_car",
            Domain::Acrobot => "acrobot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gridworld" => Some(Domain::GridWorld),
            "mountain_car" => Some(Domain::MountainCar),
            "acrobot" => Some(Domain::Acrobot),
            _ => None,
        }
    }

    pub fn build(&self) -> Box<dyn Environment> {
        match self {
            Domain::GridWorld => Box::new(gridworld::GridWorld::new()),
            Domain::MountainCar => Box::new(mountain_car::MountainCar::new()),
            Domain::Acrobot => Box::new(acrobot::Acrobot::new()),
        }
    }

    pub fn mdp_spec(&self) -> MdpSpec {
        match self {
            Domain::GridWorld => gridworld::GridWorld::mdp_spec(),
            Domain::MountainCar => mountain_car::MountainCar::mdp_spec(),
            Domain::Acrobot => acrobot::Acrobot::mdp_spec(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Domain::GridWorld => 5,
            Domain::MountainCar | Domain::Acrobot => 3,
        }
    }

    /// Per-dimension (lower, upper) bounds for normalizing continuous states
    /// into the unit cube. Empty for discrete domains.
    pub fn state_bounds(&self) -> &'static [(f64, f64)] {
        match self {
            Domain::GridWorld => &[],
            Domain::MountainCar => &mountain_car::STATE_BOUNDS,
            Domain::Acrobot => &acrobot::STATE_BOUNDS,
        }
    }
}
