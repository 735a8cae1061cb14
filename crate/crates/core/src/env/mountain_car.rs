//! Mountain car with the standard physics constants: an underpowered car in
//! a valley, three throttle settings, -1 reward per step until the position
//! crosses the right hilltop.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mdp::{MdpSpec, State};

pub const N_ACTIONS: usize = 3;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

/// (position, velocity) ranges, used for feature normalization.
pub const STATE_BOUNDS: [(f64, f64); 2] = [
    (MIN_POSITION, MAX_POSITION),
    (-MAX_SPEED, MAX_SPEED),
];

#[derive(Debug, Clone, Copy, Default)]
pub struct MountainCar;

impl MountainCar {
    pub fn new() -> Self {
        MountainCar
    }

    /// Undiscounted, 1000-step cap; return bounds span a full-horizon
    /// failure and a generous best case.
    pub fn mdp_spec() -> MdpSpec {
        MdpSpec::new(1.0, 1000, -1000.0, -50.0)
    }
}

impl super::Environment for MountainCar {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> State {
        State::Continuous(vec![rng.random_range(-0.6..-0.4), 0.0])
    }

    fn step(&self, state: &State, action: usize) -> Result<(State, f64, bool)> {
        let s = state.continuous();
        let (pos, vel) = (s[0], s[1]);
        let mut vel = vel + FORCE * (action as f64 - 1.0) - GRAVITY * (3.0 * pos).cos();
        vel = vel.clamp(-MAX_SPEED, MAX_SPEED);
        let mut pos = (pos + vel).clamp(MIN_POSITION, MAX_POSITION);
        if pos <= MIN_POSITION && vel < 0.0 {
            vel = 0.0;
            pos = MIN_POSITION;
        }
        let done = pos >= GOAL_POSITION;
        Ok((State::Continuous(vec![pos, vel]), -1.0, done))
    }
}
