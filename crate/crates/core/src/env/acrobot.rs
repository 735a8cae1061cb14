//! Acrobot swing-up: a two-link underactuated pendulum with torque on the
//! second joint, integrated with fourth-order Runge-Kutta at 0.2s steps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mdp::{MdpSpec, State};

pub const N_ACTIONS: usize = 3;

const DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
const MAX_VEL_1: f64 = 4.0 * std::f64::consts::PI;
const MAX_VEL_2: f64 = 9.0 * std::f64::consts::PI;

/// (theta1, theta2, dtheta1, dtheta2) ranges, used for feature
/// normalization.
pub const STATE_BOUNDS: [(f64, f64); 4] = [
    (-std::f64::consts::PI, std::f64::consts::PI),
    (-std::f64::consts::PI, std::f64::consts::PI),
    (-MAX_VEL_1, MAX_VEL_1),
    (-MAX_VEL_2, MAX_VEL_2),
];

#[derive(Debug, Clone, Copy, Default)]
pub struct Acrobot;

impl Acrobot {
    pub fn new() -> Self {
        Acrobot
    }

    /// Undiscounted, 500-step cap; bounds span a full-horizon failure and a
    /// generous best case.
    pub fn mdp_spec() -> MdpSpec {
        MdpSpec::new(1.0, 500, -500.0, -40.0)
    }
}

fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = (x + PI) % (2.0 * PI);
    if x < 0.0 {
        x += 2.0 * PI;
    }
    x - PI
}

/// Equations of motion for state (th1, th2, dth1, dth2) under `torque`.
fn dynamics(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2) = (LINK_MASS_1, LINK_MASS_2);
    let l1 = LINK_LENGTH_1;
    let (lc1, lc2) = (LINK_COM_1, LINK_COM_2);
    let (i1, i2) = (LINK_MOI, LINK_MOI);
    let g = GRAVITY;
    let [th1, th2, dth1, dth2] = s;

    let d1 = m1 * lc1 * lc1
        + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * th2.cos())
        + i1
        + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * th2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (th1 + th2 - std::f64::consts::FRAC_PI_2).cos();
    let phi1 = -m2 * l1 * lc2 * dth2 * dth2 * th2.sin()
        - 2.0 * m2 * l1 * lc2 * dth2 * dth1 * th2.sin()
        + (m1 * lc1 + m2 * l1) * g * (th1 - std::f64::consts::FRAC_PI_2).cos()
        + phi2;
    let ddth2 = (torque + d2 / d1 * phi1
        - m2 * l1 * lc2 * dth1 * dth1 * th2.sin()
        - phi2)
        / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddth1 = -(d2 * ddth2 + phi1) / d1;
    [dth1, dth2, ddth1, ddth2]
}

fn rk4_step(s: [f64; 4], torque: f64, dt: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], h: f64| {
        [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2], a[3] + h * b[3]]
    };
    let k1 = dynamics(s, torque);
    let k2 = dynamics(add(s, k1, dt / 2.0), torque);
    let k3 = dynamics(add(s, k2, dt / 2.0), torque);
    let k4 = dynamics(add(s, k3, dt), torque);
    let mut out = s;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Tip height criterion: terminal when -cos(th1) - cos(th1 + th2) > 1.
fn is_terminal(s: &[f64; 4]) -> bool {
    -s[0].cos() - (s[0] + s[1]).cos() > 1.0
}

impl super::Environment for Acrobot {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset(&self, rng: &mut ChaCha8Rng) -> State {
        let v: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
        State::Continuous(v)
    }

    fn step(&self, state: &State, action: usize) -> Result<(State, f64, bool)> {
        let v = state.continuous();
        let s = [v[0], v[1], v[2], v[3]];
        let torque = action as f64 - 1.0;
        let mut next = rk4_step(s, torque, DT);
        next[0] = wrap_angle(next[0]);
        next[1] = wrap_angle(next[1]);
        next[2] = next[2].clamp(-MAX_VEL_1, MAX_VEL_1);
        next[3] = next[3].clamp(-MAX_VEL_2, MAX_VEL_2);
        let done = is_terminal(&next);
        Ok((State::Continuous(next.to_vec()), -1.0, done))
    }
}
