//! Core MDP types: episode specs, transitions, trajectories, stochastic
//! policies, and return normalization.
//!
//! Everything is immutable after construction and safe to share across
//! concurrently running experiments.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::error::{Error, Result};

/// How far a probability vector may drift from summing to one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-12;

/// Minimum per-action probability for any policy that gets deployed.
/// Keeps importance weights finite.
pub const SUPPORT_FLOOR: f64 = 1e-6;

/// Slack allowed when clamping normalized returns back into [0, 1].
const RETURN_CLAMP_TOLERANCE: f64 = 1e-9;

/// Episode-level constants of a domain: discounting, the episode cap, and the
/// bounds used to normalize discounted returns into [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpSpec {
    pub gamma: f64,
    pub horizon: usize,
    pub return_lower: f64,
    pub return_upper: f64,
}

impl MdpSpec {
    pub fn new(gamma: f64, horizon: usize, return_lower: f64, return_upper: f64) -> Self {
        assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
        assert!(horizon >= 1, "horizon must be at least 1");
        assert!(
            return_upper > return_lower,
            "return bounds must satisfy upper > lower"
        );
        Self {
            gamma,
            horizon,
            return_lower,
            return_upper,
        }
    }
}

/// A state: either a discrete id or a continuous feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum State {
    Discrete(u32),
    Continuous(Vec<f64>),
}

impl State {
    pub fn discrete(&self) -> u32 {
        match self {
            State::Discrete(id) => *id,
            State::Continuous(_) => panic!("expected a discrete state"),
        }
    }

    pub fn continuous(&self) -> &[f64] {
        match self {
            State::Continuous(v) => v,
            State::Discrete(_) => panic!("expected a continuous state"),
        }
    }

    /// Hashable identity key (continuous components compared bit-exactly).
    pub fn key(&self) -> StateKey {
        match self {
            State::Discrete(id) => StateKey::Discrete(*id),
            State::Continuous(v) => StateKey::Bits(v.iter().map(|x| x.to_bits()).collect()),
        }
    }

    pub(crate) fn encode(&self) -> String {
        match self {
            State::Discrete(id) => id.to_string(),
            // Debug formatting keeps a decimal point or exponent, so a
            // one-component continuous state never reads back as discrete.
            State::Continuous(v) => v
                .iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    fn decode(field: &str, line: usize) -> Result<Self> {
        if field.contains([';', '.', 'e', 'i', 'N']) {
            let comps = field
                .split(';')
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|e| Error::parse(line, format!("bad state component: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(State::Continuous(comps))
        } else {
            Ok(State::Discrete(field.parse().map_err(|e| {
                Error::parse(line, format!("bad state id: {e}"))
            })?))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StateKey {
    Discrete(u32),
    Bits(Vec<u64>),
}

/// One observed step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: State,
    pub action: usize,
    pub reward: f64,
    pub next_state: State,
    pub terminal: bool,
}

/// Identifier of a policy, unique within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyId(pub u64);

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// An ordered sequence of transitions, labeled with the policy that produced
/// it so importance sampling can recover the behavior distribution later.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub behavior_id: PolicyId,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Undiscounted-check helper: sum of gamma^(t-1) * r_t over the episode.
    pub fn discounted_sum(&self, gamma: f64) -> f64 {
        let mut acc = 0.0;
        let mut scale = 1.0;
        for tr in &self.transitions {
            acc += scale * tr.reward;
            scale *= gamma;
        }
        acc
    }

    /// Checks the structural invariants: nonempty, within horizon, rewards
    /// finite, and consecutive states chaining.
    pub fn validate(&self, spec: &MdpSpec) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::parse(0, "trajectory has no transitions"));
        }
        if self.transitions.len() > spec.horizon {
            return Err(Error::parse(
                0,
                format!(
                    "trajectory length {} exceeds horizon {}",
                    self.transitions.len(),
                    spec.horizon
                ),
            ));
        }
        for pair in self.transitions.windows(2) {
            if pair[0].next_state != pair[1].state {
                return Err(Error::parse(0, "transition chain is inconsistent"));
            }
        }
        if self.transitions.iter().any(|t| !t.reward.is_finite()) {
            return Err(Error::parse(0, "non-finite reward"));
        }
        Ok(())
    }
}

/// A trajectory plus its provenance inside an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedTrajectory {
    pub run: u64,
    pub iter: u32,
    pub traj_id: u64,
    pub traj: Trajectory,
}

/// State-conditional distribution over actions.
///
/// Implementations must return nonnegative probabilities summing to one
/// within [`DISTRIBUTION_TOLERANCE`]; deployed policies must additionally
/// keep every probability at or above [`SUPPORT_FLOOR`].
pub trait StochasticPolicy: Send + Sync {
    fn id(&self) -> PolicyId;
    fn n_actions(&self) -> usize;
    fn action_probabilities(&self, state: &State) -> Vec<f64>;

    /// Probability of one action; override when a full vector is wasteful.
    fn action_probability(&self, state: &State, action: usize) -> f64 {
        self.action_probabilities(state)[action]
    }
}

pub type PolicyRef = Arc<dyn StochasticPolicy>;

/// Draws an action by inverse-CDF sampling; deterministic given the rng.
pub fn sample_action(policy: &dyn StochasticPolicy, state: &State, rng: &mut ChaCha8Rng) -> usize {
    use rand::Rng;
    let probs = policy.action_probabilities(state);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.len() - 1
}

/// Tabular softmax policy over a discrete state space. Full support by
/// construction (softmax output is strictly positive).
#[derive(Debug, Clone)]
pub struct TabularSoftmaxPolicy {
    id: PolicyId,
    n_states: usize,
    n_actions: usize,
    /// Row-major (state, action) preferences.
    prefs: Vec<f64>,
    temperature: f64,
}

impl TabularSoftmaxPolicy {
    pub fn new(
        id: PolicyId,
        n_states: usize,
        n_actions: usize,
        prefs: Vec<f64>,
        temperature: f64,
    ) -> Self {
        assert_eq!(prefs.len(), n_states * n_actions);
        assert!(temperature > 0.0, "temperature must be positive");
        assert!(prefs.iter().all(|p| p.is_finite()), "preferences must be finite");
        Self {
            id,
            n_states,
            n_actions,
            prefs,
            temperature,
        }
    }

    /// Uniform policy (all-zero preferences).
    pub fn uniform(id: PolicyId, n_states: usize, n_actions: usize) -> Self {
        Self::new(id, n_states, n_actions, vec![0.0; n_states * n_actions], 1.0)
    }

    pub fn preferences(&self) -> &[f64] {
        &self.prefs
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn with_id(&self, id: PolicyId) -> Self {
        let mut p = self.clone();
        p.id = id;
        p
    }

    fn row(&self, state: &State) -> &[f64] {
        let s = state.discrete() as usize;
        assert!(s < self.n_states, "state id {s} out of range");
        &self.prefs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Greedy action under the preferences, lowest index on ties.
    pub fn greedy_action(&self, state: &State) -> usize {
        let row = self.row(state);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }
}

impl StochasticPolicy for TabularSoftmaxPolicy {
    fn id(&self) -> PolicyId {
        self.id
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probabilities(&self, state: &State) -> Vec<f64> {
        let row = self.row(state);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = row
            .iter()
            .map(|p| ((p - max) / self.temperature).exp())
            .collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        probs
    }
}

/// alpha-mixture of a target policy with a reference (base) policy:
/// (1 - alpha) * target + alpha * base, per state.
pub struct MixedPolicy {
    id: PolicyId,
    base: PolicyRef,
    target: PolicyRef,
    alpha: f64,
}

impl MixedPolicy {
    pub fn base(&self) -> &PolicyRef {
        &self.base
    }

    pub fn target(&self) -> &PolicyRef {
        &self.target
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl StochasticPolicy for MixedPolicy {
    fn id(&self) -> PolicyId {
        self.id
    }

    fn n_actions(&self) -> usize {
        self.target.n_actions()
    }

    fn action_probabilities(&self, state: &State) -> Vec<f64> {
        let tp = self.target.action_probabilities(state);
        let bp = self.base.action_probabilities(state);
        tp.iter()
            .zip(&bp)
            .map(|(t, b)| (1.0 - self.alpha) * t + self.alpha * b)
            .collect()
    }

    fn action_probability(&self, state: &State, action: usize) -> f64 {
        (1.0 - self.alpha) * self.target.action_probability(state, action)
            + self.alpha * self.base.action_probability(state, action)
    }
}

/// Builds the alpha-mixture of `target` with reference policy `base`.
pub fn mix_policies(
    base: PolicyRef,
    target: PolicyRef,
    alpha: f64,
    id: PolicyId,
) -> Result<MixedPolicy> {
    assert!((0.0..=1.0).contains(&alpha), "alpha must lie in [0, 1]");
    if base.n_actions() != target.n_actions() {
        return Err(Error::MismatchedActionSpaces {
            left: target.n_actions(),
            right: base.n_actions(),
        });
    }
    Ok(MixedPolicy {
        id,
        base,
        target,
        alpha,
    })
}

/// Normalized discounted return: (sum gamma^(t-1) r_t - R_lower) / (R_upper - R_lower).
///
/// Values outside the configured bounds by more than a tiny float slack mean
/// the bounds are wrong for the domain, which is an error, not data.
pub fn normalized_return(traj: &Trajectory, spec: &MdpSpec) -> Result<f64> {
    assert!(!traj.is_empty(), "trajectory must be nonempty");
    let sum = traj.discounted_sum(spec.gamma);
    if sum < spec.return_lower - RETURN_CLAMP_TOLERANCE
        || sum > spec.return_upper + RETURN_CLAMP_TOLERANCE
    {
        return Err(Error::ReturnOutOfBounds {
            sum,
            lower: spec.return_lower,
            upper: spec.return_upper,
        });
    }
    let r = (sum - spec.return_lower) / (spec.return_upper - spec.return_lower);
    Ok(r.clamp(0.0, 1.0))
}

/// Rolls out one episode of `policy` in `env`, stopping at a terminal state
/// or at the horizon. The trajectory is labeled with the policy's id.
pub fn generate_trajectory(
    env: &dyn Environment,
    policy: &dyn StochasticPolicy,
    rng: &mut ChaCha8Rng,
    spec: &MdpSpec,
) -> Trajectory {
    let mut state = env.reset(rng);
    let mut transitions = Vec::new();
    for _ in 0..spec.horizon {
        let action = sample_action(policy, &state, rng);
        let (next_state, reward, terminal) = env
            .step(&state, action)
            .expect("environment rejected an on-policy step");
        transitions.push(Transition {
            state: state.clone(),
            action,
            reward,
            next_state: next_state.clone(),
            terminal,
        });
        if terminal {
            break;
        }
        state = next_state;
    }
    Trajectory {
        transitions,
        behavior_id: policy.id(),
    }
}

const TRAJECTORY_HEADER: &str = "run,iter,traj_id,behavior_id,t,state,action,reward,next_state,terminal";

/// Writes trajectory sets in the line-oriented text format, one transition
/// per line: `run,iter,traj_id,behavior_id,t,state,action,reward,next_state,terminal`.
pub fn write_trajectories<W: Write>(out: &mut W, trajectories: &[TaggedTrajectory]) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for tt in trajectories {
        for (t, tr) in tt.traj.transitions.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                tt.run,
                tt.iter,
                tt.traj_id,
                tt.traj.behavior_id,
                t,
                tr.state.encode(),
                tr.action,
                tr.reward,
                tr.next_state.encode(),
                u8::from(tr.terminal),
            )?;
        }
    }
    Ok(())
}

/// Reads trajectory sets written by [`write_trajectories`].
pub fn read_trajectories<R: BufRead>(input: R) -> Result<Vec<TaggedTrajectory>> {
    let mut out: Vec<TaggedTrajectory> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 && line == TRAJECTORY_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                lineno,
                format!("expected 10 fields, got {}", fields.len()),
            ));
        }
        let parse_u64 = |f: &str, what: &str| -> Result<u64> {
            f.parse()
                .map_err(|e| Error::parse(lineno, format!("bad {what}: {e}")))
        };
        let run = parse_u64(fields[0], "run")?;
        let iter = parse_u64(fields[1], "iter")? as u32;
        let traj_id = parse_u64(fields[2], "traj_id")?;
        let behavior_id = PolicyId(parse_u64(fields[3], "behavior_id")?);
        let step = parse_u64(fields[4], "t")? as usize;
        let transition = Transition {
            state: State::decode(fields[5], lineno)?,
            action: parse_u64(fields[6], "action")? as usize,
            reward: fields[7]
                .parse()
                .map_err(|e| Error::parse(lineno, format!("bad reward: {e}")))?,
            next_state: State::decode(fields[8], lineno)?,
            terminal: fields[9] == "1",
        };
        let start_new = match out.last() {
            Some(last) => {
                !(last.run == run && last.iter == iter && last.traj_id == traj_id)
            }
            None => true,
        };
        if start_new {
            if step != 0 {
                return Err(Error::parse(lineno, "trajectory does not start at t=0"));
            }
            out.push(TaggedTrajectory {
                run,
                iter,
                traj_id,
                traj: Trajectory {
                    transitions: vec![transition],
                    behavior_id,
                },
            });
        } else {
            let last = out.last_mut().unwrap();
            if last.traj.behavior_id != behavior_id {
                return Err(Error::parse(lineno, "behavior id changes mid-trajectory"));
            }
            if step != last.traj.transitions.len() {
                return Err(Error::parse(lineno, "non-consecutive step index"));
            }
            last.traj.transitions.push(transition);
        }
    }
    Ok(out)
}
