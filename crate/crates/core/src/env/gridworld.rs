//! Extended 4x4 grid world: the usual four moves plus a diagonal up-right
//! action, -1 reward per step, start at the bottom-left cell, absorbing goal
//! at the top-right cell.
//!
//! Also hosts the deterministic policy family indexed over the 9 interior
//! states (5^9 members), the quality/diversity census over that family, and
//! exact policy evaluation by dynamic programming.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{MdpSpec, State, StochasticPolicy};

pub const WIDTH: u32 = 4;
pub const HEIGHT: u32 = 4;
pub const N_STATES: usize = 16;
pub const N_ACTIONS: usize = 5;
/// Bottom-left cell.
pub const START: u32 = 0;
/// Top-right cell.
pub const GOAL: u32 = 15;

/// Actions in fixed order: diagonal up-right, up, right, down, left.
pub const ACTION_DIAG: usize = 0;
pub const ACTION_UP: usize = 1;
pub const ACTION_RIGHT: usize = 2;
pub const ACTION_DOWN: usize = 3;
pub const ACTION_LEFT: usize = 4;

const DELTAS: [(i32, i32); N_ACTIONS] = [(1, 1), (0, 1), (1, 0), (0, -1), (-1, 0)];

/// Interior states (outside the topmost row and rightmost column), by id.
pub const INTERIOR_STATES: [u32; 9] = [0, 1, 2, 4, 5, 6, 8, 9, 10];

/// Number of deterministic policies in the indexed family.
pub const FAMILY_SIZE: u64 = 1_953_125; // 5^9

pub fn state_id(x: u32, y: u32) -> u32 {
    debug_assert!(x < WIDTH && y < HEIGHT);
    y * WIDTH + x
}

pub fn coords(id: u32) -> (u32, u32) {
    (id % WIDTH, id / WIDTH)
}

/// Applies the boundary rule: moves that would exit the lattice (either
/// component, for the diagonal) leave the agent in place.
pub fn next_cell(id: u32, action: usize) -> Result<u32> {
    if action >= N_ACTIONS {
        return Err(Error::InvalidAction {
            action,
            n_actions: N_ACTIONS,
        });
    }
    let (x, y) = coords(id);
    let (dx, dy) = DELTAS[action];
    let nx = x as i32 + dx;
    let ny = y as i32 + dy;
    if nx < 0 || nx >= WIDTH as i32 || ny < 0 || ny >= HEIGHT as i32 {
        return Ok(id);
    }
    Ok(state_id(nx as u32, ny as u32))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GridWorld;

impl GridWorld {
    pub fn new() -> Self {
        GridWorld
    }

    /// Episode constants: undiscounted, capped at 30 steps. The return
    /// bounds cover the worst case (a full horizon of -1 rewards) and the
    /// best case (the 3-step optimal path from the start cell). The cap is
    /// deliberately tight: it bounds importance-weight products and keeps
    /// the normalized return scale wide enough that genuine improvements
    /// are statistically detectable from iteration-sized batches.
    pub fn mdp_spec() -> MdpSpec {
        MdpSpec::new(1.0, 30, -30.0, -3.0)
    }
}

impl super::Environment for GridWorld {
    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn reset(&self, _rng: &mut ChaCha8Rng) -> State {
        State::Discrete(START)
    }

    fn step(&self, state: &State, action: usize) -> Result<(State, f64, bool)> {
        let id = state.discrete();
        assert!(id != GOAL, "stepping from the absorbing goal state");
        let next = next_cell(id, action)?;
        Ok((State::Discrete(next), -1.0, next == GOAL))
    }
}

/// Minimal steps to goal from every state under the 5-action move set:
/// the Chebyshev distance to the top-right corner.
pub fn optimal_steps() -> [u32; N_STATES] {
    let mut steps = [0u32; N_STATES];
    for id in 0..N_STATES as u32 {
        let (x, y) = coords(id);
        steps[id as usize] = (WIDTH - 1 - x).max(HEIGHT - 1 - y);
    }
    steps
}

/// Index into the 5^9 deterministic policy family: base-5 digits give the
/// action at each interior state (in `INTERIOR_STATES` order); every other
/// state takes its unique optimal action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyFamilyIndex(pub u64);

impl PolicyFamilyIndex {
    pub fn decode(&self) -> [usize; 9] {
        assert!(self.0 < FAMILY_SIZE, "family index out of range");
        let mut digits = [0usize; 9];
        let mut rest = self.0;
        for d in &mut digits {
            *d = (rest % 5) as usize;
            rest /= 5;
        }
        digits
    }

    pub fn encode(actions: [usize; 9]) -> Self {
        let mut v = 0u64;
        for &a in actions.iter().rev() {
            assert!(a < N_ACTIONS);
            v = v * 5 + a as u64;
        }
        PolicyFamilyIndex(v)
    }
}

/// Fixed action at a non-interior, non-goal state: right along the top row,
/// up along the right column (both unique optimal moves there).
pub fn boundary_action(id: u32) -> usize {
    let (x, y) = coords(id);
    debug_assert!(x == WIDTH - 1 || y == HEIGHT - 1);
    debug_assert!(id != GOAL);
    if y == HEIGHT - 1 {
        ACTION_RIGHT
    } else {
        ACTION_UP
    }
}

/// Full action map (all 16 states) of a family member. The goal entry is
/// never used; it is filled with the diagonal action.
pub fn family_action_map(index: PolicyFamilyIndex) -> [usize; N_STATES] {
    let digits = index.decode();
    let mut map = [ACTION_DIAG; N_STATES];
    for (slot, &s) in INTERIOR_STATES.iter().enumerate() {
        map[s as usize] = digits[slot];
    }
    for id in 0..N_STATES as u32 {
        if id != GOAL && !INTERIOR_STATES.contains(&id) {
            map[id as usize] = boundary_action(id);
        }
    }
    map
}

/// Steps to goal from every state under a deterministic action map, or None
/// where the goal is never reached. Backfills along successor chains, so the
/// whole table costs O(states).
pub fn steps_to_goal(map: &[usize; N_STATES]) -> [Option<u32>; N_STATES] {
    const UNKNOWN: u32 = u32::MAX;
    const UNREACHABLE: u32 = u32::MAX - 1;
    let mut steps = [UNKNOWN; N_STATES];
    steps[GOAL as usize] = 0;
    let mut path = Vec::with_capacity(N_STATES);
    for start in 0..N_STATES {
        if steps[start] != UNKNOWN {
            continue;
        }
        path.clear();
        let mut cur = start as u32;
        // Walk until something already resolved (goal, known count, known
        // dead end) or a cycle within the current path.
        let tail = loop {
            if steps[cur as usize] != UNKNOWN {
                break steps[cur as usize];
            }
            if path.contains(&cur) {
                break UNREACHABLE;
            }
            path.push(cur);
            cur = next_cell(cur, map[cur as usize]).expect("family actions are valid");
        };
        if tail == UNREACHABLE {
            // Cycle: anything on the walk never reaches the goal. States on
            // the walk before the cycle entry also funnel into it.
            for &s in &path {
                steps[s as usize] = UNREACHABLE;
            }
        } else {
            // Everything on the path reaches the resolved tail.
            let mut d = tail;
            for &s in path.iter().rev() {
                d += 1;
                steps[s as usize] = d;
            }
        }
    }
    steps.map(|s| if s == UNREACHABLE { None } else { Some(s) })
}

/// Policy quality: total extra steps to goal over all start states compared
/// to an optimal policy; None (the infinity sentinel) if any state never
/// reaches the goal.
pub fn policy_quality(index: PolicyFamilyIndex) -> Option<u32> {
    let map = family_action_map(index);
    let steps = steps_to_goal(&map);
    let optimal = optimal_steps();
    let mut extra = 0u32;
    for s in 0..N_STATES {
        extra += steps[s]? - optimal[s];
    }
    Some(extra)
}

/// Hamming distance between two family members over the 9 interior states.
pub fn pairwise_diversity(a: PolicyFamilyIndex, b: PolicyFamilyIndex) -> u32 {
    let da = a.decode();
    let db = b.decode();
    da.iter().zip(&db).filter(|(x, y)| x != y).count() as u32
}

/// Full census over the 5^9 family: per-quality policy counts plus the
/// number of members that never reach the goal from some state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyCensus {
    /// Sorted (extra_steps, count) pairs over members with finite quality.
    pub quality_counts: Vec<(u32, u64)>,
    pub unreachable_count: u64,
}

impl FamilyCensus {
    pub fn optimal_count(&self) -> u64 {
        self.quality_counts
            .iter()
            .find(|(q, _)| *q == 0)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }
}

fn merge_hist(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    if a.len() < b.len() {
        return merge_hist(b, a);
    }
    for (i, v) in b.into_iter().enumerate() {
        a[i] += v;
    }
    a
}

/// Enumerates all 1,953,125 family members. Runs data-parallel when the
/// `parallel` feature is enabled; the reduction is a commutative integer
/// merge, so the result is identical either way.
pub fn enumerate_family() -> FamilyCensus {
    // Index 0 of the histogram holds the unreachable count; quality q maps
    // to slot q + 1. Max finite quality is bounded by 16 states * 16 steps.
    let slots = 16 * 16 + 2;
    let hist = exec::map_reduce_indexed(
        FAMILY_SIZE,
        move |i| {
            let mut h = vec![0u64; slots];
            match policy_quality(PolicyFamilyIndex(i)) {
                Some(q) => h[q as usize + 1] += 1,
                None => h[0] += 1,
            }
            h
        },
        move || vec![0u64; slots],
        merge_hist,
    );
    let quality_counts = hist
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > 0)
        .map(|(slot, &c)| ((slot - 1) as u32, c))
        .collect();
    FamilyCensus {
        quality_counts,
        unreachable_count: hist[0],
    }
}

/// All family indices with finite quality at most `cap`, grouped by quality.
pub fn family_members_up_to(cap: u32) -> Vec<(u32, Vec<PolicyFamilyIndex>)> {
    let mut buckets: Vec<Vec<PolicyFamilyIndex>> = vec![Vec::new(); cap as usize + 1];
    let found = exec::map_reduce_indexed(
        FAMILY_SIZE,
        move |i| {
            let idx = PolicyFamilyIndex(i);
            match policy_quality(idx) {
                Some(q) if q <= cap => vec![(q, idx)],
                _ => Vec::new(),
            }
        },
        Vec::new,
        |mut a, mut b| {
            a.append(&mut b);
            a
        },
    );
    for (q, idx) in found {
        buckets[q as usize].push(idx);
    }
    for b in &mut buckets {
        b.sort();
    }
    buckets
        .into_iter()
        .enumerate()
        .map(|(q, idxs)| (q as u32, idxs))
        .collect()
}

/// Exact expected normalized return of a stochastic policy from the start
/// state: finite-horizon dynamic programming over the 16-state chain.
pub fn exact_policy_value(policy: &dyn StochasticPolicy, spec: &MdpSpec) -> f64 {
    let mut value = [0.0f64; N_STATES];
    let probs: Vec<Vec<f64>> = (0..N_STATES as u32)
        .map(|s| {
            if s == GOAL {
                vec![0.0; N_ACTIONS]
            } else {
                policy.action_probabilities(&State::Discrete(s))
            }
        })
        .collect();
    for _ in 0..spec.horizon {
        let mut next = [0.0f64; N_STATES];
        for s in 0..N_STATES as u32 {
            if s == GOAL {
                continue;
            }
            let mut v = 0.0;
            for (a, p) in probs[s as usize].iter().enumerate() {
                let succ = next_cell(s, a).unwrap();
                v += p * (-1.0 + spec.gamma * value[succ as usize]);
            }
            next[s as usize] = v;
        }
        value = next;
    }
    (value[START as usize] - spec.return_lower) / (spec.return_upper - spec.return_lower)
}

/// Actions that keep an interior state on a shortest path, per interior slot.
pub fn optimal_action_sets() -> [Vec<usize>; 9] {
    let optimal = optimal_steps();
    let mut sets: [Vec<usize>; 9] = Default::default();
    for (slot, &s) in INTERIOR_STATES.iter().enumerate() {
        for a in 0..N_ACTIONS {
            let succ = next_cell(s, a).unwrap();
            if succ != s && optimal[succ as usize] + 1 == optimal[s as usize] {
                sets[slot].push(a);
            }
        }
    }
    sets
}

/// Greedy action at each interior state (lowest action id on ties).
pub fn greedy_interior_map(policy: &dyn StochasticPolicy) -> [usize; 9] {
    let mut map = [0usize; 9];
    for (slot, &s) in INTERIOR_STATES.iter().enumerate() {
        let probs = policy.action_probabilities(&State::Discrete(s));
        let mut best = 0;
        for (a, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = a;
            }
        }
        map[slot] = best;
    }
    map
}

/// Whether an interior action map is one of the optimal deterministic
/// policies (every action lies on a shortest path).
pub fn is_optimal_interior_map(map: &[usize; 9]) -> bool {
    let sets = optimal_action_sets();
    map.iter()
        .zip(sets.iter())
        .all(|(a, set)| set.contains(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;
    use crate::mdp::PolicyId;
    use crate::mdp::TabularSoftmaxPolicy;

    /// Independent breadth-first search over the 16-state move graph.
    fn bfs_steps() -> [u32; N_STATES] {
        use std::collections::VecDeque;
        let mut dist = [u32::MAX; N_STATES];
        dist[GOAL as usize] = 0;
        let mut queue = VecDeque::from([GOAL]);
        while let Some(s) = queue.pop_front() {
            for pred in 0..N_STATES as u32 {
                if pred == GOAL || dist[pred as usize] != u32::MAX {
                    continue;
                }
                let reaches = (0..N_ACTIONS)
                    .any(|a| next_cell(pred, a).unwrap() == s);
                if reaches {
                    dist[pred as usize] = dist[s as usize] + 1;
                    queue.push_back(pred);
                }
            }
        }
        dist
    }

    #[test]
    fn step_dynamics_examples() {
        // (0,0) diagonal -> (1,1).
        let env = GridWorld::new();
        let (s, r, done) = env
            .step(&State::Discrete(state_id(0, 0)), ACTION_DIAG)
            .unwrap();
        assert_eq!(s.discrete(), state_id(1, 1));
        assert_eq!(r, -1.0);
        assert!(!done);
        // Top-left, up -> unchanged.
        let (s, r, done) = env
            .step(&State::Discrete(state_id(0, 3)), ACTION_UP)
            .unwrap();
        assert_eq!(s.discrete(), state_id(0, 3));
        assert_eq!(r, -1.0);
        assert!(!done);
        // (2,2) diagonal -> goal.
        let (s, _, done) = env
            .step(&State::Discrete(state_id(2, 2)), ACTION_DIAG)
            .unwrap();
        assert_eq!(s.discrete(), GOAL);
        assert!(done);
        // Invalid action id.
        assert!(matches!(
            env.step(&State::Discrete(0), 9),
            Err(Error::InvalidAction { .. })
        ));
    }

    #[test]
    fn diagonal_blocked_when_either_component_exits() {
        // Right column: diagonal would exit horizontally.
        assert_eq!(next_cell(state_id(3, 1), ACTION_DIAG).unwrap(), state_id(3, 1));
        // Top row: diagonal would exit vertically.
        assert_eq!(next_cell(state_id(1, 3), ACTION_DIAG).unwrap(), state_id(1, 3));
    }

    #[test]
    fn optimal_steps_matches_bfs_oracle() {
        assert_eq!(optimal_steps(), bfs_steps());
        let steps = optimal_steps();
        assert_eq!(steps[GOAL as usize], 0);
        assert_eq!(steps[state_id(0, 0) as usize], 3);
        assert_eq!(steps[state_id(0, 2) as usize], 3);
    }

    /// Literal rollout of a deterministic action map, one start state at a
    /// time, with the design horizon of 100 steps.
    fn rollout_steps(map: &[usize; N_STATES], start: u32) -> Option<u32> {
        let mut s = start;
        for k in 0..100 {
            if s == GOAL {
                return Some(k);
            }
            s = next_cell(s, map[s as usize]).unwrap();
        }
        if s == GOAL {
            Some(100)
        } else {
            None
        }
    }

    #[test]
    fn steps_to_goal_matches_rollout_oracle() {
        // A handful of hand-picked members plus a pseudo-random sweep.
        let mut indices: Vec<u64> = vec![0, 1, FAMILY_SIZE - 1, 12345, 999_999];
        indices.extend((0..500).map(|i| (i * 3_906_251) % FAMILY_SIZE));
        for raw in indices {
            let map = family_action_map(PolicyFamilyIndex(raw));
            let fast = steps_to_goal(&map);
            for s in 0..N_STATES as u32 {
                assert_eq!(
                    fast[s as usize],
                    rollout_steps(&map, s),
                    "index {raw}, state {s}"
                );
            }
        }
    }

    #[test]
    fn all_optimal_policy_has_zero_extra_steps() {
        // Diagonal everywhere on the interior is optimal (it always reduces
        // the Chebyshev distance).
        let idx = PolicyFamilyIndex::encode([ACTION_DIAG; 9]);
        assert_eq!(policy_quality(idx), Some(0));
    }

    #[test]
    fn all_left_policy_never_terminates() {
        let idx = PolicyFamilyIndex::encode([ACTION_LEFT; 9]);
        assert_eq!(policy_quality(idx), None);
    }

    #[test]
    fn diversity_is_a_metric() {
        let a = PolicyFamilyIndex(123_456);
        assert_eq!(pairwise_diversity(a, a), 0);
        let mut actions = a.decode();
        actions[4] = (actions[4] + 1) % N_ACTIONS;
        let b = PolicyFamilyIndex::encode(actions);
        assert_eq!(pairwise_diversity(a, b), 1);
        assert_eq!(pairwise_diversity(b, a), 1);
        // Triangle inequality over a pseudo-random sweep of triples.
        for i in 0..200u64 {
            let x = PolicyFamilyIndex((i * 48_271) % FAMILY_SIZE);
            let y = PolicyFamilyIndex((i * 16_807 + 77) % FAMILY_SIZE);
            let z = PolicyFamilyIndex((i * 69_621 + 1013) % FAMILY_SIZE);
            assert!(
                pairwise_diversity(x, z) <= pairwise_diversity(x, y) + pairwise_diversity(y, z)
            );
        }
    }

    #[test]
    fn optimal_action_sets_shape() {
        let sets = optimal_action_sets();
        // Diagonal interior states admit exactly one optimal action, the
        // other six admit exactly two.
        let singles = sets.iter().filter(|s| s.len() == 1).count();
        let doubles = sets.iter().filter(|s| s.len() == 2).count();
        assert_eq!(singles, 3);
        assert_eq!(doubles, 6);
        for set in &sets {
            assert!(set.contains(&ACTION_DIAG));
        }
    }

    #[test]
    fn exact_value_of_near_greedy_optimal_policy() {
        // A sharply peaked softmax on shortest-path actions takes the 3-step
        // path with probability close to one, so the normalized value is
        // close to 1.
        let mut prefs = vec![0.0; N_STATES * N_ACTIONS];
        for s in 0..N_STATES as u32 {
            if s == GOAL {
                continue;
            }
            let a = if INTERIOR_STATES.contains(&s) {
                ACTION_DIAG
            } else {
                boundary_action(s)
            };
            prefs[s as usize * N_ACTIONS + a] = 30.0;
        }
        let pi = TabularSoftmaxPolicy::new(PolicyId(1), N_STATES, N_ACTIONS, prefs, 1.0);
        let v = exact_policy_value(&pi, &GridWorld::mdp_spec());
        assert!(v > 0.999, "got {v}");
    }

    #[test]
    fn exact_value_matches_monte_carlo() {
        use crate::mdp::{generate_trajectory, normalized_return};
        use rand::SeedableRng;
        let env = GridWorld::new();
        let spec = GridWorld::mdp_spec();
        let pi = TabularSoftmaxPolicy::uniform(PolicyId(9), N_STATES, N_ACTIONS);
        let exact = exact_policy_value(&pi, &spec);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 20_000;
        let mut acc = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let t = generate_trajectory(&env, &pi, &mut rng, &spec);
            let r = normalized_return(&t, &spec).unwrap();
            acc += r;
            sq += r * r;
        }
        let mean = acc / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "exact {exact} vs MC {mean} (se {se})"
        );
    }
}
