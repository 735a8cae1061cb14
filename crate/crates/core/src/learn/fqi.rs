//! Fitted Q iteration on a cosine (Fourier) basis: repeated ridge
//! regressions of bootstrapped Bellman targets, one weight vector per
//! action. Features and per-action Gram factorizations depend only on the
//! batch, so they are built once and reused across sweeps; only the
//! regression targets move.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::learn::IterationGroup;
use crate::mdp::{PolicyId, State, StochasticPolicy, Transition};

#[derive(Debug, Clone)]
pub struct FqiConfig {
    /// Number of target-rebuild/refit sweeps.
    pub sweeps: usize,
    pub gamma: f64,
    /// Ridge coefficient added to every Gram diagonal; keeps each solve
    /// well posed regardless of batch rank.
    pub ridge: f64,
    pub order: u32,
}

impl Default for FqiConfig {
    fn default() -> Self {
        FqiConfig {
            sweeps: 60,
            gamma: 1.0,
            ridge: 1e-6,
            order: 3,
        }
    }
}

/// Action-value function over a box-bounded continuous state space:
/// Q(s, a) = w_a . phi(s) with phi_i(s) = cos(pi c_i . norm(s)) over all
/// integer coefficient vectors c with entries 0..=order.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierQ {
    order: u32,
    bounds: Vec<(f64, f64)>,
    n_actions: usize,
    /// One integer coefficient vector per basis term, lexicographic.
    coeffs: Vec<Vec<f64>>,
    /// One weight vector per action, len = n_terms.
    weights: Vec<Vec<f64>>,
}

impl FourierQ {
    pub fn new(order: u32, bounds: Vec<(f64, f64)>, n_actions: usize) -> Self {
        assert!(!bounds.is_empty() && n_actions >= 1);
        assert!(
            bounds.iter().all(|(lo, hi)| hi > lo),
            "state bounds must have positive width"
        );
        let coeffs = Self::build_coeffs(order, bounds.len());
        let n_terms = coeffs.len();
        FourierQ {
            order,
            bounds,
            n_actions,
            coeffs,
            weights: vec![vec![0.0; n_terms]; n_actions],
        }
    }

    fn build_coeffs(order: u32, dim: usize) -> Vec<Vec<f64>> {
        let base = order as u64 + 1;
        let n_terms = base.pow(dim as u32) as usize;
        (0..n_terms)
            .map(|mut idx| {
                let mut c = vec![0.0; dim];
                for slot in (0..dim).rev() {
                    c[slot] = (idx as u64 % base) as f64;
                    idx /= base as usize;
                }
                c
            })
            .collect()
    }

    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn with_weights(mut self, weights: Vec<Vec<f64>>) -> Self {
        assert_eq!(weights.len(), self.n_actions);
        assert!(weights.iter().all(|w| w.len() == self.n_terms()));
        assert!(weights.iter().flatten().all(|w| w.is_finite()));
        self.weights = weights;
        self
    }

    /// Scales each state component into [0,1] by the configured bounds,
    /// clamping stray values on the boundary.
    fn normalize(&self, s: &[f64]) -> Vec<f64> {
        assert_eq!(s.len(), self.bounds.len(), "state dimension mismatch");
        s.iter()
            .zip(&self.bounds)
            .map(|(&x, &(lo, hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn features(&self, s: &[f64]) -> Vec<f64> {
        let z = self.normalize(s);
        self.coeffs
            .iter()
            .map(|c| {
                let dot: f64 = c.iter().zip(&z).map(|(ci, zi)| ci * zi).sum();
                (std::f64::consts::PI * dot).cos()
            })
            .collect()
    }

    pub fn q_values(&self, s: &[f64]) -> Vec<f64> {
        let phi = self.features(s);
        self.weights
            .iter()
            .map(|w| w.iter().zip(&phi).map(|(wi, pi)| wi * pi).sum())
            .collect()
    }

    pub fn q_value(&self, s: &[f64], action: usize) -> f64 {
        self.q_values(s)[action]
    }

    /// Highest-value action, lowest index on ties.
    pub fn greedy_action(&self, s: &[f64]) -> usize {
        let q = self.q_values(s);
        let mut best = 0;
        for (a, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = a;
            }
        }
        best
    }
}

/// Per-sweep regression objectives (squared error plus the ridge penalty):
/// value of the pre-refit weights on the sweep's fresh targets, then of the
/// refitted weights on the same targets. The refit minimizes exactly this
/// objective, so it can only lower it.
#[derive(Debug, Clone, Default)]
pub struct FqiTrace {
    pub pre_refit: Vec<f64>,
    pub post_refit: Vec<f64>,
}

pub fn fqi_learn(
    data: &[IterationGroup],
    config: &FqiConfig,
    bounds: &[(f64, f64)],
    n_actions: usize,
) -> Result<FourierQ> {
    Ok(fqi_learn_traced(data, config, bounds, n_actions)?.0)
}

pub fn fqi_learn_traced(
    data: &[IterationGroup],
    config: &FqiConfig,
    bounds: &[(f64, f64)],
    n_actions: usize,
) -> Result<(FourierQ, FqiTrace)> {
    let transitions: Vec<&Transition> = data
        .iter()
        .flat_map(|g| g.trajs.iter())
        .flat_map(|t| t.transitions.iter())
        .collect();
    if transitions.is_empty() {
        return Err(Error::NotEnoughSamples { need: 1, got: 0 });
    }
    let mut q = FourierQ::new(config.order, bounds.to_vec(), n_actions);
    let n = transitions.len();
    let terms = q.n_terms();

    // Fixed across sweeps: state features, next-state features, rewards,
    // terminal flags, per-action row sets with factored Gram matrices.
    let phi = DMatrix::from_row_iterator(
        n,
        terms,
        transitions
            .iter()
            .flat_map(|tr| q.features(tr.state.continuous())),
    );
    let next_phi = DMatrix::from_row_iterator(
        n,
        terms,
        transitions
            .iter()
            .flat_map(|tr| q.features(tr.next_state.continuous())),
    );
    let rewards: Vec<f64> = transitions.iter().map(|tr| tr.reward).collect();
    let terminal: Vec<bool> = transitions.iter().map(|tr| tr.terminal).collect();
    let mut rows_by_action: Vec<Vec<usize>> = vec![Vec::new(); n_actions];
    for (i, tr) in transitions.iter().enumerate() {
        if tr.action >= n_actions {
            return Err(Error::InvalidAction {
                action: tr.action,
                n_actions,
            });
        }
        rows_by_action[tr.action].push(i);
    }
    struct ActionBlock {
        rows: Vec<usize>,
        phi: DMatrix<f64>,
        factor: Cholesky<f64, Dyn>,
    }
    let blocks: Vec<Option<ActionBlock>> = rows_by_action
        .into_iter()
        .map(|rows| {
            if rows.is_empty() {
                return None;
            }
            let phi_a = DMatrix::from_fn(rows.len(), terms, |r, c| phi[(rows[r], c)]);
            let mut gram = phi_a.transpose() * &phi_a;
            for d in 0..terms {
                gram[(d, d)] += config.ridge;
            }
            let factor = Cholesky::new(gram)
                .expect("ridge-regularized Gram matrix is positive definite");
            Some(ActionBlock {
                rows,
                phi: phi_a,
                factor,
            })
        })
        .collect();

    let mut trace = FqiTrace::default();
    for _ in 0..config.sweeps {
        // Fresh Bellman targets from the current weights.
        let w = DMatrix::from_fn(terms, n_actions, |t, a| q.weights[a][t]);
        let next_q = &next_phi * &w;
        let targets: Vec<f64> = (0..n)
            .map(|i| {
                if terminal[i] {
                    rewards[i]
                } else {
                    let best = (0..n_actions)
                        .map(|a| next_q[(i, a)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    rewards[i] + config.gamma * best
                }
            })
            .collect();
        let residual = |weights: &[Vec<f64>]| -> f64 {
            blocks
                .iter()
                .enumerate()
                .filter_map(|(a, b)| b.as_ref().map(|b| (a, b)))
                .map(|(a, b)| {
                    let w_a = DVector::from_column_slice(&weights[a]);
                    let y_a = DVector::from_iterator(
                        b.rows.len(),
                        b.rows.iter().map(|&i| targets[i]),
                    );
                    (&b.phi * &w_a - y_a).norm_squared() + config.ridge * w_a.norm_squared()
                })
                .sum()
        };
        trace.pre_refit.push(residual(&q.weights));
        for (a, block) in blocks.iter().enumerate() {
            let Some(block) = block else { continue };
            let y_a = DVector::from_iterator(
                block.rows.len(),
                block.rows.iter().map(|&i| targets[i]),
            );
            let rhs = block.phi.transpose() * y_a;
            let solved = block.factor.solve(&rhs);
            q.weights[a] = solved.iter().copied().collect();
        }
        trace.post_refit.push(residual(&q.weights));
    }
    Ok((q, trace))
}

/// Deployment wrapper that keeps full support around a greedy Q policy:
/// every non-greedy action retains `support_floor` probability.
#[derive(Debug, Clone)]
pub struct FourierGreedyPolicy {
    id: PolicyId,
    q: FourierQ,
    support_floor: f64,
}

impl FourierGreedyPolicy {
    pub fn q(&self) -> &FourierQ {
        &self.q
    }

    pub fn support_floor(&self) -> f64 {
        self.support_floor
    }
}

pub fn policy_from_q(q: FourierQ, support_floor: f64, id: PolicyId) -> FourierGreedyPolicy {
    assert!(
        support_floor > 0.0 && support_floor < 1.0 / q.n_actions() as f64,
        "support floor must lie in (0, 1/n_actions)"
    );
    FourierGreedyPolicy {
        id,
        q,
        support_floor,
    }
}

impl StochasticPolicy for FourierGreedyPolicy {
    fn id(&self) -> PolicyId {
        self.id
    }

    fn n_actions(&self) -> usize {
        self.q.n_actions()
    }

    fn action_probabilities(&self, state: &State) -> Vec<f64> {
        let n = self.q.n_actions();
        let greedy = self.q.greedy_action(state.continuous());
        let mut probs = vec![self.support_floor; n];
        probs[greedy] = 1.0 - (n - 1) as f64 * self.support_floor;
        probs
    }
}
