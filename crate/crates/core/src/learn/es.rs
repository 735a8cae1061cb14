//! Gradient-free policy search over tabular softmax preferences. Fitness of
//! a parameter vector is the mean importance weighted return of its policy
//! on the training batch, reweighted trajectory by trajectory against each
//! trajectory's own behavior policy, with each weight truncated at the
//! square root of the batch size. The truncation bounds any single
//! trajectory's influence at sqrt(n)/n, so the search cannot inflate its
//! score by replaying one lucky trajectory, while weights near one (the
//! policies the safety test can actually certify) pass through untouched.
//!
//! Every search starts from zero preferences (the uniform policy), so
//! candidates trained on different resamples of the same batch drift apart
//! instead of collapsing onto a shared ancestor. Plus-selection keeps the
//! best parameters ever seen, so the best-fitness trace never decreases.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec;
use crate::learn::IterationGroup;
use crate::mdp::{
    normalized_return, MdpSpec, PolicyId, PolicyRef, TabularSoftmaxPolicy,
};

#[derive(Debug, Clone)]
pub struct EsConfig {
    pub n_states: usize,
    pub n_actions: usize,
    /// Parents kept per generation; an equal number of offspring is bred.
    pub population: usize,
    pub generations: usize,
    /// Standard deviation of the Gaussian preference perturbations.
    pub step_size: f64,
    pub temperature: f64,
}

impl EsConfig {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        EsConfig {
            n_states,
            n_actions,
            population: 20,
            generations: 30,
            step_size: 0.5,
            temperature: 1.0,
        }
    }
}

/// Search result: the best parameters found, their fitness, and the
/// best-so-far fitness after the initial population and each generation.
#[derive(Debug, Clone)]
pub struct EsOutcome {
    pub policy: TabularSoftmaxPolicy,
    pub best_fitness: f64,
    pub fitness_trace: Vec<f64>,
}

/// Training batch reduced to what fitness evaluation needs: per trajectory,
/// the visited (state, action) pairs, the log-likelihood under its own
/// behavior policy, and the normalized return.
struct PreparedTraj {
    steps: Vec<(u32, usize)>,
    log_q: f64,
    ret: f64,
}

fn prepare(
    data: &[IterationGroup],
    behaviors: &HashMap<PolicyId, PolicyRef>,
    spec: &MdpSpec,
) -> Result<Vec<PreparedTraj>> {
    let mut out = Vec::new();
    for group in data {
        for traj in &group.trajs {
            let behavior = behaviors
                .get(&traj.behavior_id)
                .ok_or(Error::UnknownBehaviorPolicy(traj.behavior_id))?;
            let mut steps = Vec::with_capacity(traj.len());
            let mut log_q = 0.0;
            for tr in &traj.transitions {
                let p = behavior.action_probability(&tr.state, tr.action);
                if p <= 0.0 {
                    return Err(Error::ZeroBehaviorProbability {
                        state: tr.state.encode(),
                        action: tr.action,
                    });
                }
                log_q += p.ln();
                steps.push((tr.state.discrete(), tr.action));
            }
            out.push(PreparedTraj {
                steps,
                log_q,
                ret: normalized_return(traj, spec)?,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::NotEnoughSamples { need: 1, got: 0 });
    }
    Ok(out)
}

/// Truncation scale for per-trajectory importance weights in the fitness,
/// as a fraction of sqrt(batch size). Growing with sqrt(n) keeps the
/// estimator consistent; the fraction is small enough that a handful of
/// exactly-replayed trajectories cannot dominate a small batch, which is
/// what makes search on resampled batches overfit their noise.
const WEIGHT_CAP_SCALE: f64 = 0.28;

/// Mean importance weighted return of the softmax policy given by `prefs`,
/// with each trajectory's weight truncated at a fraction of sqrt(batch
/// size).
fn fitness(prefs: &[f64], config: &EsConfig, prepared: &[PreparedTraj]) -> f64 {
    // Log-probability table for all (state, action) pairs once per
    // candidate; trajectories then only index into it.
    let mut log_pi = vec![0.0; config.n_states * config.n_actions];
    for s in 0..config.n_states {
        let row = &prefs[s * config.n_actions..(s + 1) * config.n_actions];
        let scaled: Vec<f64> = row.iter().map(|p| p / config.temperature).collect();
        let peak = scaled.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let log_z = scaled.iter().map(|v| (v - peak).exp()).sum::<f64>().ln() + peak;
        for a in 0..config.n_actions {
            log_pi[s * config.n_actions + a] = scaled[a] - log_z;
        }
    }
    let cap = WEIGHT_CAP_SCALE * (prepared.len() as f64).sqrt();
    let total: f64 = prepared
        .iter()
        .map(|t| {
            let log_p: f64 = t
                .steps
                .iter()
                .map(|&(s, a)| log_pi[s as usize * config.n_actions + a])
                .sum();
            (log_p - t.log_q).exp().min(cap) * t.ret
        })
        .sum();
    total / prepared.len() as f64
}

pub fn es_policy_search(
    data: &[IterationGroup],
    behaviors: &HashMap<PolicyId, PolicyRef>,
    spec: &MdpSpec,
    config: &EsConfig,
    seed: u64,
    id: PolicyId,
) -> Result<EsOutcome> {
    assert!(config.population >= 1);
    let prepared = prepare(data, behaviors, spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = config.n_states * config.n_actions;
    let perturb = |base: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        base.iter()
            .map(|&p| p + config.step_size * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    // Initial population: the uniform policy plus perturbations of it. All
    // randomness is drawn sequentially; only fitness evaluation fans out.
    let zero = vec![0.0; dim];
    let mut members: Vec<Vec<f64>> = vec![zero.clone()];
    while members.len() < config.population {
        members.push(perturb(&zero, &mut rng));
    }
    let mut scores = exec::map_slice(&members, |m| fitness(m, config, &prepared));
    let mut trace = Vec::with_capacity(config.generations + 1);
    let best_of = |scores: &[f64]| {
        scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    };
    trace.push(best_of(&scores));

    for _ in 0..config.generations {
        let offspring: Vec<Vec<f64>> = (0..config.population)
            .map(|j| perturb(&members[j], &mut rng))
            .collect();
        let offspring_scores = exec::map_slice(&offspring, |m| fitness(m, config, &prepared));
        // Plus-selection: keep the best `population` of parents and
        // offspring together. Offspring are listed first so the stable sort
        // prefers them on exact fitness ties, letting parameters that the
        // batch cannot distinguish keep drifting.
        let mut pool = offspring;
        let mut pool_scores = offspring_scores;
        pool.append(&mut members);
        pool_scores.append(&mut scores);
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| {
            pool_scores[b]
                .partial_cmp(&pool_scores[a])
                .expect("fitness values are finite")
        });
        order.truncate(config.population);
        members = order.iter().map(|&i| pool[i].clone()).collect();
        scores = order.iter().map(|&i| pool_scores[i]).collect();
        trace.push(scores[0]);
    }

    let best = scores
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(EsOutcome {
        policy: TabularSoftmaxPolicy::new(
            id,
            config.n_states,
            config.n_actions,
            members[best].clone(),
            config.temperature,
        ),
        best_fitness: scores[best],
        fitness_trace: trace,
    })
}
