//! Off-policy evaluation: per-trajectory importance weighting against the
//! policy that generated each trajectory, one-sided Student-t lower bounds
//! and p-values on the weighted returns, and a step-up false-discovery-rate
//! selection that confirms a subset of candidate policies.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{normalized_return, MdpSpec, PolicyId, PolicyRef, StochasticPolicy, Trajectory};
use crate::stats::{mean, sample_std, t_cdf, t_quantile};

/// Log of the likelihood ratio of `target` to `behavior` along a
/// trajectory. Zero target probability on any taken action yields -inf
/// (weight 0); zero behavior probability is an error, since the behavior
/// policy demonstrably took that action.
pub fn log_importance_weight(
    traj: &Trajectory,
    target: &dyn StochasticPolicy,
    behavior: &dyn StochasticPolicy,
) -> Result<f64> {
    let mut log_w = 0.0f64;
    for tr in &traj.transitions {
        let p_b = behavior.action_probability(&tr.state, tr.action);
        if p_b <= 0.0 {
            return Err(Error::ZeroBehaviorProbability {
                state: tr.state.encode(),
                action: tr.action,
            });
        }
        let p_t = target.action_probability(&tr.state, tr.action);
        if p_t <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log_w += p_t.ln() - p_b.ln();
    }
    Ok(log_w)
}

pub fn importance_weight(
    traj: &Trajectory,
    target: &dyn StochasticPolicy,
    behavior: &dyn StochasticPolicy,
) -> Result<f64> {
    Ok(log_importance_weight(traj, target, behavior)?.exp())
}

/// One reweighted trajectory return: the trajectory's normalized return
/// scaled by the likelihood ratio of the evaluated policy to the
/// trajectory's own generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceWeightedReturn {
    pub value: f64,
    pub target_id: PolicyId,
    pub behavior_id: PolicyId,
    /// Position of the trajectory within the evaluated batch.
    pub traj_id: u64,
}

/// Importance weighted normalized return of one trajectory.
pub fn importance_weighted_return(
    traj: &Trajectory,
    target: &dyn StochasticPolicy,
    behavior: &dyn StochasticPolicy,
    spec: &MdpSpec,
) -> Result<f64> {
    let w = importance_weight(traj, target, behavior)?;
    Ok(w * normalized_return(traj, spec)?)
}

/// Importance weighted returns of a batch whose trajectories may come from
/// different behavior policies; each is reweighted against its own
/// generator, looked up by id. Empty batch yields an empty sequence.
pub fn iw_returns(
    trajs: &[Trajectory],
    target: &dyn StochasticPolicy,
    behaviors: &HashMap<PolicyId, PolicyRef>,
    spec: &MdpSpec,
) -> Result<Vec<ImportanceWeightedReturn>> {
    trajs
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let behavior = behaviors
                .get(&t.behavior_id)
                .ok_or(Error::UnknownBehaviorPolicy(t.behavior_id))?;
            Ok(ImportanceWeightedReturn {
                value: importance_weighted_return(t, target, behavior.as_ref(), spec)?,
                target_id: target.id(),
                behavior_id: t.behavior_id,
                traj_id: i as u64,
            })
        })
        .collect()
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidDelta(delta));
    }
    Ok(())
}

/// One-sided lower confidence bound at level 1-delta on the mean of
/// `samples`, from the Student-t quantile with n-1 degrees of freedom.
/// Zero sample variance collapses the bound to the common value.
pub fn t_lower_bound(samples: &[f64], delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { need: 2, got: n });
    }
    let m = mean(samples);
    let s = sample_std(samples);
    if s == 0.0 {
        return Ok(m);
    }
    let t = t_quantile(1.0 - delta, (n - 1) as f64);
    Ok(m - t * s / (n as f64).sqrt())
}

/// p-value of the one-sided test of H0: true mean <= `rho` against the
/// sample mean being larger. Small p favors the mean exceeding the
/// baseline. Zero sample variance degenerates to 0, 1, or 0.5 depending on
/// which side of the baseline the common value falls.
pub fn t_p_value(samples: &[f64], rho: f64) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::NotEnoughSamples { need: 2, got: n });
    }
    let m = mean(samples);
    let s = sample_std(samples);
    if s == 0.0 {
        return Ok(match m.partial_cmp(&rho) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        });
    }
    let stat = (m - rho) / (s / (n as f64).sqrt());
    Ok(1.0 - t_cdf(stat, (n - 1) as f64))
}

/// Step-up false-discovery-rate selection: sorts the p-values, finds the
/// largest rank i with p_(i) <= i * delta / r, and rejects that rank and
/// everything below it. Returns the rejected original indices, ascending.
pub fn bh_select(p_values: &[f64], delta: f64) -> Result<Vec<usize>> {
    check_delta(delta)?;
    let r = p_values.len();
    if r == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| {
        p_values[a]
            .partial_cmp(&p_values[b])
            .expect("p-values are not NaN")
            .then(a.cmp(&b))
    });
    let mut cut = 0;
    for (rank0, &idx) in order.iter().enumerate() {
        let rank = rank0 + 1;
        if p_values[idx] <= rank as f64 * delta / r as f64 {
            cut = rank;
        }
    }
    let mut rejected: Vec<usize> = order[..cut].to_vec();
    rejected.sort_unstable();
    Ok(rejected)
}

/// Verdict for one candidate inside a safety test.
#[derive(Debug, Clone)]
pub struct CandidateVerdict {
    pub candidate_id: PolicyId,
    pub p_value: f64,
    pub lower_bound: f64,
    pub confirmed: bool,
}

/// Outcome of testing a candidate set against a performance baseline.
#[derive(Debug, Clone)]
pub struct SafetyTestReport {
    pub rho_baseline: f64,
    pub delta: f64,
    /// One verdict per candidate, in the order candidates were given.
    pub verdicts: Vec<CandidateVerdict>,
}

impl SafetyTestReport {
    /// Ids of confirmed candidates, in candidate order.
    pub fn confirmed_ids(&self) -> Vec<PolicyId> {
        self.verdicts
            .iter()
            .filter(|v| v.confirmed)
            .map(|v| v.candidate_id)
            .collect()
    }

    /// Positions of confirmed candidates within the tested slice.
    pub fn confirmed_indices(&self) -> Vec<usize> {
        self.verdicts
            .iter()
            .enumerate()
            .filter(|(_, v)| v.confirmed)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Tests every candidate against the performance baseline `rho` on a shared
/// batch of trajectories, then applies false-discovery-rate control at
/// level `delta` across the candidates. Candidates whose null (true
/// performance at or below the baseline) is rejected come back confirmed.
/// With one candidate this reduces to a single t-test at level delta.
pub fn safety_test(
    candidates: &[PolicyRef],
    test_data: &[Trajectory],
    behaviors: &HashMap<PolicyId, PolicyRef>,
    spec: &MdpSpec,
    delta: f64,
    rho: f64,
) -> Result<SafetyTestReport> {
    check_delta(delta)?;
    if test_data.len() < 2 {
        return Err(Error::NotEnoughSamples {
            need: 2,
            got: test_data.len(),
        });
    }
    let per_candidate: Vec<Result<(f64, f64)>> = exec::map_slice(candidates, |cand| {
        let returns = iw_returns(test_data, cand.as_ref(), behaviors, spec)?;
        let values: Vec<f64> = returns.iter().map(|r| r.value).collect();
        Ok((t_p_value(&values, rho)?, t_lower_bound(&values, delta)?))
    });
    let mut verdicts = Vec::with_capacity(candidates.len());
    let mut p_values = Vec::with_capacity(candidates.len());
    for (cand, r) in candidates.iter().zip(per_candidate) {
        let (p, lb) = r?;
        p_values.push(p);
        verdicts.push(CandidateVerdict {
            candidate_id: cand.id(),
            p_value: p,
            lower_bound: lb,
            confirmed: false,
        });
    }
    for idx in bh_select(&p_values, delta)? {
        verdicts[idx].confirmed = true;
    }
    Ok(SafetyTestReport {
        rho_baseline: rho,
        delta,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::gridworld::{GridWorld, N_ACTIONS, N_STATES};
    use crate::mdp::{generate_trajectory, State, TabularSoftmaxPolicy, Transition};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn traj_with_actions(actions: &[usize], behavior: PolicyId) -> Trajectory {
        let transitions = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| Transition {
                state: State::Discrete(i as u32 % N_STATES as u32),
                action: a,
                reward: -1.0,
                next_state: State::Discrete((i as u32 + 1) % N_STATES as u32),
                terminal: false,
            })
            .collect();
        Trajectory {
            transitions,
            behavior_id: behavior,
        }
    }

    fn peaked_policy(id: u64, action: usize, strength: f64) -> TabularSoftmaxPolicy {
        let mut prefs = vec![0.0; N_STATES * N_ACTIONS];
        for s in 0..N_STATES {
            prefs[s * N_ACTIONS + action] = strength;
        }
        TabularSoftmaxPolicy::new(PolicyId(id), N_STATES, N_ACTIONS, prefs, 1.0)
    }

    /// Policy with externally fixed per-action probabilities, the same in
    /// every state.
    struct FixedProbs {
        id: PolicyId,
        probs: Vec<f64>,
    }

    impl StochasticPolicy for FixedProbs {
        fn id(&self) -> PolicyId {
            self.id
        }
        fn n_actions(&self) -> usize {
            self.probs.len()
        }
        fn action_probabilities(&self, _state: &State) -> Vec<f64> {
            self.probs.clone()
        }
    }

    #[test]
    fn weight_of_identical_policies_is_one() {
        let pi = TabularSoftmaxPolicy::uniform(PolicyId(1), N_STATES, N_ACTIONS);
        let traj = traj_with_actions(&[0, 3, 2, 1], PolicyId(1));
        let w = importance_weight(&traj, &pi, &pi).unwrap();
        assert_relative_eq!(w, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn two_step_weight_direct_product() {
        // Step probabilities 0.5/0.25 and 0.5/0.5 multiply to 2.
        let target = FixedProbs {
            id: PolicyId(1),
            probs: vec![0.5, 0.5, 0.0, 0.0, 0.0],
        };
        let behavior = FixedProbs {
            id: PolicyId(2),
            probs: vec![0.25, 0.5, 0.125, 0.0625, 0.0625],
        };
        let traj = traj_with_actions(&[0, 1], PolicyId(2));
        let w = importance_weight(&traj, &target, &behavior).unwrap();
        assert_relative_eq!(w, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn weight_matches_product_of_ratios() {
        let target = peaked_policy(1, 0, 1.0);
        let behavior = TabularSoftmaxPolicy::uniform(PolicyId(2), N_STATES, N_ACTIONS);
        let traj = traj_with_actions(&[0, 0, 4], PolicyId(2));
        // Direct product, no logs.
        let mut expected = 1.0;
        for tr in &traj.transitions {
            expected *= target.action_probability(&tr.state, tr.action)
                / behavior.action_probability(&tr.state, tr.action);
        }
        let w = importance_weight(&traj, &target, &behavior).unwrap();
        assert_relative_eq!(w, expected, max_relative = 1e-12);
    }

    #[test]
    fn zero_behavior_probability_is_an_error() {
        let behavior = FixedProbs {
            id: PolicyId(7),
            probs: vec![1.0, 0.0, 0.0, 0.0, 0.0],
        };
        let target = TabularSoftmaxPolicy::uniform(PolicyId(1), N_STATES, N_ACTIONS);
        let traj = traj_with_actions(&[0, 2], PolicyId(7));
        let err = importance_weight(&traj, &target, &behavior).unwrap_err();
        assert!(matches!(err, Error::ZeroBehaviorProbability { action: 2, .. }));
    }

    #[test]
    fn zero_target_probability_gives_zero_weight() {
        let target = FixedProbs {
            id: PolicyId(7),
            probs: vec![1.0, 0.0, 0.0, 0.0, 0.0],
        };
        let behavior = TabularSoftmaxPolicy::uniform(PolicyId(2), N_STATES, N_ACTIONS);
        let traj = traj_with_actions(&[0, 2], PolicyId(2));
        let w = importance_weight(&traj, &target, &behavior).unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn iw_returns_on_policy_equal_plain_returns() {
        use crate::mdp::normalized_return;
        let env = GridWorld::new();
        let spec = GridWorld::mdp_spec();
        let pi = Arc::new(TabularSoftmaxPolicy::uniform(PolicyId(1), N_STATES, N_ACTIONS));
        let mut behaviors: HashMap<PolicyId, PolicyRef> = HashMap::new();
        behaviors.insert(PolicyId(1), pi.clone() as PolicyRef);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<Trajectory> = (0..50)
            .map(|_| generate_trajectory(&env, pi.as_ref(), &mut rng, &spec))
            .collect();
        let rs = iw_returns(&data, pi.as_ref(), &behaviors, &spec).unwrap();
        assert_eq!(rs.len(), 50);
        for (i, r) in rs.iter().enumerate() {
            assert_eq!(r.traj_id, i as u64);
            assert_eq!(r.behavior_id, PolicyId(1));
            assert_relative_eq!(
                r.value,
                normalized_return(&data[i], &spec).unwrap(),
                max_relative = 1e-12
            );
        }
        // Empty batch.
        assert!(iw_returns(&[], pi.as_ref(), &behaviors, &spec).unwrap().is_empty());
    }

    #[test]
    fn importance_sampling_is_unbiased_on_gridworld() {
        // Monte Carlo importance-weighted mean against the exact value from
        // dynamic programming, behavior uniform, target mildly peaked on
        // the diagonal move.
        use crate::env::gridworld::exact_policy_value;
        let env = GridWorld::new();
        let spec = GridWorld::mdp_spec();
        let behavior = TabularSoftmaxPolicy::uniform(PolicyId(1), N_STATES, N_ACTIONS);
        let target = peaked_policy(2, 0, 0.8);
        let exact = exact_policy_value(&target, &spec);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 30_000;
        let mut acc = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let t = generate_trajectory(&env, &behavior, &mut rng, &spec);
            let x = importance_weighted_return(&t, &target, &behavior, &spec).unwrap();
            acc += x;
            sq += x * x;
        }
        let m = acc / n as f64;
        let se = ((sq / n as f64 - m * m) / n as f64).sqrt();
        assert!(
            (m - exact).abs() < 4.0 * se,
            "exact {exact}, estimate {m}, se {se}"
        );
    }

    #[test]
    fn lower_bound_worked_example() {
        // mean 0.5, sample std 0.1, n = 3, delta = 0.05:
        //   0.5 - 2.9200 * 0.1 / sqrt(3) = 0.331414...
        let samples = [0.4, 0.5, 0.6];
        let lb = t_lower_bound(&samples, 0.05).unwrap();
        assert_relative_eq!(lb, 0.5 - 2.9200 * 0.1 / 3.0f64.sqrt(), max_relative = 1e-4);
    }

    #[test]
    fn lower_bound_edge_cases() {
        assert!(matches!(
            t_lower_bound(&[0.5], 0.05),
            Err(Error::NotEnoughSamples { need: 2, got: 1 })
        ));
        assert!(matches!(
            t_lower_bound(&[0.5, 0.6], 0.0),
            Err(Error::InvalidDelta(_))
        ));
        assert!(matches!(
            t_lower_bound(&[0.5, 0.6], 0.5),
            Err(Error::InvalidDelta(_))
        ));
        // Zero variance collapses to the common value.
        assert_eq!(t_lower_bound(&[0.3, 0.3, 0.3], 0.05).unwrap(), 0.3);
    }

    #[test]
    fn looser_delta_gives_higher_bound() {
        let samples = [0.4, 0.5, 0.6];
        let tight = t_lower_bound(&samples, 0.05).unwrap();
        let loose = t_lower_bound(&samples, 0.25).unwrap();
        assert!(loose > tight);
        assert!(tight < mean(&samples));
    }

    #[test]
    fn p_value_is_half_at_the_sample_mean() {
        let samples = [0.2, 0.4, 0.6, 0.8];
        let p = t_p_value(&samples, 0.5).unwrap();
        assert_relative_eq!(p, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn p_value_inverts_the_lower_bound() {
        // Baseline at the delta-level bound recovers p = delta.
        let samples = [0.4, 0.5, 0.6];
        let lb = t_lower_bound(&samples, 0.05).unwrap();
        let p = t_p_value(&samples, lb).unwrap();
        assert_relative_eq!(p, 0.05, max_relative = 1e-8);
    }

    #[test]
    fn p_value_monotone_in_baseline() {
        let samples = [0.2, 0.4, 0.6, 0.8];
        let mut last = -1.0;
        for rho in [-0.5, 0.0, 0.3, 0.5, 0.7, 1.0] {
            let p = t_p_value(&samples, rho).unwrap();
            assert!(p > last);
            last = p;
        }
        // Far-below mean: p near 1.
        assert!(t_p_value(&samples, 50.0).unwrap() > 0.999);
    }

    #[test]
    fn p_value_zero_variance_cases() {
        let samples = [0.5, 0.5, 0.5];
        assert_eq!(t_p_value(&samples, 0.4).unwrap(), 0.0);
        assert_eq!(t_p_value(&samples, 0.6).unwrap(), 1.0);
        assert_eq!(t_p_value(&samples, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn p_value_agrees_with_bound_at_the_boundary() {
        let samples = [0.31, 0.44, 0.52, 0.58, 0.66, 0.49];
        for delta in [0.01, 0.05, 0.2] {
            let lb = t_lower_bound(&samples, delta).unwrap();
            let p = t_p_value(&samples, lb).unwrap();
            assert_relative_eq!(p, delta, max_relative = 1e-8);
        }
    }

    #[test]
    fn step_up_single_and_small_panels() {
        // One hypothesis: rejected iff p <= delta.
        assert_eq!(bh_select(&[0.04], 0.05).unwrap(), vec![0]);
        assert!(bh_select(&[0.06], 0.05).unwrap().is_empty());
        // Thresholds 0.0167/0.0333/0.05: only the smallest qualifies.
        assert_eq!(bh_select(&[0.01, 0.04, 0.20], 0.05).unwrap(), vec![0]);
        // Largest rank satisfied pulls in everything below it.
        assert_eq!(bh_select(&[0.01, 0.02, 0.04], 0.05).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn step_up_rejection_hand_example() {
        // Thresholds at delta=0.05, r=5: 0.01, 0.02, 0.03, 0.04, 0.05.
        // Rank 4 (p=0.04) is the last satisfied, so the smallest four are
        // rejected even though p=0.013 alone would fail its own rank-2 cut
        // under a plain per-test correction.
        let p = [0.30, 0.013, 0.04, 0.01, 0.02];
        let rejected = bh_select(&p, 0.05).unwrap();
        assert_eq!(rejected, vec![1, 2, 3, 4]);
    }

    #[test]
    fn step_up_extremes() {
        assert!(bh_select(&[], 0.05).unwrap().is_empty());
        assert!(bh_select(&[0.9, 0.8, 1.0], 0.05).unwrap().is_empty());
        assert_eq!(bh_select(&[0.0, 0.0, 0.0], 0.05).unwrap(), vec![0, 1, 2]);
        assert!(matches!(bh_select(&[0.5], 0.0), Err(Error::InvalidDelta(_))));
    }

    #[test]
    fn step_up_rejects_at_least_per_test_correction() {
        // Pseudo-random p-value panels: everything at or below delta/r must
        // be rejected, and nothing above delta can be.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        for _ in 0..200 {
            let r = rng.random_range(1..12);
            let p: Vec<f64> = (0..r).map(|_| rng.random::<f64>()).collect();
            let delta = 0.1;
            let rejected = bh_select(&p, delta).unwrap();
            for (i, &pi) in p.iter().enumerate() {
                if pi <= delta / r as f64 {
                    assert!(rejected.contains(&i), "p={pi} r={r}");
                }
                if pi > delta {
                    assert!(!rejected.contains(&i), "p={pi} r={r}");
                }
            }
        }
    }

    #[test]
    fn safety_test_separates_reachable_from_unreachable_baseline() {
        // Behavior = uniform; the dataset is on-policy for it. A candidate
        // equal to the behavior policy has weights 1 and true value around
        // 0.5; a tiny baseline confirms it, an unreachable one cannot.
        let env = GridWorld::new();
        let spec = GridWorld::mdp_spec();
        let uniform = Arc::new(TabularSoftmaxPolicy::uniform(PolicyId(1), N_STATES, N_ACTIONS));
        let mut behaviors: HashMap<PolicyId, PolicyRef> = HashMap::new();
        behaviors.insert(PolicyId(1), uniform.clone() as PolicyRef);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Trajectory> = (0..200)
            .map(|_| generate_trajectory(&env, uniform.as_ref(), &mut rng, &spec))
            .collect();
        let candidates: Vec<PolicyRef> = vec![uniform.clone() as PolicyRef];

        let report = safety_test(&candidates, &data, &behaviors, &spec, 0.05, 0.05).unwrap();
        assert_eq!(report.confirmed_ids(), vec![PolicyId(1)]);
        assert!(report.verdicts[0].lower_bound > 0.05);

        let report = safety_test(&candidates, &data, &behaviors, &spec, 0.05, 1.0).unwrap();
        assert!(report.confirmed_ids().is_empty());
        assert!(report.verdicts[0].p_value > 0.9);
    }

    #[test]
    fn safety_test_unknown_behavior_errors() {
        let spec = GridWorld::mdp_spec();
        let uniform = Arc::new(TabularSoftmaxPolicy::uniform(PolicyId(1), N_STATES, N_ACTIONS));
        let behaviors: HashMap<PolicyId, PolicyRef> = HashMap::new();
        let data = vec![
            traj_with_actions(&[0, 1], PolicyId(42)),
            traj_with_actions(&[2], PolicyId(42)),
        ];
        let err = safety_test(&[uniform as PolicyRef], &data, &behaviors, &spec, 0.05, 0.05)
            .unwrap_err();
        assert!(matches!(err, Error::UnknownBehaviorPolicy(PolicyId(42))));
    }
}
