//! Importance sampling variance analytics on finite supports: how the
//! allocation of a sample budget across several proposal distributions
//! shapes per-target estimator variances, why the equal split is worst-case
//! optimal, and trajectory-set diversity measures (joint state-action
//! entropy, pairwise policy diversity histograms).

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::gridworld;
use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{StateKey, Trajectory};
use crate::stats::{mean, sample_variance};

const DENSITY_SUM_TOLERANCE: f64 = 1e-9;

/// Target densities p_1..p_r, proposal densities q_1..q_m, and a payoff f,
/// all over a shared finite support. Estimating E_{p_j}[f] from samples of
/// q_t requires every proposal to cover every point where some p_j * f is
/// nonzero.
#[derive(Debug, Clone)]
pub struct DensityPair {
    targets: Vec<Vec<f64>>,
    proposals: Vec<Vec<f64>>,
    payoff: Vec<f64>,
}

impl DensityPair {
    pub fn new(
        targets: Vec<Vec<f64>>,
        proposals: Vec<Vec<f64>>,
        payoff: Vec<f64>,
    ) -> Result<Self> {
        let support = payoff.len();
        if support == 0 || targets.is_empty() || proposals.is_empty() {
            return Err(Error::InvalidDensity(
                "need at least one target, one proposal, and a nonempty support".into(),
            ));
        }
        for (label, rows) in [("target", &targets), ("proposal", &proposals)] {
            for (i, row) in rows.iter().enumerate() {
                if row.len() != support {
                    return Err(Error::InvalidDensity(format!(
                        "{label} {i} has {} entries, support has {support}",
                        row.len()
                    )));
                }
                if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(Error::InvalidDensity(format!(
                        "{label} {i} has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > DENSITY_SUM_TOLERANCE {
                    return Err(Error::InvalidDensity(format!(
                        "{label} {i} sums to {sum}, not 1"
                    )));
                }
            }
        }
        for x in 0..support {
            let needed = targets.iter().any(|p| p[x] * payoff[x] != 0.0);
            if needed && proposals.iter().any(|q| q[x] <= 0.0) {
                return Err(Error::InvalidDensity(format!(
                    "support point {x} carries target mass but a proposal assigns it zero"
                )));
            }
        }
        Ok(DensityPair {
            targets,
            proposals,
            payoff,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }

    pub fn n_proposals(&self) -> usize {
        self.proposals.len()
    }

    pub fn support_size(&self) -> usize {
        self.payoff.len()
    }

    /// E_{p_j}[f], the quantity every proposal estimates without bias.
    pub fn expectation(&self, j: usize) -> f64 {
        self.targets[j]
            .iter()
            .zip(&self.payoff)
            .map(|(p, f)| p * f)
            .sum()
    }

    /// Closed-form estimator variances: for a draw x ~ q_t, the variance of
    /// p_j(x) f(x) / q_t(x) is sum_x (p_j f)^2 / q_t - mu_j^2.
    pub fn analytic_profile(&self) -> VarianceProfile {
        let v = (0..self.n_targets())
            .map(|j| {
                let mu = self.expectation(j);
                (0..self.n_proposals())
                    .map(|t| {
                        let second: f64 = (0..self.support_size())
                            .filter(|&x| self.targets[j][x] * self.payoff[x] != 0.0)
                            .map(|x| {
                                let pf = self.targets[j][x] * self.payoff[x];
                                pf * pf / self.proposals[t][x]
                            })
                            .sum();
                        (second - mu * mu).max(0.0)
                    })
                    .collect()
            })
            .collect();
        VarianceProfile::new(v).expect("analytic entries are finite and nonnegative")
    }

    /// Same matrix estimated from `draws` Monte Carlo samples per proposal.
    pub fn monte_carlo_profile(&self, draws: usize, rng: &mut ChaCha8Rng) -> VarianceProfile {
        assert!(draws >= 2, "sample variance needs at least 2 draws");
        let r = self.n_targets();
        let mut v = vec![vec![0.0; self.n_proposals()]; r];
        for (t, q) in self.proposals.iter().enumerate() {
            let cumulative: Vec<f64> = q
                .iter()
                .scan(0.0, |acc, p| {
                    *acc += p;
                    Some(*acc)
                })
                .collect();
            let mut samples = vec![Vec::with_capacity(draws); r];
            for _ in 0..draws {
                let u: f64 = rng.random();
                let x = cumulative.iter().position(|&c| u < c).unwrap_or(q.len() - 1);
                for (j, s) in samples.iter_mut().enumerate() {
                    s.push(self.targets[j][x] * self.payoff[x] / q[x]);
                }
            }
            for (j, s) in samples.iter().enumerate() {
                v[j][t] = sample_variance(s);
            }
        }
        VarianceProfile::new(v).expect("sample variances are finite and nonnegative")
    }
}

/// Matrix of per-draw estimator variances, one row per target, one column
/// per proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProfile {
    v: Vec<Vec<f64>>,
}

impl VarianceProfile {
    pub fn new(v: Vec<Vec<f64>>) -> Result<Self> {
        if v.is_empty() || v[0].is_empty() {
            return Err(Error::InvalidDensity("variance profile is empty".into()));
        }
        let m = v[0].len();
        for row in &v {
            if row.len() != m {
                return Err(Error::InvalidDensity(
                    "variance profile rows have unequal lengths".into(),
                ));
            }
            if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
                return Err(Error::InvalidDensity(
                    "variance profile entries must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(VarianceProfile { v })
    }

    pub fn n_targets(&self) -> usize {
        self.v.len()
    }

    pub fn n_proposals(&self) -> usize {
        self.v[0].len()
    }

    pub fn get(&self, j: usize, t: usize) -> f64 {
        self.v[j][t]
    }
}

/// Variance of the mean of n i.i.d. draws from proposal t targeting j.
pub fn single_is_variance(profile: &VarianceProfile, j: usize, t: usize, n: u64) -> f64 {
    assert!(n >= 1);
    profile.get(j, t) / n as f64
}

fn check_allocation(profile: &VarianceProfile, k: &[u64], n: u64) -> Result<()> {
    if k.len() != profile.n_proposals() {
        return Err(Error::AllocationProfileMismatch {
            alloc: k.len(),
            profile: profile.n_proposals(),
        });
    }
    assert_eq!(k.iter().sum::<u64>(), n, "allocation must sum to n");
    Ok(())
}

/// Variance of the combined estimator when the n-sample budget is split
/// across proposals as k: (1/n^2) sum_t k_t V[j][t]. Putting the whole
/// budget on one proposal recovers `single_is_variance`.
pub fn multi_is_variance(profile: &VarianceProfile, j: usize, k: &[u64], n: u64) -> Result<f64> {
    check_allocation(profile, k, n)?;
    let weighted: f64 = k
        .iter()
        .enumerate()
        .map(|(t, &kt)| kt as f64 * profile.get(j, t))
        .sum();
    Ok(weighted / (n as f64 * n as f64))
}

/// How unevenly an allocation treats the targets: mean absolute deviation
/// of the per-target combined variances from their average.
pub fn uniformity_objective(profile: &VarianceProfile, k: &[u64], n: u64) -> Result<f64> {
    check_allocation(profile, k, n)?;
    let r = profile.n_targets();
    let per_target: Vec<f64> = (0..r)
        .map(|j| multi_is_variance(profile, j, k, n))
        .collect::<Result<_>>()?;
    let center = mean(&per_target);
    Ok(per_target.iter().map(|v| (v - center).abs()).sum::<f64>() / r as f64)
}

/// Largest L1 distance any allocation of the same budget can have from k:
/// 2 sum(k) - 2 min(k), attained by moving everything onto the smallest
/// coordinate's complement.
pub fn lemma1_bound(k: &[u64]) -> u64 {
    assert!(!k.is_empty());
    let n: u64 = k.iter().sum();
    2 * n - 2 * k.iter().min().copied().unwrap()
}

pub fn l1_distance(a: &[u64], b: &[u64]) -> u64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x.abs_diff(y)).sum()
}

/// Calls `f` on every ordered composition of n into m nonnegative parts.
pub fn for_each_composition<F: FnMut(&[u64])>(n: u64, m: usize, mut f: F) {
    assert!(m >= 1);
    fn rec<F: FnMut(&[u64])>(n: u64, parts: usize, buf: &mut Vec<u64>, f: &mut F) {
        if parts == 1 {
            buf.push(n);
            f(buf);
            buf.pop();
            return;
        }
        for v in 0..=n {
            buf.push(v);
            rec(n - v, parts - 1, buf, f);
            buf.pop();
        }
    }
    let mut buf = Vec::with_capacity(m);
    rec(n, m, &mut buf, &mut f);
}

/// Exhaustive check that the closed-form bound matches the true maximum L1
/// distance over all same-budget allocations, for every budget up to
/// `max_n` and every proposal count up to `max_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lemma1Report {
    pub instances: u64,
    pub mismatches: u64,
}

pub fn verify_lemma1(max_n: u64, max_m: usize) -> Lemma1Report {
    let mut instances = 0;
    let mut mismatches = 0;
    for n in 1..=max_n {
        for m in 1..=max_m {
            let mut allocations = Vec::new();
            for_each_composition(n, m, |k| allocations.push(k.to_vec()));
            for k in &allocations {
                let brute = allocations
                    .iter()
                    .map(|y| l1_distance(y, k))
                    .max()
                    .unwrap();
                instances += 1;
                if brute != lemma1_bound(k) {
                    mismatches += 1;
                }
            }
        }
    }
    Lemma1Report {
        instances,
        mismatches,
    }
}

/// Equal split of n across m proposals. Requires m to divide n.
pub fn equal_allocation(n: u64, m: usize) -> Vec<u64> {
    assert!(m >= 1 && n.is_multiple_of(m as u64), "m must divide n");
    vec![n / m as u64; m]
}

/// Best allocation for a profile by exhaustive search (ties broken by
/// enumeration order), together with its objective value.
pub fn optimal_allocation(profile: &VarianceProfile, n: u64) -> (Vec<u64>, f64) {
    let m = profile.n_proposals();
    let mut best: Option<(Vec<u64>, f64)> = None;
    for_each_composition(n, m, |k| {
        let obj = uniformity_objective(profile, k, n).expect("composition is a valid allocation");
        match &best {
            Some((_, cur)) if *cur <= obj => {}
            _ => best = Some((k.to_vec(), obj)),
        }
    });
    best.expect("at least one composition exists")
}

/// Worst-case-optimality check for the equal allocation: against the best
/// allocation k* of each random profile, the equal split is never farther
/// (in L1) than a budget-on-one-proposal allocation is on average, and that
/// average is exactly 2n - 2n/m no matter what k* is.
#[derive(Debug, Clone)]
pub struct Theorem1Report {
    pub n: u64,
    pub m: usize,
    pub trials: u32,
    /// Trials where ||k_eq - k*|| exceeded 2n - 2n/m.
    pub violations: u32,
    /// Trials where the average corner distance missed 2n - 2n/m exactly.
    pub expectation_mismatches: u32,
    pub max_equal_distance: u64,
    pub corner_mean_distance: u64,
}

impl Theorem1Report {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.expectation_mismatches == 0
    }
}

pub fn verify_theorem1(
    n: u64,
    m: usize,
    r: usize,
    trials: u32,
    rng: &mut ChaCha8Rng,
) -> Theorem1Report {
    assert!(m >= 1 && n.is_multiple_of(m as u64), "m must divide n");
    let k_eq = equal_allocation(n, m);
    // Integer identity: sum_t ||k^(t) - k*|| = sum_t (2n - 2 k*_t) = 2nm - 2n,
    // so the mean over corners is 2n - 2n/m.
    let corner_sum_expected = 2 * n * m as u64 - 2 * n;
    let mut violations = 0;
    let mut expectation_mismatches = 0;
    let mut max_equal_distance = 0;
    for _ in 0..trials {
        let v: Vec<Vec<f64>> = (0..r)
            .map(|_| (0..m).map(|_| rng.random_range(0.01..4.0)).collect())
            .collect();
        let profile = VarianceProfile::new(v).unwrap();
        let (k_star, _) = optimal_allocation(&profile, n);
        let d_eq = l1_distance(&k_eq, &k_star);
        max_equal_distance = max_equal_distance.max(d_eq);
        let corner_sum: u64 = (0..m)
            .map(|t| {
                let mut corner = vec![0u64; m];
                corner[t] = n;
                l1_distance(&corner, &k_star)
            })
            .sum();
        if corner_sum != corner_sum_expected {
            expectation_mismatches += 1;
        }
        // Compare m * d_eq <= corner_sum to stay in integers.
        if m as u64 * d_eq > corner_sum_expected {
            violations += 1;
        }
    }
    Theorem1Report {
        n,
        m,
        trials,
        violations,
        expectation_mismatches,
        max_equal_distance,
        corner_mean_distance: corner_sum_expected / m as u64,
    }
}

/// Average (over targets) variance of the equal allocation, next to the
/// expected average variance of putting the whole budget on one proposal
/// chosen uniformly. The two are equal by linearity of the variance in k.
pub fn verify_theorem2(profile: &VarianceProfile, n: u64) -> Result<(f64, f64)> {
    let m = profile.n_proposals();
    assert!(n.is_multiple_of(m as u64), "m must divide n");
    let r = profile.n_targets();
    let k_eq = equal_allocation(n, m);
    let equal_avg = (0..r)
        .map(|j| multi_is_variance(profile, j, &k_eq, n))
        .sum::<Result<f64>>()?
        / r as f64;
    let corner_avg = (0..m)
        .map(|t| {
            (0..r)
                .map(|j| single_is_variance(profile, j, t, n))
                .sum::<f64>()
                / r as f64
        })
        .sum::<f64>()
        / m as f64;
    Ok((equal_avg, corner_avg))
}

/// Entropy (nats) of the empirical distribution over (state, action) pairs
/// pooled across all transitions of all trajectories. Mixed batches that
/// spread visits over more of the state-action space score higher; the
/// value is capped by ln(#distinct pairs).
pub fn joint_entropy(trajs: &[Trajectory]) -> f64 {
    // Ordered map: the accumulation order of the entropy sum is fixed, so
    // identical batches give bitwise identical entropies.
    let mut counts: BTreeMap<(StateKey, usize), u64> = BTreeMap::new();
    let mut total = 0u64;
    for traj in trajs {
        for tr in &traj.transitions {
            *counts.entry((tr.state.key(), tr.action)).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum()
}

/// Pairwise-diversity census of the deterministic grid-world policy family,
/// bucketed by quality (total extra steps to goal): how many policies sit
/// at each quality level up to the cap, and the distribution of pairwise
/// interior-state disagreement counts within each bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QualityBucket {
    pub quality: u32,
    pub policy_count: u64,
    /// Unordered distinct pair counts, indexed by disagreement count
    /// 0..=interior-state count. Index 0 stays 0: a policy is never paired
    /// with itself, and distinct family members differ somewhere.
    pub diversity_pairs: Vec<u64>,
}

impl QualityBucket {
    pub fn total_pairs(&self) -> u64 {
        self.diversity_pairs.iter().sum()
    }

    pub fn mean_diversity(&self) -> f64 {
        let pairs = self.total_pairs();
        if pairs == 0 {
            return 0.0;
        }
        let weighted: u64 = self
            .diversity_pairs
            .iter()
            .enumerate()
            .map(|(d, &c)| d as u64 * c)
            .sum();
        weighted as f64 / pairs as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiversityHistogram {
    pub buckets: Vec<QualityBucket>,
}

pub fn diversity_histogram(quality_cap: u32) -> DiversityHistogram {
    let n_digits = gridworld::INTERIOR_STATES.len();
    let buckets = gridworld::family_members_up_to(quality_cap)
        .into_iter()
        .map(|(quality, members)| {
            let digits: Vec<[usize; 9]> =
                members.iter().map(|idx| idx.decode()).collect();
            let per_left = exec::map_collect_indexed(digits.len(), |i| {
                let mut hist = vec![0u64; n_digits + 1];
                for j in i + 1..digits.len() {
                    let d = digits[i]
                        .iter()
                        .zip(&digits[j])
                        .filter(|(a, b)| a != b)
                        .count();
                    hist[d] += 1;
                }
                hist
            });
            let mut diversity_pairs = vec![0u64; n_digits + 1];
            for hist in per_left {
                for (d, c) in hist.into_iter().enumerate() {
                    diversity_pairs[d] += c;
                }
            }
            QualityBucket {
                quality,
                policy_count: members.len() as u64,
                diversity_pairs,
            }
        })
        .collect();
    DiversityHistogram { buckets }
}
