//! Run summaries, CSV persistence, and cross-algorithm aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::io;

use rand_chacha::ChaCha8Rng;

use crate::env::{gridworld, Domain};
use crate::error::{Error, Result};
use crate::improve::{Algo, ExperimentRun, IterationRecord};
use crate::mdp::{generate_trajectory, normalized_return, PolicyRef};
use crate::stats;

/// One run boiled down to the comparison metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: u64,
    pub algo: Algo,
    /// Sum over iterations of the mean normalized return (area under the
    /// learning curve).
    pub aggregate_return: f64,
    pub final_return: f64,
    /// First iteration confirming a truly optimal policy; meaningful only
    /// on the grid domain.
    pub iters_to_optimal: Option<u32>,
    /// Confirmations whose true value fell below their certified baseline.
    pub unsafe_count: u32,
}

/// One row of `iterations.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub run: u64,
    pub iter: u32,
    pub algo: Algo,
    pub n_deployed: usize,
    pub rho_baseline: f64,
    pub n_confirmed: usize,
    pub mean_return: f64,
    pub joint_entropy: f64,
}

pub fn iteration_rows(run: &ExperimentRun) -> Vec<IterationRow> {
    run.records
        .iter()
        .map(|rec: &IterationRecord| IterationRow {
            run: run.seed,
            iter: rec.iter,
            algo: run.algo,
            n_deployed: rec.deployed.len(),
            rho_baseline: rec.rho_baseline,
            n_confirmed: rec.confirmed.len(),
            mean_return: rec.mean_return,
            joint_entropy: rec.joint_entropy,
        })
        .collect()
}

pub fn write_iterations_csv<W: io::Write>(out: W, rows: &[IterationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run",
        "iter",
        "algo",
        "n_deployed",
        "rho_baseline",
        "n_confirmed",
        "mean_return",
        "joint_entropy",
    ])?;
    for r in rows {
        w.write_record([
            r.run.to_string(),
            r.iter.to_string(),
            r.algo.name().to_string(),
            r.n_deployed.to_string(),
            r.rho_baseline.to_string(),
            r.n_confirmed.to_string(),
            r.mean_return.to_string(),
            r.joint_entropy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<&'a str> {
    rec.get(idx)
        .ok_or_else(|| Error::parse(line, format!("missing column `{name}`")))
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
    line: usize,
) -> Result<T> {
    field(rec, idx, name, line)?
        .parse()
        .map_err(|_| Error::parse(line, format!("bad `{name}` value")))
}

pub fn read_iterations_csv<R: io::Read>(input: R) -> Result<Vec<IterationRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let algo_name: String = parse_field(&rec, 2, "algo", line)?;
        rows.push(IterationRow {
            run: parse_field(&rec, 0, "run", line)?,
            iter: parse_field(&rec, 1, "iter", line)?,
            algo: Algo::parse(&algo_name)
                .ok_or_else(|| Error::parse(line, format!("unknown algo `{algo_name}`")))?,
            n_deployed: parse_field(&rec, 3, "n_deployed", line)?,
            rho_baseline: parse_field(&rec, 4, "rho_baseline", line)?,
            n_confirmed: parse_field(&rec, 5, "n_confirmed", line)?,
            mean_return: parse_field(&rec, 6, "mean_return", line)?,
            joint_entropy: parse_field(&rec, 7, "joint_entropy", line)?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv<W: io::Write>(out: W, rows: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run",
        "algo",
        "aggregate_return",
        "final_return",
        "iters_to_optimal",
        "unsafe_count",
    ])?;
    for r in rows {
        w.write_record([
            r.run.to_string(),
            r.algo.name().to_string(),
            r.aggregate_return.to_string(),
            r.final_return.to_string(),
            r.iters_to_optimal.map(|v| v.to_string()).unwrap_or_default(),
            r.unsafe_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: io::Read>(input: R) -> Result<Vec<RunSummary>> {
    let mut reader = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let algo_name: String = parse_field(&rec, 1, "algo", line)?;
        let iters = field(&rec, 4, "iters_to_optimal", line)?;
        rows.push(RunSummary {
            run: parse_field(&rec, 0, "run", line)?,
            algo: Algo::parse(&algo_name)
                .ok_or_else(|| Error::parse(line, format!("unknown algo `{algo_name}`")))?,
            aggregate_return: parse_field(&rec, 2, "aggregate_return", line)?,
            final_return: parse_field(&rec, 3, "final_return", line)?,
            iters_to_optimal: if iters.is_empty() {
                None
            } else {
                Some(iters.parse().map_err(|_| {
                    Error::parse(line, "bad `iters_to_optimal` value")
                })?)
            },
            unsafe_count: parse_field(&rec, 5, "unsafe_count", line)?,
        });
    }
    Ok(rows)
}

/// True expected normalized return of a policy: exact dynamic programming
/// on the grid domain, a long seeded rollout average elsewhere.
pub fn true_value(domain: Domain, policy: &PolicyRef, episodes: usize, seed: u64) -> f64 {
    match domain {
        Domain::GridWorld => {
            gridworld::exact_policy_value(policy.as_ref(), &domain.mdp_spec())
        }
        Domain::MountainCar | Domain::Acrobot => {
            rollout_value(domain, policy, episodes, seed)
        }
    }
}

/// Mean normalized return over seeded rollouts.
pub fn rollout_value(domain: Domain, policy: &PolicyRef, episodes: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let env = domain.build();
    let spec = domain.mdp_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = (0..episodes)
        .map(|_| {
            let traj = generate_trajectory(env.as_ref(), policy.as_ref(), &mut rng, &spec);
            normalized_return(&traj, &spec).unwrap_or(0.0)
        })
        .sum();
    total / episodes as f64
}

/// Confirmations in one run whose true value sits below the baseline they
/// were certified against.
pub fn unsafe_confirmations(run: &ExperimentRun, value_of: &dyn Fn(&PolicyRef) -> f64) -> u32 {
    run.confirmations
        .iter()
        .filter(|c| value_of(&c.policy) < c.rho_baseline)
        .count() as u32
}

/// First iteration that confirmed a policy whose pre-mixing greedy action
/// map is truly optimal on the grid domain. Deployment always mixes, so
/// optimality is judged on the learned target, not the mixture.
pub fn iterations_to_optimal(run: &ExperimentRun) -> Option<u32> {
    run.confirmations
        .iter()
        .find(|c| {
            let target = c.table.to_policy();
            let map = gridworld::greedy_interior_map(target.as_ref());
            gridworld::is_optimal_interior_map(&map)
        })
        .map(|c| c.iter)
}

/// Fraction of confirmations (across runs) whose true value fell below
/// their certified baseline; zero confirmations reports (0, 0).
pub fn empirical_error_rate(
    runs: &[ExperimentRun],
    value_of: &dyn Fn(&PolicyRef) -> f64,
) -> (f64, usize) {
    let total: usize = runs.iter().map(|r| r.confirmations.len()).sum();
    if total == 0 {
        return (0.0, 0);
    }
    let bad: u32 = runs.iter().map(|r| unsafe_confirmations(r, value_of)).sum();
    (f64::from(bad) / total as f64, total)
}

pub fn summarize(run: &ExperimentRun, domain: Domain) -> RunSummary {
    let value_of =
        |p: &PolicyRef| true_value(domain, p, 200, run.seed.wrapping_mul(0x9e37_79b9) ^ 0xa5a5);
    RunSummary {
        run: run.seed,
        algo: run.algo,
        aggregate_return: run.records.iter().map(|r| r.mean_return).sum(),
        final_return: run.records.last().map(|r| r.mean_return).unwrap_or(0.0),
        iters_to_optimal: match domain {
            Domain::GridWorld => iterations_to_optimal(run),
            _ => None,
        },
        unsafe_count: unsafe_confirmations(run, &value_of),
    }
}

/// Per-algorithm aggregate over a matched set of runs.
#[derive(Debug, Clone)]
pub struct AlgoAggregate {
    pub algo: Algo,
    pub n_runs: usize,
    pub mean_aggregate_return: f64,
    pub mean_final_return: f64,
    pub mean_final_entropy: f64,
    /// Mean return per iteration, averaged over runs.
    pub curve: Vec<f64>,
}

/// Two-sided paired comparison at one iteration.
#[derive(Debug, Clone)]
pub struct PairedPoint {
    pub iter: u32,
    /// Mean over seed pairs of (first algo − second algo).
    pub mean_diff: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub de: AlgoAggregate,
    pub spi: AlgoAggregate,
    pub paired: Vec<PairedPoint>,
}

/// Two-sided paired t-test on matched differences. Degenerate cases: fewer
/// than two pairs or an all-zero difference carries no evidence (p = 1);
/// identical nonzero differences are treated as conclusive (p = 0).
pub fn paired_t_test(diffs: &[f64]) -> (f64, f64) {
    let n = diffs.len();
    if n < 2 {
        return (0.0, 1.0);
    }
    let mean = stats::mean(diffs);
    let sd = stats::sample_std(diffs);
    if sd == 0.0 && mean == 0.0 {
        return (0.0, 1.0);
    }
    // Constant differences leave an sd of a few ulps of the mean, not an
    // exact zero; treat anything at rounding scale as degenerate.
    if sd <= 1e-12 * mean.abs() {
        return (f64::INFINITY.copysign(mean), 0.0);
    }
    let t = mean / (sd / (n as f64).sqrt());
    let p = 2.0 * (1.0 - stats::t_cdf(t.abs(), (n - 1) as f64));
    (t, p.clamp(0.0, 1.0))
}

fn runs_by_algo(
    rows: &[IterationRow],
    algo: Algo,
) -> BTreeMap<u64, BTreeMap<u32, &IterationRow>> {
    let mut runs: BTreeMap<u64, BTreeMap<u32, &IterationRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.algo == algo) {
        runs.entry(row.run).or_default().insert(row.iter, row);
    }
    runs
}

fn algo_aggregate(
    runs: &BTreeMap<u64, BTreeMap<u32, &IterationRow>>,
    algo: Algo,
    iters: &[u32],
) -> AlgoAggregate {
    let n_runs = runs.len();
    let mut aggregate = 0.0;
    let mut final_return = 0.0;
    let mut final_entropy = 0.0;
    let mut curve = vec![0.0; iters.len()];
    for per_iter in runs.values() {
        aggregate += per_iter.values().map(|r| r.mean_return).sum::<f64>();
        if let Some(last) = per_iter.values().last() {
            final_return += last.mean_return;
            final_entropy += last.joint_entropy;
        }
        for (slot, it) in iters.iter().enumerate() {
            curve[slot] += per_iter[it].mean_return;
        }
    }
    let scale = 1.0 / n_runs.max(1) as f64;
    AlgoAggregate {
        algo,
        n_runs,
        mean_aggregate_return: aggregate * scale,
        mean_final_return: final_return * scale,
        mean_final_entropy: final_entropy * scale,
        curve: curve.into_iter().map(|c| c * scale).collect(),
    }
}

/// Merges matched-seed iteration rows of both algorithms into the
/// comparison table. Requires identical seed sets and iteration sets.
pub fn aggregate(rows: &[IterationRow]) -> Result<Comparison> {
    let de_runs = runs_by_algo(rows, Algo::De);
    let spi_runs = runs_by_algo(rows, Algo::Spi);
    if de_runs.is_empty() || spi_runs.is_empty() {
        return Err(Error::MismatchedRuns(
            "need runs from both algorithms".into(),
        ));
    }
    let de_seeds: BTreeSet<u64> = de_runs.keys().copied().collect();
    let spi_seeds: BTreeSet<u64> = spi_runs.keys().copied().collect();
    if de_seeds != spi_seeds {
        return Err(Error::MismatchedRuns(format!(
            "seed sets differ ({} vs {} runs)",
            de_seeds.len(),
            spi_seeds.len()
        )));
    }
    let iters: BTreeSet<u32> = de_runs
        .values()
        .next()
        .map(|m| m.keys().copied().collect())
        .unwrap_or_default();
    for (seed, per_iter) in de_runs.iter().chain(spi_runs.iter()) {
        let got: BTreeSet<u32> = per_iter.keys().copied().collect();
        if got != iters {
            return Err(Error::MismatchedRuns(format!(
                "run {seed} covers a different iteration set"
            )));
        }
    }
    let iters: Vec<u32> = iters.into_iter().collect();
    let paired = iters
        .iter()
        .map(|it| {
            let diffs: Vec<f64> = de_seeds
                .iter()
                .map(|s| de_runs[s][it].mean_return - spi_runs[s][it].mean_return)
                .collect();
            let (t, p) = paired_t_test(&diffs);
            PairedPoint {
                iter: *it,
                mean_diff: stats::mean(&diffs),
                t_statistic: t,
                p_value: p,
            }
        })
        .collect();
    Ok(Comparison {
        de: algo_aggregate(&de_runs, Algo::De, &iters),
        spi: algo_aggregate(&spi_runs, Algo::Spi, &iters),
        paired,
    })
}

pub fn write_comparison_csv<W: io::Write>(out: W, cmp: &Comparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iter",
        "de_mean_return",
        "spi_mean_return",
        "mean_diff",
        "t_statistic",
        "p_value",
    ])?;
    for (slot, point) in cmp.paired.iter().enumerate() {
        w.write_record([
            point.iter.to_string(),
            cmp.de.curve[slot].to_string(),
            cmp.spi.curve[slot].to_string(),
            point.mean_diff.to_string(),
            point.t_statistic.to_string(),
            point.p_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
