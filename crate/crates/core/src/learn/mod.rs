//! Candidate-policy generation: per-iteration stratified bootstrapping, the
//! two batch learners (Fourier-basis fitted Q iteration and evolutionary
//! softmax search), and the assembly step that turns one training batch
//! into a set of r deployable candidates mixed with a reference policy.

pub mod es;
pub mod fqi;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::mdp::{
    mix_policies, MdpSpec, PolicyId, PolicyRef, StochasticPolicy, TabularSoftmaxPolicy,
    Trajectory,
};

pub use es::{es_policy_search, EsConfig, EsOutcome};
pub use fqi::{fqi_learn, policy_from_q, FourierGreedyPolicy, FourierQ, FqiConfig};

/// Trajectories collected during one deployment iteration, kept together so
/// resampling can stratify by iteration.
#[derive(Debug, Clone)]
pub struct IterationGroup {
    pub iter: u32,
    pub trajs: Vec<Trajectory>,
}

/// Draws, independently for each iteration group, as many trajectories with
/// replacement as the group holds. Stratification keeps every iteration's
/// sample count intact in the resample.
pub fn bootstrap_per_iteration(
    groups: &[IterationGroup],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<IterationGroup>> {
    groups
        .iter()
        .map(|g| {
            if g.trajs.is_empty() {
                return Err(Error::EmptyBootstrapGroup { iter: g.iter });
            }
            let trajs = (0..g.trajs.len())
                .map(|_| g.trajs[rng.random_range(0..g.trajs.len())].clone())
                .collect();
            Ok(IterationGroup {
                iter: g.iter,
                trajs,
            })
        })
        .collect()
}

/// Everything a learner may consult besides the training batch: the domain
/// constants, the policies that generated the data (for importance
/// weighting), and the reference policy candidates are anchored to.
pub struct LearnContext<'a> {
    pub spec: &'a MdpSpec,
    pub behaviors: &'a HashMap<PolicyId, PolicyRef>,
    pub reference: &'a PolicyRef,
}

/// Serializable description of a learned policy's parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyTable {
    TabularSoftmax {
        id: PolicyId,
        n_states: usize,
        n_actions: usize,
        temperature: f64,
        /// Row-major (state, action) preferences.
        prefs: Vec<f64>,
    },
    FourierGreedy {
        id: PolicyId,
        n_actions: usize,
        order: u32,
        support_floor: f64,
        bounds: Vec<(f64, f64)>,
        /// One weight row per action.
        weights: Vec<Vec<f64>>,
    },
}

impl PolicyTable {
    pub fn id(&self) -> PolicyId {
        match self {
            PolicyTable::TabularSoftmax { id, .. } => *id,
            PolicyTable::FourierGreedy { id, .. } => *id,
        }
    }

    pub fn from_tabular(p: &TabularSoftmaxPolicy) -> Self {
        PolicyTable::TabularSoftmax {
            id: p.id(),
            n_states: p.n_states(),
            n_actions: p.n_actions(),
            temperature: p.temperature(),
            prefs: p.preferences().to_vec(),
        }
    }

    pub fn from_fourier(p: &FourierGreedyPolicy) -> Self {
        PolicyTable::FourierGreedy {
            id: p.id(),
            n_actions: p.q().n_actions(),
            order: p.q().order(),
            support_floor: p.support_floor(),
            bounds: p.q().bounds().to_vec(),
            weights: p.q().weights().to_vec(),
        }
    }

    pub fn to_policy(&self) -> PolicyRef {
        match self {
            PolicyTable::TabularSoftmax {
                id,
                n_states,
                n_actions,
                temperature,
                prefs,
            } => Arc::new(TabularSoftmaxPolicy::new(
                *id,
                *n_states,
                *n_actions,
                prefs.clone(),
                *temperature,
            )),
            PolicyTable::FourierGreedy {
                id,
                n_actions,
                order,
                support_floor,
                bounds,
                weights,
            } => {
                let q = FourierQ::new(*order, bounds.clone(), *n_actions)
                    .with_weights(weights.clone());
                Arc::new(policy_from_q(q, *support_floor, *id))
            }
        }
    }

    /// Writes the table as a line-oriented text block: optional `lineage`
    /// key=value lines, a header line, then one numeric row per state or
    /// action.
    pub fn write<W: Write>(&self, out: &mut W, lineage: &[(String, String)]) -> Result<()> {
        for (k, v) in lineage {
            assert!(!k.contains([' ', '=', '\n']) && !v.contains([' ', '\n']));
            writeln!(out, "lineage {k}={v}")?;
        }
        match self {
            PolicyTable::TabularSoftmax {
                id,
                n_states,
                n_actions,
                temperature,
                prefs,
            } => {
                writeln!(
                    out,
                    "tabular_softmax id={} n_states={n_states} n_actions={n_actions} \
                     temperature={temperature}",
                    id.0
                )?;
                for row in prefs.chunks(*n_actions) {
                    writeln!(out, "{}", join_numbers(row))?;
                }
            }
            PolicyTable::FourierGreedy {
                id,
                n_actions,
                order,
                support_floor,
                bounds,
                weights,
            } => {
                writeln!(
                    out,
                    "fourier_greedy id={} n_actions={n_actions} order={order} dim={} \
                     support_floor={support_floor}",
                    id.0,
                    bounds.len()
                )?;
                let flat: Vec<f64> = bounds.iter().flat_map(|&(lo, hi)| [lo, hi]).collect();
                writeln!(out, "{}", join_numbers(&flat))?;
                for row in weights {
                    writeln!(out, "{}", join_numbers(row))?;
                }
            }
        }
        Ok(())
    }

    /// Reads one table block written by [`PolicyTable::write`].
    pub fn read<R: BufRead>(input: R) -> Result<(Self, Vec<(String, String)>)> {
        let mut lines = input.lines().enumerate();
        let mut lineage = Vec::new();
        let header = loop {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(0, "missing policy header"))?;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("lineage ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::parse(line_no + 1, "lineage entry without `=`"))?;
                lineage.push((k.to_string(), v.to_string()));
            } else {
                break (line_no, line.to_string());
            }
        };
        let (header_no, header) = header;
        let mut fields = header.split_whitespace();
        let kind = fields.next().unwrap_or_default().to_string();
        let mut kv: HashMap<&str, &str> = HashMap::new();
        let rest: Vec<&str> = fields.collect();
        for f in &rest {
            let (k, v) = f
                .split_once('=')
                .ok_or_else(|| Error::parse(header_no + 1, format!("bad header field `{f}`")))?;
            kv.insert(k, v);
        }
        fn get<T: std::str::FromStr>(
            kv: &HashMap<&str, &str>,
            key: &str,
            line: usize,
        ) -> Result<T> {
            kv.get(key)
                .ok_or_else(|| Error::parse(line, format!("missing header field `{key}`")))?
                .parse()
                .map_err(|_| Error::parse(line, format!("unparseable header field `{key}`")))
        }
        let mut numeric_rows = |count: usize| -> Result<Vec<Vec<f64>>> {
            let mut rows = Vec::with_capacity(count);
            while rows.len() < count {
                let (line_no, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse(header_no + 1, "truncated policy table"))?;
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let row: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| {
                        t.parse()
                            .map_err(|_| Error::parse(line_no + 1, format!("bad number `{t}`")))
                    })
                    .collect::<Result<_>>()?;
                rows.push(row);
            }
            Ok(rows)
        };
        let table = match kind.as_str() {
            "tabular_softmax" => {
                let n_states: usize = get(&kv, "n_states", header_no + 1)?;
                let n_actions: usize = get(&kv, "n_actions", header_no + 1)?;
                let rows = numeric_rows(n_states)?;
                let prefs: Vec<f64> = rows.into_iter().flatten().collect();
                if prefs.len() != n_states * n_actions {
                    return Err(Error::parse(header_no + 1, "preference table shape mismatch"));
                }
                PolicyTable::TabularSoftmax {
                    id: PolicyId(get(&kv, "id", header_no + 1)?),
                    n_states,
                    n_actions,
                    temperature: get(&kv, "temperature", header_no + 1)?,
                    prefs,
                }
            }
            "fourier_greedy" => {
                let n_actions: usize = get(&kv, "n_actions", header_no + 1)?;
                let dim: usize = get(&kv, "dim", header_no + 1)?;
                let order: u32 = get(&kv, "order", header_no + 1)?;
                let mut rows = numeric_rows(1 + n_actions)?;
                let bounds_row = rows.remove(0);
                if bounds_row.len() != 2 * dim {
                    return Err(Error::parse(header_no + 1, "bounds row shape mismatch"));
                }
                let bounds: Vec<(f64, f64)> =
                    bounds_row.chunks(2).map(|c| (c[0], c[1])).collect();
                let n_terms = (order as usize + 1).pow(dim as u32);
                if rows.iter().any(|r| r.len() != n_terms) {
                    return Err(Error::parse(header_no + 1, "weight row shape mismatch"));
                }
                PolicyTable::FourierGreedy {
                    id: PolicyId(get(&kv, "id", header_no + 1)?),
                    n_actions,
                    order,
                    support_floor: get(&kv, "support_floor", header_no + 1)?,
                    bounds,
                    weights: rows,
                }
            }
            other => {
                return Err(Error::parse(
                    header_no + 1,
                    format!("unknown policy kind `{other}`"),
                ))
            }
        };
        Ok((table, lineage))
    }
}

fn join_numbers(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// A learner turns a training batch into policy parameters. `seed` is the
/// learner's entire source of randomness, so equal inputs and seeds must
/// reproduce the same table.
pub trait CandidateLearner: Send + Sync {
    fn learn(
        &self,
        data: &[IterationGroup],
        ctx: &LearnContext,
        seed: u64,
        id: PolicyId,
    ) -> Result<PolicyTable>;
}

/// Evolutionary softmax search learner for discrete domains.
pub struct EsLearner {
    pub config: EsConfig,
}

impl CandidateLearner for EsLearner {
    fn learn(
        &self,
        data: &[IterationGroup],
        ctx: &LearnContext,
        seed: u64,
        id: PolicyId,
    ) -> Result<PolicyTable> {
        let out = es_policy_search(data, ctx.behaviors, ctx.spec, &self.config, seed, id)?;
        Ok(PolicyTable::from_tabular(&out.policy))
    }
}

/// Fitted-Q learner for continuous domains. Deterministic: the seed is
/// unused.
pub struct FqiLearner {
    pub config: FqiConfig,
    pub bounds: Vec<(f64, f64)>,
    pub n_actions: usize,
    pub support_floor: f64,
}

impl CandidateLearner for FqiLearner {
    fn learn(
        &self,
        data: &[IterationGroup],
        ctx: &LearnContext,
        _seed: u64,
        id: PolicyId,
    ) -> Result<PolicyTable> {
        let mut config = self.config.clone();
        config.gamma = ctx.spec.gamma;
        let q = fqi_learn(data, &config, &self.bounds, self.n_actions)?;
        Ok(PolicyTable::from_fourier(&policy_from_q(
            q,
            self.support_floor,
            id,
        )))
    }
}

/// One deployable candidate: the policy actually deployed (mixture, unless
/// alpha is zero), plus the unmixed learned parameters for persistence.
pub struct Candidate {
    pub id: PolicyId,
    pub policy: PolicyRef,
    pub table: PolicyTable,
    pub mix_alpha: f64,
    pub base_id: Option<PolicyId>,
}

/// Builds r candidates from one training batch: the first learner call sees
/// the full batch, every later one an independent stratified bootstrap
/// resample. Each learned policy is anchored to the reference policy as a
/// `(1-alpha)`-weighted mixture (alpha = 0 deploys the raw policy).
pub fn gen_candidate_policies(
    data: &[IterationGroup],
    r: usize,
    learner: &dyn CandidateLearner,
    ctx: &LearnContext,
    alpha: f64,
    rng: &mut ChaCha8Rng,
    next_id: &mut u64,
) -> Result<Vec<Candidate>> {
    assert!(r >= 1, "need at least one candidate");
    struct Job {
        data: Option<Vec<IterationGroup>>,
        seed: u64,
        raw_id: u64,
        mixed_id: u64,
    }
    let mut jobs = Vec::with_capacity(r);
    for i in 0..r {
        let bootstrap_seed: u64 = rng.random();
        let train_seed: u64 = rng.random();
        let data_i = if i == 0 {
            None
        } else {
            let mut boot_rng = ChaCha8Rng::seed_from_u64(bootstrap_seed);
            Some(bootstrap_per_iteration(data, &mut boot_rng)?)
        };
        let raw_id = *next_id;
        let mixed_id = *next_id + 1;
        *next_id += 2;
        jobs.push(Job {
            data: data_i,
            seed: train_seed,
            raw_id,
            mixed_id,
        });
    }
    let tables: Vec<Result<PolicyTable>> = exec::map_slice(&jobs, |job| {
        learner.learn(
            job.data.as_deref().unwrap_or(data),
            ctx,
            job.seed,
            PolicyId(job.raw_id),
        )
    });
    jobs.iter()
        .zip(tables)
        .map(|(job, table)| {
            let table = table?;
            let raw = table.to_policy();
            if alpha == 0.0 {
                return Ok(Candidate {
                    id: PolicyId(job.raw_id),
                    policy: raw,
                    table,
                    mix_alpha: 0.0,
                    base_id: None,
                });
            }
            let mixed = mix_policies(
                ctx.reference.clone(),
                raw,
                alpha,
                PolicyId(job.mixed_id),
            )?;
            Ok(Candidate {
                id: PolicyId(job.mixed_id),
                policy: Arc::new(mixed),
                table,
                mix_alpha: alpha,
                base_id: Some(ctx.reference.id()),
            })
        })
        .collect()
}
