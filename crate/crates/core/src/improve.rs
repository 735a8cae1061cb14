//! The iterative improvement loop: deploy the current confirmed set with an
//! equal trajectory allocation, split the new data into train and test
//! pools, recompute the performance baseline, learn candidates, and replace
//! the deployed set with whatever passes the safety test. Forcing a single
//! candidate per iteration recovers the classic one-policy improvement
//! baseline.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{gridworld, Domain, Environment};
use crate::error::{Error, Result};
use crate::learn::{
    gen_candidate_policies, CandidateLearner, EsConfig, EsLearner, FqiConfig, FqiLearner,
    IterationGroup, LearnContext, PolicyTable,
};
use crate::mdp::{
    generate_trajectory, normalized_return, MdpSpec, PolicyId, PolicyRef, State,
    StochasticPolicy, TaggedTrajectory, Trajectory,
};
use crate::ope::{safety_test, t_lower_bound, CandidateVerdict};
use crate::theory::joint_entropy;

/// Per-policy trajectory counts for one deployment iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationVector {
    counts: Vec<usize>,
}

impl AllocationVector {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest minus smallest count.
    pub fn spread(&self) -> usize {
        let max = self.counts.iter().max().copied().unwrap_or(0);
        let min = self.counts.iter().min().copied().unwrap_or(0);
        max - min
    }
}

/// Splits n trajectories over m policies as evenly as integers allow:
/// everyone gets floor(n/m), and the remainder goes one each to the
/// lowest-indexed policies. The spread never exceeds one.
pub fn allocate(n: usize, m: usize) -> Result<AllocationVector> {
    if m == 0 || m > n {
        return Err(Error::InvalidAllocation { n, m });
    }
    let base = n / m;
    let remainder = n % m;
    let counts = (0..m).map(|i| base + usize::from(i < remainder)).collect();
    Ok(AllocationVector { counts })
}

/// Performance floor for the safety test: a one-sided lower confidence
/// bound on the mean normalized return of the accumulated test pool, with
/// no importance correction.
pub fn compute_rho_baseline(test_data: &[Trajectory], spec: &MdpSpec, delta: f64) -> Result<f64> {
    let returns: Vec<f64> = test_data
        .iter()
        .map(|t| normalized_return(t, spec))
        .collect::<Result<_>>()?;
    t_lower_bound(&returns, delta)
}

/// Which variant of the loop to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algo {
    /// Diverse candidate generation, r per iteration.
    De,
    /// Single-candidate baseline: r forced to 1.
    Spi,
}

impl Algo {
    pub fn name(&self) -> &'static str {
        match self {
            Algo::De => "de",
            Algo::Spi => "spi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "de" => Some(Algo::De),
            "spi" => Some(Algo::Spi),
            _ => None,
        }
    }
}

/// Learner block of an experiment configuration; the variant must match the
/// domain (tabular search needs discrete states, the fitted-Q learner needs
/// state bounds).
#[derive(Debug, Clone, PartialEq)]
pub enum LearnerSettings {
    Es {
        population: usize,
        generations: usize,
        step_size: f64,
        temperature: f64,
    },
    Fqi {
        sweeps: usize,
        order: u32,
        ridge: f64,
        support_floor: f64,
    },
}

/// Full description of one experiment run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: Domain,
    /// Deployment iterations.
    pub d: u32,
    /// Trajectories collected per iteration.
    pub n: usize,
    /// Candidates generated per iteration.
    pub r: usize,
    /// Confidence level of the safety test.
    pub delta: f64,
    /// Weight of the anchor policy in deployed mixtures.
    pub alpha: f64,
    /// Train share of each policy's batch as a ratio (numerator,
    /// denominator); the rest is test data.
    pub split: (u32, u32),
    pub seed: u64,
    pub learner: LearnerSettings,
}

impl ExperimentConfig {
    pub fn defaults(domain: Domain) -> Self {
        let (alpha, learner) = match domain {
            Domain::GridWorld => (
                0.3,
                LearnerSettings::Es {
                    population: 20,
                    generations: 30,
                    step_size: 0.5,
                    temperature: 1.1,
                },
            ),
            Domain::MountainCar | Domain::Acrobot => (
                0.9,
                LearnerSettings::Fqi {
                    sweeps: 60,
                    order: 3,
                    ridge: 1e-6,
                    support_floor: 1e-6,
                },
            ),
        };
        ExperimentConfig {
            domain,
            d: 25,
            n: 40,
            r: 5,
            delta: 0.05,
            alpha,
            split: (1, 5),
            seed: 0,
            learner,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidDelta(self.delta));
        }
        if self.d < 1 {
            return Err(Error::config("d", "need at least one iteration"));
        }
        if self.r < 1 {
            return Err(Error::config("r", "need at least one candidate"));
        }
        if self.n < self.r {
            return Err(Error::config("n", "need n >= r so every deployed policy gets samples"));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "mixing weight must lie in [0, 1)"));
        }
        let (num, den) = self.split;
        if num == 0 || num >= den {
            return Err(Error::config("split", "train share must lie strictly between 0 and 1"));
        }
        match (&self.learner, self.domain) {
            (LearnerSettings::Es { .. }, Domain::GridWorld) => {}
            (LearnerSettings::Fqi { .. }, Domain::MountainCar | Domain::Acrobot) => {}
            (LearnerSettings::Es { .. }, _) => {
                return Err(Error::config("learner", "tabular search requires the grid domain"))
            }
            (LearnerSettings::Fqi { .. }, _) => {
                return Err(Error::config(
                    "learner",
                    "the fitted-Q learner requires a continuous-state domain",
                ))
            }
        }
        if let LearnerSettings::Es {
            population,
            generations: _,
            step_size,
            temperature,
        } = &self.learner
        {
            if *population < 1 {
                return Err(Error::config("es_population", "need at least one member"));
            }
            if step_size.is_nan() || *step_size <= 0.0 {
                return Err(Error::config("es_step_size", "must be positive"));
            }
            if temperature.is_nan() || *temperature <= 0.0 {
                return Err(Error::config("es_temperature", "must be positive"));
            }
        }
        if let LearnerSettings::Fqi {
            sweeps,
            order: _,
            ridge,
            support_floor,
        } = &self.learner
        {
            if *sweeps < 1 {
                return Err(Error::config("fqi_sweeps", "need at least one sweep"));
            }
            if ridge.is_nan() || *ridge <= 0.0 {
                return Err(Error::config("fqi_ridge", "must be positive"));
            }
            let cap = 1.0 / self.domain.n_actions() as f64;
            if !(support_floor.is_finite() && *support_floor > 0.0 && *support_floor < cap) {
                return Err(Error::config(
                    "fqi_support_floor",
                    "must lie strictly between 0 and 1/n_actions",
                ));
            }
        }
        Ok(())
    }
}

/// Everything recorded about one loop iteration.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iter: u32,
    pub deployed: Vec<PolicyId>,
    /// Trajectory counts, aligned with `deployed`.
    pub counts: Vec<usize>,
    pub rho_baseline: f64,
    /// Safety-test outcome per candidate.
    pub verdicts: Vec<CandidateVerdict>,
    pub confirmed: Vec<PolicyId>,
    /// Mean normalized return of the iteration's collected trajectories.
    pub mean_return: f64,
    /// State-action visit entropy of the iteration's collected trajectories.
    pub joint_entropy: f64,
}

/// One candidate that passed its safety test, with enough context to audit
/// the confirmation later.
#[derive(Clone)]
pub struct Confirmation {
    pub iter: u32,
    /// Id of the deployed policy (the mixture when alpha > 0).
    pub id: PolicyId,
    /// Baseline the candidate was certified against.
    pub rho_baseline: f64,
    /// The deployed policy itself.
    pub policy: PolicyRef,
    /// Learned parameters before anchoring.
    pub table: PolicyTable,
    pub mix_alpha: f64,
    pub base_id: Option<PolicyId>,
}

/// Output of a full run.
pub struct ExperimentRun {
    pub algo: Algo,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub confirmations: Vec<Confirmation>,
    /// Every collected trajectory, in collection order, tagged with the run
    /// seed and iteration.
    pub trajectories: Vec<TaggedTrajectory>,
}

/// State-independent uniform action distribution: the full-support starting
/// policy for every domain.
#[derive(Debug, Clone)]
pub struct UniformRandomPolicy {
    id: PolicyId,
    n_actions: usize,
}

impl UniformRandomPolicy {
    pub fn new(id: PolicyId, n_actions: usize) -> Self {
        assert!(n_actions > 0);
        UniformRandomPolicy { id, n_actions }
    }
}

impl StochasticPolicy for UniformRandomPolicy {
    fn id(&self) -> PolicyId {
        self.id
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probabilities(&self, _state: &State) -> Vec<f64> {
        vec![1.0 / self.n_actions as f64; self.n_actions]
    }
}

fn build_learner(cfg: &ExperimentConfig, spec: &MdpSpec) -> Box<dyn CandidateLearner> {
    match &cfg.learner {
        LearnerSettings::Es {
            population,
            generations,
            step_size,
            temperature,
        } => {
            let mut config = EsConfig::new(gridworld::N_STATES, gridworld::N_ACTIONS);
            config.population = *population;
            config.generations = *generations;
            config.step_size = *step_size;
            config.temperature = *temperature;
            Box::new(EsLearner { config })
        }
        LearnerSettings::Fqi {
            sweeps,
            order,
            ridge,
            support_floor,
        } => Box::new(FqiLearner {
            config: FqiConfig {
                sweeps: *sweeps,
                gamma: spec.gamma,
                ridge: *ridge,
                order: *order,
            },
            bounds: cfg.domain.state_bounds().to_vec(),
            n_actions: cfg.domain.n_actions(),
            support_floor: *support_floor,
        }),
    }
}

/// Live state of one run. Iterations mutate it in place; accessors expose
/// the pools so invariants can be audited between steps.
pub struct Experiment {
    cfg: ExperimentConfig,
    algo: Algo,
    env: Box<dyn Environment>,
    spec: MdpSpec,
    learner: Box<dyn CandidateLearner>,
    collect_rng: ChaCha8Rng,
    learn_rng: ChaCha8Rng,
    deployed: Vec<PolicyRef>,
    behaviors: HashMap<PolicyId, PolicyRef>,
    d_train: Vec<IterationGroup>,
    d_test: Vec<Trajectory>,
    train_ids: Vec<u64>,
    test_ids: Vec<u64>,
    tagged: Vec<TaggedTrajectory>,
    confirmations: Vec<Confirmation>,
    next_policy_id: u64,
    next_traj_id: u64,
    iter: u32,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig, algo: Algo) -> Result<Self> {
        let mut cfg = cfg.clone();
        if algo == Algo::Spi {
            cfg.r = 1;
        }
        cfg.validate()?;
        let spec = cfg.domain.mdp_spec();
        let learner = build_learner(&cfg, &spec);
        Self::with_learner(cfg, algo, learner)
    }

    /// Construction with a caller-supplied learner; the config's learner
    /// block is kept for the record but not consulted.
    pub fn with_learner(
        cfg: ExperimentConfig,
        algo: Algo,
        learner: Box<dyn CandidateLearner>,
    ) -> Result<Self> {
        let mut cfg = cfg;
        if algo == Algo::Spi {
            cfg.r = 1;
        }
        cfg.validate()?;
        let spec = cfg.domain.mdp_spec();
        let env = cfg.domain.build();
        let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Independent streams so collection length never shifts learning
        // randomness.
        let collect_rng = ChaCha8Rng::seed_from_u64(master.random());
        let learn_rng = ChaCha8Rng::seed_from_u64(master.random());
        let initial: PolicyRef = Arc::new(UniformRandomPolicy::new(
            PolicyId(0),
            cfg.domain.n_actions(),
        ));
        let mut behaviors = HashMap::new();
        behaviors.insert(initial.id(), initial.clone());
        Ok(Experiment {
            cfg,
            algo,
            env,
            spec,
            learner,
            collect_rng,
            learn_rng,
            deployed: vec![initial],
            behaviors,
            d_train: Vec::new(),
            d_test: Vec::new(),
            train_ids: Vec::new(),
            test_ids: Vec::new(),
            tagged: Vec::new(),
            confirmations: Vec::new(),
            next_policy_id: 1,
            next_traj_id: 0,
            iter: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn deployed(&self) -> &[PolicyRef] {
        &self.deployed
    }

    pub fn train_data(&self) -> &[IterationGroup] {
        &self.d_train
    }

    pub fn test_data(&self) -> &[Trajectory] {
        &self.d_test
    }

    pub fn train_ids(&self) -> &[u64] {
        &self.train_ids
    }

    pub fn test_ids(&self) -> &[u64] {
        &self.test_ids
    }

    pub fn confirmations(&self) -> &[Confirmation] {
        &self.confirmations
    }

    /// Anchor for new candidates: the deployed policy with the best
    /// lower-bounded performance on its own test trajectories. Falls back
    /// to the first deployed policy while no one has enough data.
    fn reference(&self) -> PolicyRef {
        let mut best: Option<(f64, &PolicyRef)> = None;
        for p in &self.deployed {
            let returns: Vec<f64> = self
                .d_test
                .iter()
                .filter(|t| t.behavior_id == p.id())
                .filter_map(|t| normalized_return(t, &self.spec).ok())
                .collect();
            if returns.len() < 2 {
                continue;
            }
            let Ok(lb) = t_lower_bound(&returns, self.cfg.delta) else {
                continue;
            };
            if best.is_none_or(|(b, _)| lb > b) {
                best = Some((lb, p));
            }
        }
        best.map(|(_, p)| p.clone())
            .unwrap_or_else(|| self.deployed[0].clone())
    }

    /// One pass of the loop body: collect under the current set, split and
    /// accumulate, recompute the baseline, learn candidates, safety-test
    /// them, and swap in the confirmed set (keeping the current one when
    /// nothing passes).
    pub fn run_iteration(&mut self) -> Result<IterationRecord> {
        self.iter += 1;
        let alloc = allocate(self.cfg.n, self.deployed.len())?;

        // Collect this iteration's batch, one sub-batch per deployed policy.
        let mut batches: Vec<Vec<Trajectory>> = Vec::with_capacity(self.deployed.len());
        for (policy, &count) in self.deployed.iter().zip(alloc.counts()) {
            let batch: Vec<Trajectory> = (0..count)
                .map(|_| {
                    generate_trajectory(
                        self.env.as_ref(),
                        policy.as_ref(),
                        &mut self.collect_rng,
                        &self.spec,
                    )
                })
                .collect();
            batches.push(batch);
        }
        let all: Vec<Trajectory> = batches.iter().flatten().cloned().collect();
        let returns: Vec<f64> = all
            .iter()
            .map(|t| normalized_return(t, &self.spec))
            .collect::<Result<_>>()?;
        let mean_return = crate::stats::mean(&returns);
        let entropy = joint_entropy(&all);

        // Split each policy's sub-batch; tag everything for the audit trail.
        let (num, den) = self.cfg.split;
        let mut train_group = IterationGroup {
            iter: self.iter,
            trajs: Vec::new(),
        };
        for batch in batches {
            let train_count = batch.len() * num as usize / den as usize;
            for (i, traj) in batch.into_iter().enumerate() {
                let id = self.next_traj_id;
                self.next_traj_id += 1;
                self.tagged.push(TaggedTrajectory {
                    run: self.cfg.seed,
                    iter: self.iter,
                    traj_id: id,
                    traj: traj.clone(),
                });
                if i < train_count {
                    self.train_ids.push(id);
                    train_group.trajs.push(traj);
                } else {
                    self.test_ids.push(id);
                    self.d_test.push(traj);
                }
            }
        }
        if !train_group.trajs.is_empty() {
            self.d_train.push(train_group);
        }

        let rho = compute_rho_baseline(&self.d_test, &self.spec, self.cfg.delta)?;

        // Candidates never see the test pool.
        let reference = self.reference();
        let ctx = LearnContext {
            spec: &self.spec,
            behaviors: &self.behaviors,
            reference: &reference,
        };
        let candidates = gen_candidate_policies(
            &self.d_train,
            self.cfg.r,
            self.learner.as_ref(),
            &ctx,
            self.cfg.alpha,
            &mut self.learn_rng,
            &mut self.next_policy_id,
        )?;

        let policies: Vec<PolicyRef> = candidates.iter().map(|c| c.policy.clone()).collect();
        let report = safety_test(
            &policies,
            &self.d_test,
            &self.behaviors,
            &self.spec,
            self.cfg.delta,
            rho,
        )?;
        let confirmed_idx = report.confirmed_indices();
        let confirmed_ids: Vec<PolicyId> =
            confirmed_idx.iter().map(|&i| candidates[i].id).collect();

        let record = IterationRecord {
            iter: self.iter,
            deployed: self.deployed.iter().map(|p| p.id()).collect(),
            counts: alloc.counts().to_vec(),
            rho_baseline: rho,
            verdicts: report.verdicts.clone(),
            confirmed: confirmed_ids,
            mean_return,
            joint_entropy: entropy,
        };

        // Redeploy the current set when nothing is confirmed.
        if !confirmed_idx.is_empty() {
            let mut next = Vec::with_capacity(confirmed_idx.len());
            for &i in &confirmed_idx {
                let c = &candidates[i];
                self.behaviors.insert(c.id, c.policy.clone());
                self.confirmations.push(Confirmation {
                    iter: self.iter,
                    id: c.id,
                    rho_baseline: rho,
                    policy: c.policy.clone(),
                    table: c.table.clone(),
                    mix_alpha: c.mix_alpha,
                    base_id: c.base_id,
                });
                next.push(c.policy.clone());
            }
            self.deployed = next;
        }
        Ok(record)
    }

    fn finish(self, records: Vec<IterationRecord>) -> ExperimentRun {
        ExperimentRun {
            algo: self.algo,
            seed: self.cfg.seed,
            records,
            confirmations: self.confirmations,
            trajectories: self.tagged,
        }
    }
}

/// Runs the full loop for `cfg.d` iterations with diverse candidate
/// generation. Deterministic given the config (including its seed).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    run_algo(cfg, Algo::De)
}

/// The single-candidate baseline: identical loop with r forced to 1, so
/// one policy is deployed at a time and all samples go to it.
pub fn run_spi_baseline(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    run_algo(cfg, Algo::Spi)
}

pub fn run_algo(cfg: &ExperimentConfig, algo: Algo) -> Result<ExperimentRun> {
    let mut exp = Experiment::new(cfg, algo)?;
    let mut records = Vec::with_capacity(cfg.d as usize);
    for _ in 0..cfg.d {
        records.push(exp.run_iteration()?);
    }
    Ok(exp.finish(records))
}
