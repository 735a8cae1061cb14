//! Command-line harness: seeded experiment runs, run aggregation, and the
//! numeric verification suites.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use diverse_exploration::env::gridworld::enumerate_family;
use diverse_exploration::harness::runner::{aggregate_dir, execute_runs, summary_stats};
use diverse_exploration::harness::verify::{
    coverage_check, fdr_check, theory_checks, unbiasedness_check, COVERAGE_LIMIT, FDR_LIMIT,
};
use diverse_exploration::harness::{config_hash, load_config};
use diverse_exploration::improve::Algo;
use diverse_exploration::theory::diversity_histogram;

#[derive(Parser)]
#[command(
    name = "de-harness",
    version,
    about = "Safe policy improvement experiments with diverse candidate generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute seeded experiment runs and persist their artifacts
    Run {
        /// Experiment configuration file (flat `key = value` lines)
        #[arg(long)]
        config: PathBuf,
        /// `de` (diverse candidates) or `spi` (single-candidate baseline)
        #[arg(long)]
        algo: String,
        /// Half-open seed range `A..B`; one run per seed
        #[arg(long)]
        seeds: String,
        /// Output root directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge run directories under an output root and compare algorithms
    Aggregate {
        /// Output root that `run` wrote into
        #[arg(long)]
        out: PathBuf,
    },
    /// Numeric verification of the sample-allocation theory
    VerifyTheory {
        /// Random variance profiles per theorem check
        #[arg(long, default_value_t = 1000)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(subcommand)]
        analysis: Option<TheoryAnalysis>,
    },
    /// Monte Carlo verification of the off-policy estimator stack
    VerifyOpe {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Importance-sampling draws for the unbiasedness check
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        /// Trials for the coverage and false-discovery checks
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Census of the 5^9 deterministic interior policy family
    EnumerateGridworld {
        /// Write the quality histogram CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TheoryAnalysis {
    /// Pairwise-diversity histogram across low policy-quality buckets
    Diversity {
        /// Largest extra-steps bucket to enumerate
        #[arg(long, default_value_t = 3)]
        cap: u32,
        /// Write the histogram CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_seed_range(s: &str) -> Result<Vec<u64>> {
    let (a, b) = s
        .split_once("..")
        .with_context(|| format!("seed range must look like `0..10`, got `{s}`"))?;
    let a: u64 = a.trim().parse().context("bad range start")?;
    let b: u64 = b.trim().parse().context("bad range end")?;
    if b <= a {
        bail!("empty seed range `{s}`");
    }
    Ok((a..b).collect())
}

fn out_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".to_string())
}

fn cmd_run(config: &Path, algo: &str, seeds: &str, out: &Path) -> Result<i32> {
    let algo = Algo::parse(algo).with_context(|| format!("unknown algo `{algo}`"))?;
    let seeds = parse_seed_range(seeds)?;
    let cfg = load_config(config)
        .with_context(|| format!("loading {}", config.display()))?;
    let summaries = execute_runs(&cfg, algo, &seeds, out)?;
    for s in &summaries {
        println!(
            "run={} algo={} aggregate_return={:.4} final_return={:.4} iters_to_optimal={} unsafe={}",
            s.run,
            s.algo.name(),
            s.aggregate_return,
            s.final_return,
            s.iters_to_optimal
                .map(|v| v.to_string())
                .unwrap_or_else(|| "-".to_string()),
            s.unsafe_count,
        );
    }
    println!(
        "wrote {} runs under {} (config hash {:016x})",
        summaries.len(),
        out.display(),
        config_hash(&cfg)
    );
    Ok(0)
}

fn cmd_aggregate(out: &Path) -> Result<i32> {
    let agg = aggregate_dir(out)?;
    println!(
        "merged {} iteration rows from {} runs under {}",
        agg.rows.len(),
        agg.summaries.len(),
        out.display()
    );
    for algo in [Algo::De, Algo::Spi] {
        let stats = summary_stats(&agg.summaries, algo);
        if stats.n_runs == 0 {
            continue;
        }
        println!(
            "{:>4}: runs={} mean_aggregate_return={:.4} mean_final_return={:.4} \
             reached_optimal={}/{} mean_iters_to_optimal={} unsafe_total={}",
            algo.name(),
            stats.n_runs,
            stats.mean_aggregate_return,
            stats.mean_final_return,
            stats.reached_optimal,
            stats.n_runs,
            fmt_opt(stats.mean_iters_to_optimal),
            stats.unsafe_total,
        );
    }
    if let Some(cmp) = &agg.comparison {
        let total_diff: f64 = cmp.paired.iter().map(|p| p.mean_diff).sum();
        let significant = cmp
            .paired
            .iter()
            .filter(|p| p.p_value < 0.05)
            .count();
        println!(
            "paired de-spi: aggregate_diff={:.4} final_entropy de={:.4} spi={:.4} \
             iterations_with_p<0.05={}/{}",
            total_diff,
            cmp.de.mean_final_entropy,
            cmp.spi.mean_final_entropy,
            significant,
            cmp.paired.len(),
        );
        println!("comparison written to {}", out.join("comparison.csv").display());
    } else {
        println!("single algorithm present; no comparison written");
    }
    Ok(0)
}

fn cmd_verify_theory(trials: u32, seed: u64) -> Result<i32> {
    let checks = theory_checks(trials, seed);
    println!(
        "lemma1: {} ({} instances)",
        verdict(checks.lemma1.mismatches == 0),
        checks.lemma1.instances
    );
    let t1_ok = checks.theorem1.iter().all(|r| r.passed());
    let profiles: u32 = checks.theorem1.iter().map(|r| r.trials).sum();
    println!(
        "theorem1: {} (n=6, m=2,3; {} profiles, {} violations)",
        verdict(t1_ok),
        profiles,
        checks.theorem1.iter().map(|r| r.violations).sum::<u32>()
    );
    println!(
        "theorem2: {} (max |diff|={:.1e} over {} profiles)",
        verdict(checks.theorem2_max_delta <= 1e-12),
        checks.theorem2_max_delta,
        checks.theorem2_trials
    );
    Ok(if checks.passed() { 0 } else { 1 })
}

fn cmd_theory_diversity(cap: u32, out: &Option<PathBuf>) -> Result<i32> {
    let hist = diversity_histogram(cap);
    let mut w = out_writer(out)?;
    writeln!(w, "quality,policy_count,diversity,pair_count")?;
    for bucket in &hist.buckets {
        for (diversity, &pairs) in bucket.diversity_pairs.iter().enumerate() {
            if pairs > 0 {
                writeln!(
                    w,
                    "{},{},{},{}",
                    bucket.quality, bucket.policy_count, diversity, pairs
                )?;
            }
        }
    }
    w.flush()?;
    Ok(0)
}

fn cmd_verify_ope(seed: u64, samples: usize, trials: usize) -> Result<i32> {
    let unbiased = unbiasedness_check(samples, seed);
    println!(
        "unbiasedness: {} (is_mean={:.5}, exact={:.5}, z={:.2}, samples={})",
        verdict(unbiased.passed()),
        unbiased.is_mean,
        unbiased.true_value,
        unbiased.z,
        unbiased.samples
    );
    let coverage = coverage_check(trials, 32, 0.05, seed.wrapping_add(1));
    println!(
        "coverage: {} (violation_rate={:.4} <= {}, trials={})",
        verdict(coverage.passed()),
        coverage.rate,
        COVERAGE_LIMIT,
        coverage.trials
    );
    let fdr = fdr_check(trials, 0.05, seed.wrapping_add(2));
    println!(
        "fdr: {} (mean_fdp={:.4} <= {:.2}, trials={})",
        verdict(fdr.passed()),
        fdr.mean_fdp,
        FDR_LIMIT,
        fdr.trials
    );
    Ok(
        if unbiased.passed() && coverage.passed() && fdr.passed() {
            0
        } else {
            1
        },
    )
}

fn cmd_enumerate_gridworld(out: &Option<PathBuf>) -> Result<i32> {
    let census = enumerate_family();
    let mut counts = census.quality_counts.clone();
    counts.sort_by_key(|&(q, _)| q);
    let mut w = out_writer(out)?;
    writeln!(w, "quality,diversity_count")?;
    for (quality, count) in counts {
        writeln!(w, "{quality},{count}")?;
    }
    w.flush()?;
    drop(w);
    println!("optimal_policies={}", census.optimal_count());
    println!("non_terminating={}", census.unreachable_count);
    Ok(0)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run {
            config,
            algo,
            seeds,
            out,
        } => cmd_run(config, algo, seeds, out)?,
        Command::Aggregate { out } => cmd_aggregate(out)?,
        Command::VerifyTheory {
            trials,
            seed,
            analysis,
        } => match analysis {
            None => cmd_verify_theory(*trials, *seed)?,
            Some(TheoryAnalysis::Diversity { cap, out }) => cmd_theory_diversity(*cap, out)?,
        },
        Command::VerifyOpe {
            seed,
            samples,
            trials,
        } => cmd_verify_ope(*seed, *samples, *trials)?,
        Command::EnumerateGridworld { out } => cmd_enumerate_gridworld(out)?,
    };
    if code != 0 {
        std::process::exit(code);
    }
    Ok(())
}
