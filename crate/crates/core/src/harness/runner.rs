//! Run execution and on-disk layout. Each run writes a private directory
//! under the output root; `aggregate` merges those directories into the
//! top-level CSVs and the cross-algorithm comparison.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec;
use crate::improve::{run_algo, Algo, ExperimentConfig, ExperimentRun};
use crate::mdp::write_trajectories;

use super::config::{config_hash, write_config};
use super::metrics::{
    aggregate, iteration_rows, read_iterations_csv, read_summary_csv, summarize,
    write_comparison_csv, write_iterations_csv, write_summary_csv, Comparison, IterationRow,
    RunSummary,
};

pub fn run_dir_name(algo: Algo, seed: u64) -> String {
    format!("{}-seed{seed:05}", algo.name())
}

/// Writes one run's artifacts: iteration metrics, the one-line summary,
/// every collected trajectory, and each confirmed policy's parameters.
pub fn write_run_dir(dir: &Path, run: &ExperimentRun, summary: &RunSummary) -> Result<()> {
    let policies = dir.join("policies");
    fs::create_dir_all(&policies)?;
    let mut iter_file = fs::File::create(dir.join("iterations.csv"))?;
    write_iterations_csv(&mut iter_file, &iteration_rows(run))?;
    let mut summary_file = fs::File::create(dir.join("summary.csv"))?;
    write_summary_csv(&mut summary_file, std::slice::from_ref(summary))?;
    let mut traj_file = io_buf(fs::File::create(dir.join("trajectories.txt"))?);
    write_trajectories(&mut traj_file, &run.trajectories)?;
    for c in &run.confirmations {
        let lineage = vec![
            ("run".to_string(), run.seed.to_string()),
            ("algo".to_string(), run.algo.name().to_string()),
            ("iter".to_string(), c.iter.to_string()),
            ("deployed_id".to_string(), c.id.0.to_string()),
            ("mix_alpha".to_string(), c.mix_alpha.to_string()),
            (
                "base_id".to_string(),
                c.base_id.map(|b| b.0.to_string()).unwrap_or_else(|| "none".to_string()),
            ),
            ("rho_baseline".to_string(), c.rho_baseline.to_string()),
        ];
        let name = format!("iter{:03}-policy{:04}.txt", c.iter, c.id.0);
        let mut f = fs::File::create(policies.join(name))?;
        c.table.write(&mut f, &lineage)?;
    }
    Ok(())
}

fn io_buf(f: fs::File) -> std::io::BufWriter<fs::File> {
    std::io::BufWriter::new(f)
}

/// Executes one run per seed (in parallel) and persists each under `out`.
/// The resolved configuration is echoed once with its hash so every number
/// in the outputs can be reproduced from the command line.
pub fn execute_runs(
    base: &ExperimentConfig,
    algo: Algo,
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<RunSummary>> {
    fs::create_dir_all(out)?;
    let echo = format!("# hash = {:016x}\n{}", config_hash(base), write_config(base));
    fs::write(out.join("config.echo"), echo)?;
    let runs: Vec<Result<ExperimentRun>> = exec::map_slice(seeds, |&seed| {
        let mut cfg = base.clone();
        cfg.seed = seed;
        run_algo(&cfg, algo)
    });
    let mut summaries = Vec::with_capacity(seeds.len());
    for (&seed, run) in seeds.iter().zip(runs) {
        let run = run?;
        let summary = summarize(&run, base.domain);
        let dir = out.join(run_dir_name(algo, seed));
        write_run_dir(&dir, &run, &summary)?;
        summaries.push(summary);
    }
    Ok(summaries)
}

/// Everything `aggregate` found under an output root.
pub struct AggregateOutput {
    pub rows: Vec<IterationRow>,
    pub summaries: Vec<RunSummary>,
    /// Present when both algorithms contributed matched runs.
    pub comparison: Option<Comparison>,
}

/// Reads every run directory under `out` (any directory holding an
/// `iterations.csv`), sorted for deterministic output.
pub fn collect_outputs(out: &Path) -> Result<(Vec<IterationRow>, Vec<RunSummary>)> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("iterations.csv").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::MismatchedRuns(format!(
            "no run directories under {}",
            out.display()
        )));
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for dir in dirs {
        rows.extend(read_iterations_csv(fs::File::open(dir.join("iterations.csv"))?)?);
        let summary_path = dir.join("summary.csv");
        if summary_path.is_file() {
            summaries.extend(read_summary_csv(fs::File::open(summary_path)?)?);
        }
    }
    Ok((rows, summaries))
}

/// Merges run directories into `iterations.csv`, `summary.csv`, and (when
/// both algorithms are present) `comparison.csv` at the root of `out`.
pub fn aggregate_dir(out: &Path) -> Result<AggregateOutput> {
    let (rows, summaries) = collect_outputs(out)?;
    let mut iter_file = fs::File::create(out.join("iterations.csv"))?;
    write_iterations_csv(&mut iter_file, &rows)?;
    let mut summary_file = fs::File::create(out.join("summary.csv"))?;
    write_summary_csv(&mut summary_file, &summaries)?;
    let have_both = rows.iter().any(|r| r.algo == Algo::De)
        && rows.iter().any(|r| r.algo == Algo::Spi);
    let comparison = if have_both {
        let cmp = aggregate(&rows)?;
        let mut cmp_file = fs::File::create(out.join("comparison.csv"))?;
        write_comparison_csv(&mut cmp_file, &cmp)?;
        Some(cmp)
    } else {
        None
    };
    Ok(AggregateOutput {
        rows,
        summaries,
        comparison,
    })
}

/// Per-algorithm roll-up of run summaries for the printed report.
#[derive(Debug, Clone)]
pub struct SummaryStats {
    pub algo: Algo,
    pub n_runs: usize,
    pub mean_aggregate_return: f64,
    pub mean_final_return: f64,
    /// Runs that confirmed a truly optimal policy, and their mean
    /// confirmation iteration.
    pub reached_optimal: usize,
    pub mean_iters_to_optimal: Option<f64>,
    pub unsafe_total: u64,
}

pub fn summary_stats(summaries: &[RunSummary], algo: Algo) -> SummaryStats {
    let mine: Vec<&RunSummary> = summaries.iter().filter(|s| s.algo == algo).collect();
    let n_runs = mine.len();
    let scale = 1.0 / n_runs.max(1) as f64;
    let reached: Vec<u32> = mine.iter().filter_map(|s| s.iters_to_optimal).collect();
    SummaryStats {
        algo,
        n_runs,
        mean_aggregate_return: mine.iter().map(|s| s.aggregate_return).sum::<f64>() * scale,
        mean_final_return: mine.iter().map(|s| s.final_return).sum::<f64>() * scale,
        reached_optimal: reached.len(),
        mean_iters_to_optimal: if reached.is_empty() {
            None
        } else {
            Some(reached.iter().map(|&v| f64::from(v)).sum::<f64>() / reached.len() as f64)
        },
        unsafe_total: mine.iter().map(|s| u64::from(s.unsafe_count)).sum(),
    }
}
