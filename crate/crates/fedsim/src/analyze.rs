//! Post-hoc analyses. Each re-simulates from a resolved config (runs are
//! deterministic, so nothing needs to be checkpointed) and writes one CSV.

use std::fmt::Write as _;

use fedsim_core::orchestrator::{accuracy_surface, run_with_runner, RunOutput};

use crate::config::Experiment;
use crate::report::fmt_f64;
use crate::runner::ThreadedRunner;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeKind {
    Surface,
    Similarity,
    Recall,
}

impl AnalyzeKind {
    pub fn parse(name: &str) -> Option<AnalyzeKind> {
        match name {
            "surface" => Some(AnalyzeKind::Surface),
            "similarity" => Some(AnalyzeKind::Similarity),
            "recall" => Some(AnalyzeKind::Recall),
            _ => None,
        }
    }
}

fn rerun(exp: &Experiment, seed: u64) -> Result<RunOutput, CliError> {
    let mut sim = exp.sim.clone();
    sim.seed = seed;
    run_with_runner(&sim, &ThreadedRunner::from_env())
        .map_err(|e| CliError::config(e.to_string()))
}

/// The grid coordinates used by the surface scan: `steps` evenly spaced
/// values spanning `[-radius, radius]`.
pub fn axis_values(radius: f64, steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| radius * (2.0 * i as f64 - (steps - 1) as f64) / (steps - 1) as f64)
        .collect()
}

/// `surface.csv`: accuracy over a 2-D slice of parameter space around the
/// final global model. Only the first configured seed is scanned; the
/// other seeds' models would need their own direction draws anyway, and
/// one slice is what the plot consumes.
pub fn surface_csv(exp: &Experiment) -> Result<String, CliError> {
    let seed = exp.seeds[0];
    let out = rerun(exp, seed)?;
    let grid = accuracy_surface(
        &out.final_global,
        &out.test,
        exp.surface_radius,
        exp.surface_steps,
        seed,
    )
    .map_err(|e| CliError::config(e.to_string()))?;
    let axis = axis_values(exp.surface_radius, exp.surface_steps);
    let mut csv = String::from("a,b,accuracy\n");
    for (i, &a) in axis.iter().enumerate() {
        for (j, &b) in axis.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{}",
                fmt_f64(a),
                fmt_f64(b),
                fmt_f64(grid[i * exp.surface_steps + j])
            );
        }
    }
    Ok(csv)
}

/// `similarity.csv`: per round, the mean cosine similarity of benign local
/// models to the clean and corrupted globals — one `overall` row, then one
/// row per class. Rounds without a benign sampled client have no rows.
pub fn similarity_csv(exp: &Experiment) -> Result<String, CliError> {
    let mut csv = String::from("seed,round,class,clean_sim,corrupted_sim\n");
    for &seed in &exp.seeds {
        let out = rerun(exp, seed)?;
        for (report, classes) in out.rounds.iter().zip(&out.per_class_sims) {
            let (Some(clean), Some(corrupted)) = (report.sim_clean, report.sim_corrupted)
            else {
                continue;
            };
            let _ = writeln!(
                csv,
                "{seed},{},overall,{},{}",
                report.round,
                fmt_f64(clean),
                fmt_f64(corrupted)
            );
            for (class, sim) in classes.iter().enumerate() {
                let _ = writeln!(
                    csv,
                    "{seed},{},{class},{},{}",
                    report.round,
                    fmt_f64(sim.clean),
                    fmt_f64(sim.corrupted)
                );
            }
        }
    }
    Ok(csv)
}

/// `recall.csv`: per round, the fraction of sampled malicious clients the
/// aggregator excluded. Rows appear only when the rule reports a kept set.
pub fn recall_csv(exp: &Experiment) -> Result<String, CliError> {
    let mut csv = String::from("seed,round,recall\n");
    for &seed in &exp.seeds {
        let out = rerun(exp, seed)?;
        for report in &out.rounds {
            if let Some(recall) = report.recall {
                let _ = writeln!(csv, "{seed},{},{}", report.round, fmt_f64(recall));
            }
        }
    }
    Ok(csv)
}

/// Aggregation across a sweep: one row per swept value with the mean
/// recall over that value's rounds and seeds (contested or vacuous alike),
/// in the sweep's directory order.
pub fn recall_by_value_csv(rows: &[(String, f64)]) -> String {
    let mut csv = String::from("value,mean_recall\n");
    for (value, mean) in rows {
        let _ = writeln!(csv, "{value},{}", fmt_f64(*mean));
    }
    csv
}

/// Mean of every recall the runs of `exp` report, or `None` when the rule
/// never reports one.
pub fn mean_recall(exp: &Experiment) -> Result<Option<f64>, CliError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &seed in &exp.seeds {
        let out = rerun(exp, seed)?;
        for report in &out.rounds {
            if let Some(recall) = report.recall {
                sum += recall;
                count += 1;
            }
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}
