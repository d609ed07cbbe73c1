//! The four subcommands. Each returns `Ok` or a classified `CliError`;
//! the binary maps those to exit codes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use fedsim_core::orchestrator::{run_with_runner, RunSummary};

use crate::analyze::{self, AnalyzeKind};
use crate::config::Experiment;
use crate::report;
use crate::runner::ThreadedRunner;
use crate::CliError;

/// Loads an experiment from a config file, or from a run directory's
/// `config_resolved.json`.
pub fn load_experiment(path: &Path) -> Result<Experiment, CliError> {
    let file = if path.is_dir() {
        path.join("config_resolved.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file)
        .map_err(|e| CliError::io(format!("reading {}: {e}", file.display())))?;
    Experiment::parse(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", file.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    let mut file = fs::File::create(path)
        .map_err(|e| CliError::io(format!("creating {}: {e}", path.display())))?;
    file.write_all(content.as_bytes())
        .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path)
        .map_err(|e| CliError::io(format!("creating directory {}: {e}", path.display())))
}

fn apply_seed_override(exp: &mut Experiment, seeds: Option<&str>) -> Result<(), CliError> {
    if let Some(list) = seeds {
        exp.seeds = crate::config::parse_seed_list(list)?;
        exp.derive_defaults();
    }
    Ok(())
}

/// Executes every seed of the experiment and writes `rounds.csv`,
/// `summary.json`, and `config_resolved.json` (plus dataset exports when
/// enabled) into `out`.
fn run_experiment(exp: &Experiment, out: &Path) -> Result<Vec<(u64, RunSummary)>, CliError> {
    ensure_dir(out)?;
    let runner = ThreadedRunner::from_env();
    let mut rounds_csv = String::from(report::ROUNDS_HEADER);
    rounds_csv.push('\n');
    let mut summaries = Vec::with_capacity(exp.seeds.len());
    for &seed in &exp.seeds {
        let mut sim = exp.sim.clone();
        sim.seed = seed;
        let output =
            run_with_runner(&sim, &runner).map_err(|e| CliError::config(e.to_string()))?;
        report::push_rounds_rows(&mut rounds_csv, seed, &output);
        if exp.export_datasets {
            write_file(
                &out.join(format!("datasets_{seed}.csv")),
                &report::datasets_csv(&output),
            )?;
        }
        summaries.push((seed, output.summary));
    }
    write_file(&out.join("rounds.csv"), &rounds_csv)?;
    write_file(&out.join("summary.json"), &report::summary_json(&summaries))?;
    write_file(&out.join("config_resolved.json"), &report::resolved_json(exp))?;
    Ok(summaries)
}

pub fn cmd_run(config: &Path, out: &Path, seeds: Option<&str>) -> Result<(), CliError> {
    let mut exp = load_experiment(config)?;
    apply_seed_override(&mut exp, seeds)?;
    run_experiment(&exp, out)?;
    println!("wrote {}", out.join("rounds.csv").display());
    Ok(())
}

pub fn cmd_sweep(
    config: &Path,
    out: &Path,
    axis: &str,
    values: &str,
    seeds: Option<&str>,
) -> Result<(), CliError> {
    let mut base = load_experiment(config)?;
    apply_seed_override(&mut base, seeds)?;
    let values: Vec<&str> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CliError::config("sweep values list is empty"));
    }
    ensure_dir(out)?;
    let mut sweep_csv = String::from("axis,value,seed,last5_accuracy,best5_accuracy\n");
    for value in values {
        let mut exp = base.clone();
        exp.set_axis(axis, value)?;
        let sub = out.join(format!("{axis}={value}"));
        let summaries = run_experiment(&exp, &sub)?;
        let n = summaries.len() as f64;
        let (mut mean_last, mut mean_best) = (0.0, 0.0);
        for (seed, s) in &summaries {
            mean_last += s.last5_accuracy / n;
            mean_best += s.best5_accuracy / n;
            sweep_csv.push_str(&format!(
                "{axis},{value},{seed},{},{}\n",
                report::fmt_f64(s.last5_accuracy),
                report::fmt_f64(s.best5_accuracy)
            ));
        }
        sweep_csv.push_str(&format!(
            "{axis},{value},mean,{},{}\n",
            report::fmt_f64(mean_last),
            report::fmt_f64(mean_best)
        ));
    }
    write_file(&out.join("sweep_summary.csv"), &sweep_csv)?;
    println!("wrote {}", out.join("sweep_summary.csv").display());
    Ok(())
}

/// The values of a sweep directory, in run order, with their sub-paths.
fn sweep_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let summary_path = dir.join("sweep_summary.csv");
    let text = fs::read_to_string(&summary_path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", summary_path.display())))?;
    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for line in text.lines().skip(1) {
        let mut cols = line.split(',');
        let (Some(axis), Some(value)) = (cols.next(), cols.next()) else {
            return Err(CliError::config(format!(
                "{}: malformed row `{line}`",
                summary_path.display()
            )));
        };
        if entries.iter().all(|(v, _)| v != value) {
            entries.push((value.to_string(), dir.join(format!("{axis}={value}"))));
        }
    }
    if entries.is_empty() {
        return Err(CliError::config(format!(
            "{}: no sweep rows",
            summary_path.display()
        )));
    }
    Ok(entries)
}

pub fn cmd_analyze(kind: &str, config: &Path, out: &Path) -> Result<(), CliError> {
    let kind = AnalyzeKind::parse(kind).ok_or_else(|| {
        CliError::config(format!(
            "unknown analysis `{kind}` (expected surface, similarity, or recall)"
        ))
    })?;
    ensure_dir(out)?;
    let sweep_dir = config.is_dir() && config.join("sweep_summary.csv").is_file();
    if sweep_dir {
        // Only recall has a defined per-value aggregation; the other
        // analyses operate on a single run.
        if kind != AnalyzeKind::Recall {
            return Err(CliError::config(
                "sweep directories are only supported for recall analysis",
            ));
        }
        let mut per_value = Vec::new();
        let mut all_rows = String::from("value,seed,round,recall\n");
        for (value, sub) in sweep_entries(config)? {
            let exp = load_experiment(&sub)?;
            let csv = analyze::recall_csv(&exp)?;
            for row in csv.lines().skip(1) {
                all_rows.push_str(&format!("{value},{row}\n"));
            }
            let mean = analyze::mean_recall(&exp)?.ok_or_else(|| {
                CliError::config(format!(
                    "value `{value}`: the configured aggregator reports no detection decisions"
                ))
            })?;
            per_value.push((value, mean));
        }
        write_file(&out.join("recall.csv"), &all_rows)?;
        write_file(
            &out.join("recall_by_value.csv"),
            &analyze::recall_by_value_csv(&per_value),
        )?;
        println!("wrote {}", out.join("recall_by_value.csv").display());
        return Ok(());
    }
    let exp = load_experiment(config)?;
    let (name, csv) = match kind {
        AnalyzeKind::Surface => ("surface.csv", analyze::surface_csv(&exp)?),
        AnalyzeKind::Similarity => ("similarity.csv", analyze::similarity_csv(&exp)?),
        AnalyzeKind::Recall => ("recall.csv", analyze::recall_csv(&exp)?),
    };
    write_file(&out.join(name), &csv)?;
    println!("wrote {}", out.join(name).display());
    Ok(())
}

pub fn cmd_oracle(suite: &str) -> Result<(), CliError> {
    let props = crate::oracle::run_suite(suite).ok_or_else(|| {
        CliError::config(format!(
            "unknown oracle suite `{suite}` (expected one of {})",
            crate::oracle::SUITES.join(", ")
        ))
    })?;
    let mut failures = 0;
    for (name, result) in &props {
        match result {
            Ok(()) => println!("ok   {name}"),
            Err(msg) => {
                failures += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failures > 0 {
        Err(CliError::OracleFailed { failures })
    } else {
        Ok(())
    }
}
