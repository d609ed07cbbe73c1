//! Output files: `rounds.csv`, `summary.json`, `config_resolved.json`,
//! and the optional per-seed dataset export.
//!
//! Floats in CSVs are printed as `{:.16e}` (17 significant digits), which
//! round-trips `f64` exactly; determinism checks may therefore compare the
//! files byte for byte.

use std::fmt::Write as _;

use fedsim_core::orchestrator::{RunOutput, RunSummary};

use crate::config::Experiment;

/// Exact decimal form of an `f64` (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const ROUNDS_HEADER: &str = "seed,round,acc_global,acc_clean,recall,\
sim_corrupted,sim_clean,n_sampled,n_malicious,sampled_ids";

/// Appends one run's per-round rows (no header) to `out`.
pub fn push_rounds_rows(out: &mut String, seed: u64, run: &RunOutput) {
    for r in &run.rounds {
        let ids = r
            .sampled
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(";");
        let _ = writeln!(
            out,
            "{seed},{},{},{},{},{},{},{},{},{ids}",
            r.round,
            fmt_f64(r.acc_global),
            fmt_f64(r.acc_clean),
            fmt_opt(r.recall),
            fmt_opt(r.sim_corrupted),
            fmt_opt(r.sim_clean),
            r.sampled.len(),
            r.n_malicious,
        );
    }
}

/// The `summary.json` document for a set of per-seed runs.
pub fn summary_json(per_seed: &[(u64, RunSummary)]) -> String {
    let n = per_seed.len().max(1) as f64;
    let mean_last5 = per_seed.iter().map(|(_, s)| s.last5_accuracy).sum::<f64>() / n;
    let mean_best5 = per_seed.iter().map(|(_, s)| s.best5_accuracy).sum::<f64>() / n;
    let doc = serde_json::json!({
        "schema_version": 1,
        "per_seed": per_seed
            .iter()
            .map(|(seed, s)| {
                serde_json::json!({
                    "seed": seed,
                    "last5_accuracy": s.last5_accuracy,
                    "best5_accuracy": s.best5_accuracy,
                })
            })
            .collect::<Vec<_>>(),
        "mean": {
            "last5_accuracy": mean_last5,
            "best5_accuracy": mean_best5,
        },
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("static document");
    text.push('\n');
    text
}

/// The `config_resolved.json` document: every key with its effective value,
/// all values as strings, keys sorted. Feeding this file back to `run`
/// reproduces the experiment.
pub fn resolved_json(exp: &Experiment) -> String {
    let map = exp.resolved_map();
    let obj: serde_json::Map<String, serde_json::Value> = map
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let mut text =
        serde_json::to_string_pretty(&serde_json::Value::Object(obj)).expect("static document");
    text.push('\n');
    text
}

/// One run's client shards as CSV (`datasets_<seed>.csv`).
pub fn datasets_csv(run: &RunOutput) -> String {
    let dim = run.test.input_dim;
    let mut out = String::from("client_id,role,y");
    for j in 0..dim {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    for shard in &run.shards {
        let role = if shard.malicious { "malicious" } else { "benign" };
        for i in 0..shard.data.len() {
            let _ = write!(out, "{},{role},{}", shard.client_id, shard.data.labels[i]);
            for j in 0..dim {
                let _ = write!(out, ",{}", fmt_f64(shard.data.inputs[i * dim + j]));
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedsim_core::orchestrator::{run, SimConfig};

    fn tiny() -> SimConfig {
        SimConfig {
            rounds: 2,
            num_clients: 4,
            data: fedsim_core::data::SyntheticSpec {
                train_per_class: 12,
                test_per_class: 4,
                ..Default::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn fmt_f64_round_trips() {
        for x in [0.5, 1.0 / 3.0, -2.625e-9, 1e300, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn rounds_rows_shape() {
        let out = run(&tiny()).unwrap();
        let mut text = String::new();
        push_rounds_rows(&mut text, 7, &out);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        for (i, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), ROUNDS_HEADER.split(',').count());
            assert_eq!(fields[0], "7");
            assert_eq!(fields[1], i.to_string());
            // Default config uses fedavg: no detection columns.
            assert_eq!(fields[4], "");
        }
    }

    #[test]
    fn summary_json_mean() {
        let a = RunSummary {
            last5_accuracy: 0.5,
            best5_accuracy: 0.7,
        };
        let b = RunSummary {
            last5_accuracy: 0.9,
            best5_accuracy: 0.9,
        };
        let text = summary_json(&[(0, a), (1, b)]);
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["schema_version"], 1);
        assert_eq!(doc["per_seed"].as_array().unwrap().len(), 2);
        assert!((doc["mean"]["last5_accuracy"].as_f64().unwrap() - 0.7).abs() < 1e-15);
        assert!((doc["mean"]["best5_accuracy"].as_f64().unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn datasets_csv_shape() {
        let cfg = tiny();
        let out = run(&cfg).unwrap();
        let text = datasets_csv(&out);
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("client_id,role,y,x0"));
        assert_eq!(header.split(',').count(), 3 + cfg.data.input_dim);
        let total: usize = out.shards.iter().map(|s| s.data.len()).sum();
        assert_eq!(lines.count(), total);
        assert_eq!(total, cfg.data.num_classes * cfg.data.train_per_class);
    }
}
