//! Experiment configuration: a flat key/value document.
//!
//! The text format is one `key = value` pair per line with `#` comments;
//! dotted keys group related settings. The same schema is also accepted as
//! a flat JSON object (the format of an emitted `config_resolved.json`),
//! detected by a leading `{`. Unknown keys are rejected with the offending
//! line so typos cannot silently fall back to defaults, and the resolved
//! form round-trips: running a `config_resolved.json` reproduces the run
//! that wrote it.

use std::collections::BTreeMap;
use std::fmt;

use fedsim_core::aggregation::AggKind;
use fedsim_core::attacks::AttackKind;
use fedsim_core::orchestrator::SimConfig;

/// A configuration problem: what went wrong and where.
#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
    /// 1-based line of the offending entry, when known.
    pub line: Option<usize>,
    /// Key involved, when known.
    pub key: Option<String>,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        ConfigError {
            message: message.into(),
            line: None,
            key: None,
        }
    }

    fn for_key(key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            message: message.into(),
            line: None,
            key: Some(key.to_string()),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error")?;
        if let Some(line) = self.line {
            write!(f, " at line {line}")?;
        }
        if let Some(key) = &self.key {
            write!(f, " (key `{key}`)")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

impl From<fedsim_core::Error> for ConfigError {
    fn from(e: fedsim_core::Error) -> Self {
        ConfigError::new(e.to_string())
    }
}

/// A fully resolved experiment: the simulation, the seed list, and the
/// output/analysis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    /// `sim.seed` holds the first seed; per-seed runs override it.
    pub sim: SimConfig,
    pub seeds: Vec<u64>,
    pub surface_radius: f64,
    pub surface_steps: usize,
    pub export_datasets: bool,
    /// Whether `agg.f_expected` was given explicitly (sweeps over
    /// attacker_ratio re-derive it only when it was defaulted).
    pub f_explicit: bool,
}

impl Default for Experiment {
    fn default() -> Self {
        let mut exp = Experiment {
            sim: SimConfig::default(),
            seeds: vec![0],
            surface_radius: 0.5,
            surface_steps: 11,
            export_datasets: false,
            f_explicit: false,
        };
        exp.derive_defaults();
        exp
    }
}

/// Every recognized key, in canonical order.
const KEYS: &[&str] = &[
    "seeds",
    "rounds",
    "num_clients",
    "sample_fraction",
    "attacker_ratio",
    "beta",
    "batch_size",
    "local_epochs",
    "attack.kind",
    "attack.lie_z",
    "attack.stat_gamma",
    "attack.dyn_gamma_init",
    "attack.dyn_threshold",
    "agg.kind",
    "agg.f_expected",
    "agg.multikrum_c",
    "agg.residual_ci",
    "agg.residual_clip",
    "defense.enabled",
    "defense.k_neighbors",
    "defense.tau",
    "optim.lr",
    "optim.momentum",
    "optim.weight_decay",
    "model.hidden1",
    "model.hidden2",
    "data.num_classes",
    "data.input_dim",
    "data.train_per_class",
    "data.test_per_class",
    "data.class_separation",
    "data.noise_std",
    "surface.radius",
    "surface.steps",
    "output.export_datasets",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| ConfigError::for_key(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::for_key(
            key,
            format!("expected `true` or `false`, got `{value}`"),
        )),
    }
}

/// Parses a comma-separated seed list (as the `--seeds` flag supplies it).
pub fn parse_seed_list(value: &str) -> Result<Vec<u64>, ConfigError> {
    parse_seeds("seeds", value)
}

fn parse_seeds(key: &str, value: &str) -> Result<Vec<u64>, ConfigError> {
    let seeds: Result<Vec<u64>, _> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num::<u64>(key, s))
        .collect();
    let seeds = seeds?;
    if seeds.is_empty() {
        return Err(ConfigError::for_key(key, "seed list is empty"));
    }
    Ok(seeds)
}

impl Experiment {
    /// Parses the flat text format or a flat JSON object (auto-detected).
    pub fn parse(text: &str) -> Result<Experiment, ConfigError> {
        let entries = if text.trim_start().starts_with('{') {
            json_entries(text)?
        } else {
            text_entries(text)?
        };
        Experiment::from_entries(&entries)
    }

    fn from_entries(entries: &[(String, String, Option<usize>)]) -> Result<Experiment, ConfigError> {
        let mut exp = Experiment {
            sim: SimConfig::default(),
            seeds: vec![0],
            surface_radius: 0.5,
            surface_steps: 11,
            export_datasets: false,
            f_explicit: false,
        };
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (key, value, line) in entries {
            let with_line = |mut e: ConfigError| {
                e.line = *line;
                e
            };
            if !KEYS.contains(&key.as_str()) {
                return Err(with_line(ConfigError::for_key(key, "unknown key")));
            }
            if let Some(first) = seen.get(key.as_str()) {
                return Err(with_line(ConfigError::for_key(
                    key,
                    format!("duplicate key (first set at line {first})"),
                )));
            }
            seen.insert(key.as_str(), line.unwrap_or(0));
            exp.apply(key, value).map_err(with_line)?;
        }
        exp.derive_defaults();
        exp.sim.validate()?;
        if exp.surface_steps < 2 {
            return Err(ConfigError::for_key(
                "surface.steps",
                "must be at least 2",
            ));
        }
        if !(exp.surface_radius >= 0.0) {
            return Err(ConfigError::for_key(
                "surface.radius",
                "must be non-negative",
            ));
        }
        Ok(exp)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let sim = &mut self.sim;
        match key {
            "seeds" => self.seeds = parse_seeds(key, value)?,
            "rounds" => sim.rounds = parse_num(key, value)?,
            "num_clients" => sim.num_clients = parse_num(key, value)?,
            "sample_fraction" => sim.sample_fraction = parse_num(key, value)?,
            "attacker_ratio" => sim.attacker_ratio = parse_num(key, value)?,
            "beta" => sim.beta = parse_num(key, value)?,
            "batch_size" => sim.batch_size = parse_num(key, value)?,
            "local_epochs" => sim.local_epochs = parse_num(key, value)?,
            "attack.kind" => {
                sim.attack.kind = AttackKind::parse(value).ok_or_else(|| {
                    ConfigError::for_key(key, format!("unknown attack `{value}`"))
                })?;
            }
            "attack.lie_z" => sim.attack.lie_z = parse_num(key, value)?,
            "attack.stat_gamma" => sim.attack.stat_gamma = parse_num(key, value)?,
            "attack.dyn_gamma_init" => sim.attack.dyn_gamma_init = parse_num(key, value)?,
            "attack.dyn_threshold" => sim.attack.dyn_threshold = parse_num(key, value)?,
            "agg.kind" => {
                sim.aggregator.kind = AggKind::parse(value).ok_or_else(|| {
                    ConfigError::for_key(key, format!("unknown aggregator `{value}`"))
                })?;
            }
            "agg.f_expected" => {
                sim.aggregator.f_expected = parse_num(key, value)?;
                self.f_explicit = true;
            }
            "agg.multikrum_c" => {
                let c: usize = parse_num(key, value)?;
                sim.aggregator.multikrum_c = if c == 0 { None } else { Some(c) };
            }
            "agg.residual_ci" => sim.aggregator.residual_ci = parse_num(key, value)?,
            "agg.residual_clip" => sim.aggregator.residual_clip = parse_num(key, value)?,
            "defense.enabled" => sim.defender.enabled = parse_bool(key, value)?,
            "defense.k_neighbors" => sim.defender.k_neighbors = parse_num(key, value)?,
            "defense.tau" => sim.defender.tau = parse_num(key, value)?,
            "optim.lr" => sim.optim.lr = parse_num(key, value)?,
            "optim.momentum" => sim.optim.momentum = parse_num(key, value)?,
            "optim.weight_decay" => sim.optim.weight_decay = parse_num(key, value)?,
            "model.hidden1" => sim.model.hidden1 = parse_num(key, value)?,
            "model.hidden2" => sim.model.hidden2 = parse_num(key, value)?,
            "data.num_classes" => sim.data.num_classes = parse_num(key, value)?,
            "data.input_dim" => sim.data.input_dim = parse_num(key, value)?,
            "data.train_per_class" => sim.data.train_per_class = parse_num(key, value)?,
            "data.test_per_class" => sim.data.test_per_class = parse_num(key, value)?,
            "data.class_separation" => sim.data.class_separation = parse_num(key, value)?,
            "data.noise_std" => sim.data.noise_std = parse_num(key, value)?,
            "surface.radius" => self.surface_radius = parse_num(key, value)?,
            "surface.steps" => self.surface_steps = parse_num(key, value)?,
            "output.export_datasets" => self.export_datasets = parse_bool(key, value)?,
            _ => unreachable!("key list checked above"),
        }
        Ok(())
    }

    /// Fills the values that are derived from others rather than fixed:
    /// the model's input/output widths follow the data spec, and the
    /// aggregator's assumed attacker count defaults to
    /// `ceil(attacker_ratio * participants_per_round)` unless set.
    pub fn derive_defaults(&mut self) {
        self.sim.model.input_dim = self.sim.data.input_dim;
        self.sim.model.num_classes = self.sim.data.num_classes;
        self.sim.seed = self.seeds[0];
        if !self.f_explicit {
            let m = self.sim.sampled_per_round() as f64;
            self.sim.aggregator.f_expected =
                (self.sim.attacker_ratio * m - 1e-9).ceil().max(0.0) as usize;
        }
    }

    /// The full configuration with every default expanded, as canonical
    /// strings. Parsing this map back yields an equal `Experiment`.
    pub fn resolved_map(&self) -> BTreeMap<String, String> {
        let sim = &self.sim;
        let seeds = self
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("seeds", seeds);
        put("rounds", sim.rounds.to_string());
        put("num_clients", sim.num_clients.to_string());
        put("sample_fraction", sim.sample_fraction.to_string());
        put("attacker_ratio", sim.attacker_ratio.to_string());
        put("beta", sim.beta.to_string());
        put("batch_size", sim.batch_size.to_string());
        put("local_epochs", sim.local_epochs.to_string());
        put("attack.kind", sim.attack.kind.name().to_string());
        put("attack.lie_z", sim.attack.lie_z.to_string());
        put("attack.stat_gamma", sim.attack.stat_gamma.to_string());
        put("attack.dyn_gamma_init", sim.attack.dyn_gamma_init.to_string());
        put("attack.dyn_threshold", sim.attack.dyn_threshold.to_string());
        put("agg.kind", sim.aggregator.kind.name().to_string());
        put("agg.f_expected", sim.aggregator.f_expected.to_string());
        put(
            "agg.multikrum_c",
            sim.aggregator.multikrum_c.unwrap_or(0).to_string(),
        );
        put("agg.residual_ci", sim.aggregator.residual_ci.to_string());
        put("agg.residual_clip", sim.aggregator.residual_clip.to_string());
        put("defense.enabled", sim.defender.enabled.to_string());
        put("defense.k_neighbors", sim.defender.k_neighbors.to_string());
        put("defense.tau", sim.defender.tau.to_string());
        put("optim.lr", sim.optim.lr.to_string());
        put("optim.momentum", sim.optim.momentum.to_string());
        put("optim.weight_decay", sim.optim.weight_decay.to_string());
        put("model.hidden1", sim.model.hidden1.to_string());
        put("model.hidden2", sim.model.hidden2.to_string());
        put("data.num_classes", sim.data.num_classes.to_string());
        put("data.input_dim", sim.data.input_dim.to_string());
        put("data.train_per_class", sim.data.train_per_class.to_string());
        put("data.test_per_class", sim.data.test_per_class.to_string());
        put("data.class_separation", sim.data.class_separation.to_string());
        put("data.noise_std", sim.data.noise_std.to_string());
        put("surface.radius", self.surface_radius.to_string());
        put("surface.steps", self.surface_steps.to_string());
        put("output.export_datasets", self.export_datasets.to_string());
        // The resolved form pins f_expected explicitly.
        map
    }

    /// Sets one sweep-axis value. `agg.f_expected` stays derived when it
    /// was not set explicitly, so attacker-ratio sweeps adjust it.
    pub fn set_axis(&mut self, axis: &str, value: &str) -> Result<(), ConfigError> {
        match axis {
            "num_clients" => self.sim.num_clients = parse_num(axis, value)?,
            "attacker_ratio" => self.sim.attacker_ratio = parse_num(axis, value)?,
            "beta" => self.sim.beta = parse_num(axis, value)?,
            "aggregator" => {
                self.sim.aggregator.kind = AggKind::parse(value).ok_or_else(|| {
                    ConfigError::for_key(axis, format!("unknown aggregator `{value}`"))
                })?;
            }
            "attack" => {
                self.sim.attack.kind = AttackKind::parse(value).ok_or_else(|| {
                    ConfigError::for_key(axis, format!("unknown attack `{value}`"))
                })?;
            }
            "defense_enabled" => self.sim.defender.enabled = parse_bool(axis, value)?,
            _ => {
                return Err(ConfigError::new(format!(
                    "unknown sweep axis `{axis}` (expected one of num_clients, \
                     attacker_ratio, beta, aggregator, attack, defense_enabled)"
                )))
            }
        }
        self.derive_defaults();
        self.sim.validate()?;
        Ok(())
    }
}

/// `key = value` lines with `#` comments.
fn text_entries(text: &str) -> Result<Vec<(String, String, Option<usize>)>, ConfigError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError {
                message: format!("expected `key = value`, got `{line}`"),
                line: Some(i + 1),
                key: None,
            });
        };
        entries.push((key.trim().to_string(), value.trim().to_string(), Some(i + 1)));
    }
    Ok(entries)
}

/// A flat JSON object; values may be strings, numbers, or booleans.
fn json_entries(text: &str) -> Result<Vec<(String, String, Option<usize>)>, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::new(format!("invalid JSON: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(ConfigError::new("expected a JSON object of key/value pairs"));
    };
    let mut entries = Vec::new();
    for (key, v) in map {
        let s = match v {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => b.to_string(),
            other => {
                return Err(ConfigError::for_key(
                    &key,
                    format!("unsupported JSON value `{other}`"),
                ))
            }
        };
        entries.push((key, s, None));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let exp = Experiment::parse("").unwrap();
        assert_eq!(exp, Experiment::default());
        assert_eq!(exp.sim.num_clients, 20);
        assert_eq!(exp.sim.beta, 0.5);
        assert_eq!(exp.sim.defender.tau, 2.0);
        assert_eq!(exp.sim.optim.lr, 0.01);
        assert_eq!(exp.seeds, vec![0]);
        // Derived: ceil(0.2 * 10) = 2.
        assert_eq!(exp.sim.aggregator.f_expected, 2);
    }

    #[test]
    fn parses_text_with_comments() {
        let text = "\
# fixture
rounds = 40          # short run
seeds = 0, 1, 2
attack.kind = label_flip
agg.kind = multi_krum
defense.enabled = false
";
        let exp = Experiment::parse(text).unwrap();
        assert_eq!(exp.sim.rounds, 40);
        assert_eq!(exp.seeds, vec![0, 1, 2]);
        assert_eq!(exp.sim.attack.kind, AttackKind::LabelFlip);
        assert_eq!(exp.sim.aggregator.kind, AggKind::MultiKrum);
        assert!(!exp.sim.defender.enabled);
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = Experiment::parse("rounds = 4\nrouds = 5\n").unwrap_err();
        assert_eq!(err.line, Some(2));
        assert_eq!(err.key.as_deref(), Some("rouds"));
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn duplicate_and_malformed_keys_rejected() {
        assert!(Experiment::parse("rounds = 4\nrounds = 5\n").is_err());
        let err = Experiment::parse("rounds\n").unwrap_err();
        assert_eq!(err.line, Some(1));
        assert!(Experiment::parse("rounds = x\n").is_err());
    }

    #[test]
    fn semantic_validation_runs() {
        assert!(Experiment::parse("sample_fraction = 0\n").is_err());
        assert!(Experiment::parse("attacker_ratio = 1.0\n").is_err());
        assert!(Experiment::parse("defense.k_neighbors = 64\n").is_err());
        assert!(Experiment::parse("surface.steps = 1\n").is_err());
    }

    #[test]
    fn f_expected_derivation_and_override() {
        let exp = Experiment::parse("attacker_ratio = 0.3\n").unwrap();
        assert_eq!(exp.sim.aggregator.f_expected, 3); // ceil(0.3 * 10)
        let exp = Experiment::parse("agg.f_expected = 1\nattacker_ratio = 0.3\n").unwrap();
        assert_eq!(exp.sim.aggregator.f_expected, 1);
        assert!(exp.f_explicit);
    }

    #[test]
    fn model_dims_follow_data() {
        let exp = Experiment::parse("data.input_dim = 7\ndata.num_classes = 3\n").unwrap();
        assert_eq!(exp.sim.model.input_dim, 7);
        assert_eq!(exp.sim.model.num_classes, 3);
    }

    #[test]
    fn resolved_map_round_trips() {
        let text = "\
seeds = 3, 9
rounds = 7
attack.kind = lie
attack.lie_z = 0.7
agg.kind = trimmed_mean
optim.lr = 0.05
data.noise_std = 0.8
";
        let exp = Experiment::parse(text).unwrap();
        let json = crate::report::resolved_json(&exp);
        let back = Experiment::parse(&json).unwrap();
        // The resolved file pins the derived f_expected, so `f_explicit`
        // flips; everything that affects the run must survive.
        assert_eq!(back.sim, exp.sim);
        assert_eq!(back.seeds, exp.seeds);
        assert_eq!(back.surface_radius, exp.surface_radius);
        assert_eq!(back.surface_steps, exp.surface_steps);
        assert_eq!(back.export_datasets, exp.export_datasets);
    }

    #[test]
    fn sweep_axes_apply() {
        let mut exp = Experiment::default();
        exp.set_axis("beta", "0.25").unwrap();
        assert_eq!(exp.sim.beta, 0.25);
        exp.set_axis("aggregator", "residual_base").unwrap();
        assert_eq!(exp.sim.aggregator.kind, AggKind::ResidualBase);
        exp.set_axis("defense_enabled", "false").unwrap();
        assert!(!exp.sim.defender.enabled);
        exp.set_axis("attacker_ratio", "0.4").unwrap();
        assert_eq!(exp.sim.aggregator.f_expected, 4);
        assert!(exp.set_axis("nope", "1").is_err());
    }
}
