use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::adversary::{FloodForce, PoisonAttack, PoisonKind};
use crate::aggregation::AggregatorKind;
use crate::learning::{SyntheticSpec, TrainerConfig};
use crate::sampling::{BasaltParams, SamplerKind, SeedRefreshPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("malformed override {0:?}, expected key=value")]
    Override(String),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// How the per-round filtering threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ThresholdMode {
    /// Chernoff threshold from the analytic Byzantine bound.
    Apt,
    Fixed { b: f64 },
    /// `v − 1`: keep a single received model.
    Conservative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_test_fraction() -> f64 {
    0.2
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub enabled: bool,
    pub trainer: TrainerConfig,
    pub dirichlet_beta: f64,
    /// Honest F1 is evaluated every `eval_every` rounds and on the last one.
    pub eval_every: u64,
    pub data: DataSource,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig {
            enabled: true,
            trainer: TrainerConfig::default(),
            dirichlet_beta: 5.0,
            eval_every: 10,
            data: DataSource::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub view_size: usize,
    pub bootstrap_size: usize,
    pub rounds: u64,
    pub byzantine_fraction: f64,
    pub flood_force: FloodForce,
    pub attack: PoisonAttack,
    pub aggregator: AggregatorKind,
    pub sampler: SamplerKind,
    pub threshold: ThresholdMode,
    pub kappa: f64,
    /// Initial known-honest count; `(1 − f)·|I|` when absent.
    pub c0: Option<f64>,
    pub seed_refresh: SeedRefreshPolicy,
    pub basalt: BasaltParams,
    /// Seed every honest history with all Byzantine ids.
    pub prefill_byzantine_history: bool,
    pub learning: LearningConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 300,
            view_size: 20,
            bootstrap_size: 30,
            rounds: 200,
            byzantine_fraction: 0.1,
            flood_force: FloodForce::Finite(2),
            attack: PoisonAttack::default(),
            aggregator: AggregatorKind::Cs,
            sampler: SamplerKind::Haps,
            threshold: ThresholdMode::Apt,
            kappa: 1e-3,
            c0: None,
            seed_refresh: SeedRefreshPolicy::default(),
            basalt: BasaltParams::default(),
            prefill_byzantine_history: false,
            learning: LearningConfig::default(),
            seed: 0,
            output: None,
        }
    }
}

impl SimConfig {
    pub fn n_byzantine(&self) -> usize {
        (self.byzantine_fraction * self.n as f64).round() as usize
    }

    pub fn n_honest(&self) -> usize {
        self.n - self.n_byzantine()
    }

    /// Configured `c0`, or `(1 − f)·|I|` raised to at least one.
    pub fn initial_honest(&self) -> f64 {
        self.c0.unwrap_or_else(|| {
            ((1.0 - self.byzantine_fraction) * self.bootstrap_size as f64)
                .max(1.0)
                .min(self.n_honest() as f64)
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.view_size == 0 {
            return Err(invalid("view_size", "must be at least 1"));
        }
        if self.n < self.view_size + 1 {
            return Err(invalid("n", format!("must be at least view_size + 1 = {}", self.view_size + 1)));
        }
        if self.bootstrap_size == 0 {
            return Err(invalid("bootstrap_size", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        let f = self.byzantine_fraction;
        if !(0.0..0.5).contains(&f) {
            return Err(invalid("byzantine_fraction", format!("must lie in [0, 0.5), got {f}")));
        }
        if self.n_honest() < 2 {
            return Err(invalid("n", "at least two honest nodes are required"));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(invalid("kappa", format!("must lie in (0, 1), got {}", self.kappa)));
        }
        let c0 = self.initial_honest();
        if !(c0 >= 1.0 && c0 <= self.n_honest() as f64) {
            return Err(invalid("c0", format!("must lie in [1, {}], got {c0}", self.n_honest())));
        }
        if let ThresholdMode::Fixed { b } = self.threshold {
            if !(b.is_finite() && b >= 0.0) {
                return Err(invalid("threshold.b", format!("must be finite and non-negative, got {b}")));
            }
        }
        if self.attack.kind != PoisonKind::None {
            if self.attack.zeta_grid.is_empty() {
                return Err(invalid("attack.zeta_grid", "must not be empty"));
            }
            if self.attack.zeta_grid.iter().any(|z| !(z.is_finite() && *z >= 0.0)) {
                return Err(invalid("attack.zeta_grid", "values must be finite and non-negative"));
            }
        }
        self.seed_refresh
            .validate(self.view_size)
            .map_err(|e| invalid("seed_refresh", e.to_string()))?;
        self.basalt.validate().map_err(|e| invalid("basalt.rho", e.to_string()))?;
        if self.learning.enabled {
            let l = &self.learning;
            l.trainer
                .validate()
                .map_err(|e| invalid("learning.trainer", e.to_string()))?;
            if !(l.dirichlet_beta > 0.0 && l.dirichlet_beta.is_finite()) {
                return Err(invalid("learning.dirichlet_beta", "must be positive and finite"));
            }
            if l.eval_every == 0 {
                return Err(invalid("learning.eval_every", "must be at least 1"));
            }
            match &l.data {
                DataSource::Synthetic(spec) => {
                    spec.validate().map_err(|e| invalid("learning.data", e.to_string()))?
                }
                DataSource::Idx { test_fraction, .. } => {
                    if !(*test_fraction > 0.0 && *test_fraction < 1.0) {
                        return Err(invalid("learning.data.test_fraction", "must lie in (0, 1)"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("configuration serialises")
    }

    /// Applies `key=value` overrides; dotted keys address nested fields and
    /// values parse as JSON where possible, as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut value = self.to_value();
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, val) = raw
                .split_once('=')
                .filter(|(k, _)| !k.trim().is_empty())
                .ok_or_else(|| ConfigError::Override(raw.to_string()))?;
            let parsed = serde_json::from_str(val.trim())
                .unwrap_or_else(|_| Value::String(val.trim().to_string()));
            set_path(&mut value, key.trim(), parsed);
        }
        Self::from_value(value)
    }

    /// Applies a named scenario on top of `self`.
    pub fn with_preset(&self, name: &str) -> Result<Self, ConfigError> {
        let mut value = self.to_value();
        merge(&mut value, preset(name)?);
        Self::from_value(value)
    }
}

fn set_path(root: &mut Value, key: &str, new: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur.as_object_mut().expect("just made an object");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), new);
            return;
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

pub const PRESETS: &[&str] = &[
    "rq1-foe-f01",
    "rq1-foe-f03",
    "rq1-alie-f01",
    "rq1-alie-f03",
    "rq1-foe-f01-i60",
    "rq1-foe-f03-i60",
    "rq1-alie-f01-i60",
    "rq1-alie-f03-i60",
    "rq4-f1",
    "rq4-f2",
    "rq4-finf",
    "rq5-b2",
    "rq5-b4",
    "rq5-b6",
    "rq6-haps-f01",
    "rq6-haps-f03",
    "rq6-basalt-f01",
    "rq6-basalt-f03",
];

/// Overlay for a named scenario.
///
/// - `rq1-{foe,alie}-f0{1,3}[-i60]`: poisoning plus flooding with F = 2, CS
///   and the adaptive threshold, optionally with 60 bootstrap ids.
/// - `rq4-f{1,2,inf}`: flooding only, no learning, f = 0.1.
/// - `rq5-b{2,4,6}`: FOE at f = 0.1 with a fixed threshold `k·v·f`.
/// - `rq6-{haps,basalt}-f0{1,3}`: connectivity under F = 2, no learning.
pub fn preset(name: &str) -> Result<Value, ConfigError> {
    use serde_json::json;
    let unknown = || ConfigError::UnknownPreset(name.to_string());
    let table = json!({
        "n": 300,
        "view_size": 20,
        "rounds": 200,
        "flood_force": 2,
        "sampler": "haps",
        "threshold": { "mode": "apt" },
    });
    let fraction = |tag: &str| match tag {
        "f01" => Some(0.1),
        "f03" => Some(0.3),
        _ => None,
    };
    let parts: Vec<&str> = name.split('-').collect();
    let mut overlay = table;
    match parts.as_slice() {
        ["rq1", attack, f, rest @ ..] => {
            let kind = match *attack {
                "foe" => "foe",
                "alie" => "alie",
                _ => return Err(unknown()),
            };
            let f = fraction(f).ok_or_else(unknown)?;
            let bootstrap = match rest {
                [] => 30,
                ["i60"] => 60,
                _ => return Err(unknown()),
            };
            merge(
                &mut overlay,
                json!({
                    "byzantine_fraction": f,
                    "bootstrap_size": bootstrap,
                    "aggregator": "cs",
                    "attack": { "kind": kind },
                }),
            );
        }
        ["rq4", force] => {
            let force = match *force {
                "f1" => json!(1),
                "f2" => json!(2),
                "finf" => json!("inf"),
                _ => return Err(unknown()),
            };
            merge(
                &mut overlay,
                json!({
                    "byzantine_fraction": 0.1,
                    "flood_force": force,
                    "rounds": 100,
                    "attack": { "kind": "none" },
                    "learning": { "enabled": false },
                }),
            );
        }
        ["rq5", k] => {
            let k: f64 = match *k {
                "b2" => 2.0,
                "b4" => 4.0,
                "b6" => 6.0,
                _ => return Err(unknown()),
            };
            merge(
                &mut overlay,
                json!({
                    "byzantine_fraction": 0.1,
                    "aggregator": "cs",
                    "attack": { "kind": "foe" },
                    "threshold": { "mode": "fixed", "b": k * 20.0 * 0.1 },
                }),
            );
        }
        ["rq6", sampler, f] => {
            let sampler = match *sampler {
                "haps" => "haps",
                "basalt" => "basalt",
                _ => return Err(unknown()),
            };
            let f = fraction(f).ok_or_else(unknown)?;
            merge(
                &mut overlay,
                json!({
                    "byzantine_fraction": f,
                    "sampler": sampler,
                    "attack": { "kind": "none" },
                    "learning": { "enabled": false },
                }),
            );
        }
        _ => return Err(unknown()),
    }
    Ok(overlay)
}
