//! Run configuration: a flat `key = value` file with field-level validation
//! and defaults matching the evaluation setup.

use crate::predictors::PpmKind;
use crate::simnet::InjectionKind;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got {got:?}")]
    Syntax { line: usize, got: String },
    #[error("config key `{key}`: {problem}")]
    Invalid { key: String, problem: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Prediction-driven leader enforcement on.
    Seer,
    /// Plain consensus; leaders change only through timeouts.
    Nat,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Seer => "seer",
            Mode::Nat => "nat",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "seer" => Some(Mode::Seer),
            "nat" => Some(Mode::Nat),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyChoice {
    Internet2,
    FatTree,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlacementChoice {
    Auto,
    RoundRobin,
    Spread,
    Explicit(Vec<String>),
}

/// Everything a single run needs, resolved and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub seed: u64,
    pub duration_ms: f64,
    pub cluster_size: usize,
    pub predictor: PpmKind,

    pub topology: TopologyChoice,
    pub placement: PlacementChoice,
    pub fat_tree_radix: usize,
    pub fat_tree_hop_delay_ms: f64,
    pub light_speed_km_per_ms: f64,
    pub geo_nodes_file: Option<String>,
    pub geo_edges_file: Option<String>,

    pub t_m_ms: f64,
    pub t_p_ms: f64,
    pub t_n_ms: f64,
    pub t_i_ms: f64,
    pub t_explore_ms: f64,
    pub sma_window: usize,

    pub base_service_time_ms: f64,
    pub ram_baseline: f64,
    pub ram_noise: f64,

    /// Mean inter-arrival time 1/λ per client; None picks the cluster-size
    /// default (50 ms for ≤3 replicas, 60 for 4–5, 65 beyond).
    pub arrival_mean_ms: Option<f64>,
    pub imbalanced_arrivals: bool,
    pub intermediate_predictions: bool,
    pub rehearsal: bool,

    pub injection_kinds: Vec<InjectionKind>,
    pub injection_seed: Option<u64>,
    pub arrival_seed: Option<u64>,
    pub injection_trace_file: Option<String>,

    pub election_timeout_min_ms: f64,
    pub election_timeout_max_ms: f64,
    pub heartbeat_ms: f64,
    pub force_retry_ms: f64,

    pub en_lambda: f64,
    pub en_alpha: f64,
    pub ann_hidden_layers: usize,
    pub ann_hidden_units: usize,
    pub ann_epochs: usize,
    pub ann_batch: usize,
    pub ann_learning_rate: f64,

    pub lof_k: usize,
    pub lof_contamination: f64,
    pub lof_threshold: f64,
    pub deviation_threshold: f64,
    pub delta_improve_ms: f64,
    pub archive_cap: usize,

    pub symmetric_port_delay: bool,
    /// Safety-stress knob: force a rotating candidacy on every short tick.
    pub stress_rotation: bool,
    /// Safety-stress knob: crash whoever leads at this time.
    pub crash_leader_at_ms: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Seer,
            seed: 42,
            duration_ms: 150_000.0,
            cluster_size: 5,
            predictor: PpmKind::ElasticNet,
            topology: TopologyChoice::Internet2,
            placement: PlacementChoice::Auto,
            fat_tree_radix: 4,
            fat_tree_hop_delay_ms: 0.05,
            light_speed_km_per_ms: 200.0,
            geo_nodes_file: None,
            geo_edges_file: None,
            t_m_ms: 500.0,
            t_p_ms: 2_000.0,
            t_n_ms: 20_000.0,
            t_i_ms: 5_000.0,
            t_explore_ms: 5_000.0,
            sma_window: 10,
            base_service_time_ms: 0.2,
            ram_baseline: 0.3,
            ram_noise: 0.01,
            arrival_mean_ms: None,
            imbalanced_arrivals: false,
            intermediate_predictions: true,
            rehearsal: true,
            injection_kinds: vec![
                InjectionKind::Delay,
                InjectionKind::CpuContention,
                InjectionKind::CpuCap,
            ],
            injection_seed: None,
            arrival_seed: None,
            injection_trace_file: None,
            election_timeout_min_ms: 150.0,
            election_timeout_max_ms: 300.0,
            heartbeat_ms: 50.0,
            force_retry_ms: 150.0,
            en_lambda: 0.01,
            en_alpha: 0.5,
            ann_hidden_layers: 3,
            ann_hidden_units: 50,
            ann_epochs: 50,
            ann_batch: 32,
            ann_learning_rate: 1e-3,
            lof_k: 20,
            lof_contamination: 0.1,
            lof_threshold: 1.5,
            deviation_threshold: 0.985,
            delta_improve_ms: 0.0,
            archive_cap: 2000,
            symmetric_port_delay: true,
            stress_rotation: false,
            crash_leader_at_ms: None,
        }
    }
}

fn invalid(key: &str, problem: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), problem: problem.into() }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| invalid(key, format!("cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(invalid(key, format!("expected a boolean, got {value:?}"))),
    }
}

impl ScenarioConfig {
    /// Effective 1/λ: the configured override or the cluster-size default.
    pub fn effective_arrival_mean_ms(&self) -> f64 {
        self.arrival_mean_ms.unwrap_or(match self.cluster_size {
            0..=3 => 50.0,
            4..=5 => 60.0,
            _ => 65.0,
        })
    }

    pub fn effective_injection_seed(&self) -> u64 {
        self.injection_seed.unwrap_or(self.seed)
    }

    pub fn effective_arrival_seed(&self) -> u64 {
        self.arrival_seed.unwrap_or(self.seed)
    }

    /// Parses a flat `key = value` config text over the defaults.
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, got: raw.to_string() });
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() || value.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, got: raw.to_string() });
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Applies one key/value pair (also used for CLI overrides).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "mode" => {
                self.mode = Mode::parse(value)
                    .ok_or_else(|| invalid(key, "expected `seer` or `nat`"))?;
            }
            "seed" => self.seed = parse_num(key, value)?,
            "duration_ms" => self.duration_ms = parse_num(key, value)?,
            "cluster_size" => self.cluster_size = parse_num(key, value)?,
            "predictor" => {
                self.predictor = PpmKind::parse(value).ok_or_else(|| {
                    invalid(key, "expected `ols`, `elastic-net`, or `ann`")
                })?;
            }
            "topology" => {
                self.topology = match value {
                    "internet2" => TopologyChoice::Internet2,
                    "fat-tree" | "fat_tree" => TopologyChoice::FatTree,
                    _ => return Err(invalid(key, "expected `internet2` or `fat-tree`")),
                };
            }
            "placement" => {
                self.placement = if value == "auto" {
                    PlacementChoice::Auto
                } else if value == "round-robin" {
                    PlacementChoice::RoundRobin
                } else if value == "spread" {
                    PlacementChoice::Spread
                } else if let Some(rest) = value.strip_prefix("explicit:") {
                    let names: Vec<String> =
                        rest.split(',').map(|s| s.trim().to_string()).collect();
                    if names.iter().any(|n| n.is_empty()) {
                        return Err(invalid(key, "empty host name in explicit placement"));
                    }
                    PlacementChoice::Explicit(names)
                } else {
                    return Err(invalid(
                        key,
                        "expected `auto`, `round-robin`, `spread`, or `explicit:a,b,..`",
                    ));
                };
            }
            "fat_tree_radix" => self.fat_tree_radix = parse_num(key, value)?,
            "fat_tree_hop_delay_ms" => self.fat_tree_hop_delay_ms = parse_num(key, value)?,
            "light_speed_km_per_ms" => self.light_speed_km_per_ms = parse_num(key, value)?,
            "geo_nodes_file" => self.geo_nodes_file = Some(value.to_string()),
            "geo_edges_file" => self.geo_edges_file = Some(value.to_string()),
            "t_m_ms" => self.t_m_ms = parse_num(key, value)?,
            "t_p_ms" => self.t_p_ms = parse_num(key, value)?,
            "t_n_ms" => self.t_n_ms = parse_num(key, value)?,
            "t_i_ms" => self.t_i_ms = parse_num(key, value)?,
            "t_explore_ms" => self.t_explore_ms = parse_num(key, value)?,
            "sma_window" => self.sma_window = parse_num(key, value)?,
            "base_service_time_ms" => self.base_service_time_ms = parse_num(key, value)?,
            "ram_baseline" => self.ram_baseline = parse_num(key, value)?,
            "ram_noise" => self.ram_noise = parse_num(key, value)?,
            "arrival_mean_ms" => self.arrival_mean_ms = Some(parse_num(key, value)?),
            "imbalanced_arrivals" => self.imbalanced_arrivals = parse_bool(key, value)?,
            "intermediate_predictions" => {
                self.intermediate_predictions = parse_bool(key, value)?;
            }
            "rehearsal" => self.rehearsal = parse_bool(key, value)?,
            "injection_kinds" => {
                if value == "none" {
                    self.injection_kinds = Vec::new();
                } else {
                    let mut kinds = Vec::new();
                    for part in value.split(',') {
                        let part = part.trim();
                        let k = InjectionKind::parse(part).ok_or_else(|| {
                            invalid(key, format!("unknown injection kind {part:?}"))
                        })?;
                        if !kinds.contains(&k) {
                            kinds.push(k);
                        }
                    }
                    self.injection_kinds = kinds;
                }
            }
            "injection_seed" => self.injection_seed = Some(parse_num(key, value)?),
            "arrival_seed" => self.arrival_seed = Some(parse_num(key, value)?),
            "injection_trace_file" => self.injection_trace_file = Some(value.to_string()),
            "election_timeout_min_ms" => self.election_timeout_min_ms = parse_num(key, value)?,
            "election_timeout_max_ms" => self.election_timeout_max_ms = parse_num(key, value)?,
            "heartbeat_ms" => self.heartbeat_ms = parse_num(key, value)?,
            "force_retry_ms" => self.force_retry_ms = parse_num(key, value)?,
            "en_lambda" => self.en_lambda = parse_num(key, value)?,
            "en_alpha" => self.en_alpha = parse_num(key, value)?,
            "ann_hidden_layers" => self.ann_hidden_layers = parse_num(key, value)?,
            "ann_hidden_units" => self.ann_hidden_units = parse_num(key, value)?,
            "ann_epochs" => self.ann_epochs = parse_num(key, value)?,
            "ann_batch" => self.ann_batch = parse_num(key, value)?,
            "ann_learning_rate" => self.ann_learning_rate = parse_num(key, value)?,
            "lof_k" => self.lof_k = parse_num(key, value)?,
            "lof_contamination" => self.lof_contamination = parse_num(key, value)?,
            "lof_threshold" => self.lof_threshold = parse_num(key, value)?,
            "deviation_threshold" => self.deviation_threshold = parse_num(key, value)?,
            "delta_improve_ms" => self.delta_improve_ms = parse_num(key, value)?,
            "archive_cap" => self.archive_cap = parse_num(key, value)?,
            "symmetric_port_delay" => self.symmetric_port_delay = parse_bool(key, value)?,
            "stress_rotation" => self.stress_rotation = parse_bool(key, value)?,
            "crash_leader_at_ms" => self.crash_leader_at_ms = Some(parse_num(key, value)?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cluster_size == 0 {
            return Err(invalid("cluster_size", "must be at least 1"));
        }
        if !(self.duration_ms > 0.0) {
            return Err(invalid("duration_ms", "must be positive"));
        }
        for (key, v) in [
            ("t_m_ms", self.t_m_ms),
            ("t_p_ms", self.t_p_ms),
            ("t_n_ms", self.t_n_ms),
            ("t_i_ms", self.t_i_ms),
            ("t_explore_ms", self.t_explore_ms),
            ("base_service_time_ms", self.base_service_time_ms),
            ("heartbeat_ms", self.heartbeat_ms),
            ("force_retry_ms", self.force_retry_ms),
            ("fat_tree_hop_delay_ms", self.fat_tree_hop_delay_ms),
            ("light_speed_km_per_ms", self.light_speed_km_per_ms),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(key, "must be a positive number"));
            }
        }
        if let Some(m) = self.arrival_mean_ms {
            if !(m > 0.0) || !m.is_finite() {
                return Err(invalid("arrival_mean_ms", "must be a positive number"));
            }
        }
        if !(self.election_timeout_min_ms > 0.0)
            || self.election_timeout_max_ms <= self.election_timeout_min_ms
        {
            return Err(invalid(
                "election_timeout_max_ms",
                "timeout range must satisfy 0 < min < max",
            ));
        }
        if self.heartbeat_ms >= self.election_timeout_min_ms {
            return Err(invalid(
                "heartbeat_ms",
                "heartbeat must be shorter than the minimum election timeout",
            ));
        }
        if self.sma_window == 0 {
            return Err(invalid("sma_window", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.ram_baseline) {
            return Err(invalid("ram_baseline", "must lie in [0, 1)"));
        }
        if self.ram_noise < 0.0 {
            return Err(invalid("ram_noise", "must be non-negative"));
        }
        if self.en_lambda < 0.0 {
            return Err(invalid("en_lambda", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.en_alpha) {
            return Err(invalid("en_alpha", "must lie in [0, 1]"));
        }
        if self.ann_hidden_layers == 0 || self.ann_hidden_units == 0 {
            return Err(invalid("ann_hidden_layers", "network shape must be non-empty"));
        }
        if self.ann_epochs == 0 || self.ann_batch == 0 {
            return Err(invalid("ann_epochs", "training schedule must be non-zero"));
        }
        if !(self.ann_learning_rate > 0.0) {
            return Err(invalid("ann_learning_rate", "must be positive"));
        }
        if self.lof_k == 0 {
            return Err(invalid("lof_k", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lof_contamination) {
            return Err(invalid("lof_contamination", "must lie in [0, 1)"));
        }
        if !(self.lof_threshold > 0.0) {
            return Err(invalid("lof_threshold", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.deviation_threshold) {
            return Err(invalid("deviation_threshold", "must lie in [0, 1]"));
        }
        if self.delta_improve_ms < 0.0 {
            return Err(invalid("delta_improve_ms", "must be non-negative"));
        }
        if self.archive_cap == 0 {
            return Err(invalid("archive_cap", "must be at least 1"));
        }
        if self.fat_tree_radix == 0 || self.fat_tree_radix % 2 != 0 {
            return Err(invalid("fat_tree_radix", "must be a positive even number"));
        }
        if let Some(t) = self.crash_leader_at_ms {
            if !(t > 0.0) {
                return Err(invalid("crash_leader_at_ms", "must be positive"));
            }
        }
        Ok(())
    }
}
