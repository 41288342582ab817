//! Experiment configuration: one TOML tree holding every knob, with
//! dotted-path overrides and a stable hash for session handshakes.

use crate::comm::{ChannelConfig, PayloadConfig};
use crate::engine::{ControllerConfig, EngineConfig};
use crate::error::{CovError, Result};
use crate::harness::LatencyModel;
use crate::models::ModelConfig;
use crate::tokensel::SelectionConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisualConfig {
    /// Total visual tokens N.
    pub n: usize,
    pub dim: usize,
    pub layers: usize,
    /// Tokens planted to match the query keywords.
    pub plant_count: usize,
    pub base_increment: f64,
    pub planted_increment: f64,
}

impl Default for VisualConfig {
    fn default() -> Self {
        // N = 768 visual tokens; geometry knobs are heuristic.
        Self {
            n: 768,
            dim: 64,
            layers: 6,
            plant_count: 64,
            base_increment: 1.0,
            planted_increment: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BranchConfig {
    pub enabled: bool,
    pub f0: usize,
    pub rho: f64,
    /// Cap on forward passes spent planning per round; the effective
    /// budget is also bounded by the modeled verification wait.
    pub max_budget: usize,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            f0: 4,
            rho: 0.5,
            max_budget: 64,
        }
    }
}

/// Component toggles mirroring the ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComponentConfig {
    /// Draft over a reduced visual subset (off: full context on device).
    pub visual_reduction: bool,
    /// Score/SVD-based subset choice (off: first B_vis indices).
    pub token_selection: bool,
    /// Margin gating (off: every token is verified).
    pub margin_gate: bool,
    /// Adaptive draft length (off: k fixed at k_init).
    pub length_adapt: bool,
    pub branching: bool,
    /// Decoupled verification-correction (off: full draft logits uplink,
    /// edge-side residual sampling).
    pub decoupled_correction: bool,
}

impl Default for ComponentConfig {
    fn default() -> Self {
        Self {
            visual_reduction: true,
            token_selection: true,
            margin_gate: true,
            length_adapt: true,
            branching: true,
            decoupled_correction: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub seed: u64,
    pub query_terms: Vec<String>,
    pub model: ModelConfig,
    pub visual: VisualConfig,
    pub selection: SelectionConfig,
    pub engine: EngineConfig,
    pub controller: ControllerConfig,
    pub branching: BranchConfig,
    pub components: ComponentConfig,
    pub payload: PayloadConfig,
    pub channel: ChannelConfig,
    pub latency: LatencyModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 1,
            query_terms: vec![
                "describe".into(),
                "the".into(),
                "object".into(),
                "near".into(),
                "the".into(),
                "window".into(),
            ],
            model: ModelConfig::default(),
            visual: VisualConfig::default(),
            selection: SelectionConfig::default(),
            engine: EngineConfig::default(),
            controller: ControllerConfig::default(),
            branching: BranchConfig::default(),
            components: ComponentConfig::default(),
            payload: PayloadConfig::default(),
            channel: ChannelConfig::default(),
            latency: LatencyModel::default(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(s).map_err(|e| CovError::ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.engine.validate()?;
        self.controller.validate()?;
        if self.components.visual_reduction {
            self.selection
                .validate(self.visual.n, self.visual.dim, self.visual.layers)?;
        }
        if self.branching.enabled && self.components.branching {
            crate::engine::fanout(self.branching.f0, self.branching.rho, 1)?;
        }
        if self.model.vocab_size < 2 {
            return Err(CovError::ConfigError("vocab_size must be >= 2".into()));
        }
        if self.visual.plant_count > self.visual.n {
            return Err(CovError::InvalidPlant {
                planted: self.visual.plant_count,
                n: self.visual.n,
            });
        }
        if self.latency.device_token_s < 0.0 || self.latency.edge_round_s < 0.0 {
            return Err(CovError::ConfigError("latencies must be nonnegative".into()));
        }
        if self.query_terms.is_empty() {
            return Err(CovError::ConfigError("query_terms must not be empty".into()));
        }
        Ok(())
    }

    /// Stable hash of the canonical serialization, used in the session
    /// hello. run_id is excluded so renamed runs still pair up.
    pub fn stable_hash(&self) -> u64 {
        let mut canon = self.clone();
        canon.run_id = String::new();
        fnv1a(canon.to_toml_string().as_bytes())
    }

    /// Applies one `key=value` override. Keys may be dotted paths
    /// (`engine.gamma`) or bare leaf names (`gamma`) when unambiguous.
    /// The result is not validated, so overrides can pass through
    /// mutually-dependent intermediate states; callers validate once all
    /// overrides are in.
    pub fn apply_override(&self, spec: &str) -> Result<Self> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| CovError::ConfigError(format!("override '{spec}' is not key=value")))?;
        let mut tree: toml::Value = toml::from_str(&self.to_toml_string())
            .map_err(|e| CovError::ConfigError(e.to_string()))?;
        let path = resolve_path(&tree, key)?;
        set_leaf(&mut tree, &path, value)?;
        let text = toml::to_string(&tree).map_err(|e| CovError::ConfigError(e.to_string()))?;
        toml::from_str(&text).map_err(|e| CovError::ConfigError(e.to_string()))
    }
}

/// Resolves a bare leaf name to its dotted path, erroring when the name is
/// unknown or ambiguous. Dotted keys are validated as-is.
fn resolve_path(tree: &toml::Value, key: &str) -> Result<Vec<String>> {
    if key.contains('.') {
        let path: Vec<String> = key.split('.').map(str::to_string).collect();
        let mut node = tree;
        for part in &path[..path.len() - 1] {
            node = node
                .get(part)
                .ok_or_else(|| CovError::ConfigError(format!("unknown config key '{key}'")))?;
        }
        if node.get(&path[path.len() - 1]).is_none() {
            return Err(CovError::ConfigError(format!("unknown config key '{key}'")));
        }
        return Ok(path);
    }
    // An exact top-level leaf wins outright (`seed` means the run seed,
    // not model.seed).
    if matches!(tree.get(key), Some(v) if !v.is_table()) {
        return Ok(vec![key.to_string()]);
    }
    let mut matches = Vec::new();
    collect_paths(tree, key, &mut Vec::new(), &mut matches);
    match matches.len() {
        0 => Err(CovError::ConfigError(format!("unknown config key '{key}'"))),
        1 => Ok(matches.remove(0)),
        _ => Err(CovError::ConfigError(format!(
            "ambiguous config key '{key}': candidates {}",
            matches
                .iter()
                .map(|p| p.join("."))
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

fn collect_paths(
    node: &toml::Value,
    key: &str,
    prefix: &mut Vec<String>,
    out: &mut Vec<Vec<String>>,
) {
    if let toml::Value::Table(map) = node {
        for (name, child) in map {
            if name == key && !child.is_table() {
                let mut path = prefix.clone();
                path.push(name.clone());
                out.push(path);
            }
            prefix.push(name.clone());
            collect_paths(child, key, prefix, out);
            prefix.pop();
        }
    }
}

fn set_leaf(tree: &mut toml::Value, path: &[String], raw: &str) -> Result<()> {
    let mut node = tree;
    for part in &path[..path.len() - 1] {
        node = node.get_mut(part).expect("validated path");
    }
    let leaf = node.get_mut(&path[path.len() - 1]).expect("validated path");
    let parsed: toml::Value = match leaf {
        toml::Value::String(_) => toml::Value::String(raw.to_string()),
        toml::Value::Integer(_) => toml::Value::Integer(
            raw.parse()
                .map_err(|_| CovError::ConfigError(format!("'{raw}' is not an integer")))?,
        ),
        toml::Value::Float(_) => toml::Value::Float(
            raw.parse()
                .map_err(|_| CovError::ConfigError(format!("'{raw}' is not a number")))?,
        ),
        toml::Value::Boolean(_) => toml::Value::Boolean(
            raw.parse()
                .map_err(|_| CovError::ConfigError(format!("'{raw}' is not a boolean")))?,
        ),
        toml::Value::Array(_) => {
            let items: Vec<toml::Value> = raw
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| toml::Value::String(s.trim().to_string()))
                .collect();
            toml::Value::Array(items)
        }
        other => {
            return Err(CovError::ConfigError(format!(
                "cannot override non-scalar key of type {}",
                other.type_str()
            )))
        }
    };
    *leaf = parsed;
    Ok(())
}
