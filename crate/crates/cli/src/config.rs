//! Run configuration: a single versioned JSON document. Unknown keys are
//! hard errors — a silently ignored typo in a privacy parameter is worse
//! than a failed run — and every numeric invariant is checked up front,
//! before any provider work starts.

use std::collections::BTreeSet;
use std::path::Path;

use poetry_dp_core::accounting::CompositionMode;
use poetry_dp_core::engine::{InferenceMode, PbsConfig};
use poetry_dp_core::experts::SyntheticTaskParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid JSON for this schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported config version {got} (this build understands {CONFIG_VERSION})")]
    Version { got: u32 },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// What the run does. `calibrate` exists for completeness but is served by
/// the flag-driven `calibrate` subcommand, not by a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Classify,
    Generate,
    Converge,
    Mia,
    CompareAgg,
    Calibrate,
    Pbs,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Classify => "classify",
            ExperimentKind::Generate => "generate",
            ExperimentKind::Converge => "converge",
            ExperimentKind::Mia => "mia",
            ExperimentKind::CompareAgg => "compare_agg",
            ExperimentKind::Calibrate => "calibrate",
            ExperimentKind::Pbs => "pbs",
        }
    }
}

/// Which expert answers the calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Synthetic word-count classification task with known labels.
    Evidence {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<SyntheticTaskParams>,
    },
    /// Planted-state simulator with a computable infinite-ensemble limit.
    Planted { seed: u64 },
    /// Deterministic power-law expert over an abstract token set.
    Powerlaw { k: usize, exponent: f64, seed: u64 },
    /// Remote HTTP log-probability server; requires a top-level vocabulary.
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_max_in_flight")]
        max_in_flight: usize,
        #[serde(default)]
        stochastic: bool,
    },
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    3
}

fn default_max_in_flight() -> usize {
    4
}

fn default_group_size() -> usize {
    1
}

fn default_gamma() -> f64 {
    2.0
}

fn default_epsilon() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    1e-5
}

fn default_t_max() -> usize {
    1
}

fn default_queries_per_seed() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub kind: ExperimentKind,
    pub provider: ProviderConfig,
    /// Candidate surfaces for the remote provider; synthetic providers bring
    /// their own and reject an override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    /// Context sizes to sweep (ensemble sizes for `converge`).
    pub j: Vec<usize>,
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    /// Defaults to advanced composition when t_max > 1 and δ > 0, else naive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub composition: Option<CompositionMode>,
    /// Inference modes to sweep; ignored by kinds with a fixed pipeline
    /// (converge, mia, compare_agg, pbs).
    #[serde(default)]
    pub modes: Vec<InferenceMode>,
    /// Master seeds; every stream in the run derives from one of these.
    pub seeds: Vec<u64>,
    /// Queries per master seed (trials per ensemble size for `converge`).
    #[serde(default = "default_queries_per_seed")]
    pub queries_per_seed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pbs: Option<PbsConfig>,
    /// Record per-token utility vectors in each result (debugging aid; the
    /// utilities are pre-noise internals, so treat audited output as
    /// sensitive).
    #[serde(default)]
    pub audit: bool,
    /// Output base path; `<out>.jsonl` and `<out>.csv` are written. The
    /// `--out` flag overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The composition rule actually in force.
    pub fn composition_mode(&self) -> CompositionMode {
        self.composition.unwrap_or({
            if self.t_max > 1 && self.delta > 0.0 {
                CompositionMode::Advanced
            } else {
                CompositionMode::Naive
            }
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError::Invalid(msg));
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version { got: self.version });
        }
        if self.kind == ExperimentKind::Calibrate {
            return fail("kind \"calibrate\" is flag-driven; use the calibrate subcommand".into());
        }
        if self.j.is_empty() {
            return fail("j must list at least one context size".into());
        }
        if self.j.iter().any(|&j| j == 0) {
            return fail("context sizes must be positive".into());
        }
        if self.j.iter().collect::<BTreeSet<_>>().len() != self.j.len() {
            return fail("context sizes must be distinct".into());
        }
        if self.group_size == 0 {
            return fail("group_size must be at least 1".into());
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return fail(format!("gamma must be positive and finite, got {}", self.gamma));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return fail(format!("epsilon must be positive and finite, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return fail(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if self.seeds.is_empty() {
            return fail("seeds must list at least one master seed".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return fail("master seeds must be distinct".into());
        }
        if self.queries_per_seed == 0 {
            return fail("queries_per_seed must be at least 1".into());
        }
        if self.composition_mode() == CompositionMode::Advanced && self.delta == 0.0 {
            return fail("advanced composition needs delta > 0".into());
        }
        match self.kind {
            ExperimentKind::Classify | ExperimentKind::Generate => {
                if self.modes.is_empty() {
                    return fail("classify/generate need at least one inference mode".into());
                }
                if self.modes.contains(&InferenceMode::PbsDp) {
                    return fail("subsampled voting runs under kind \"pbs\", not as a mode".into());
                }
                if self.kind == ExperimentKind::Classify && self.t_max != 1 {
                    return fail("classify releases exactly one token; set t_max = 1".into());
                }
            }
            ExperimentKind::Pbs => {
                if self.pbs.is_none() {
                    return fail("kind \"pbs\" needs the pbs section".into());
                }
                if self.t_max != 1 {
                    return fail("subsampled voting classifies one token; set t_max = 1".into());
                }
            }
            ExperimentKind::Converge => {
                if !matches!(self.provider, ProviderConfig::Planted { .. }) {
                    return fail("converge requires the planted provider".into());
                }
            }
            ExperimentKind::Mia => {
                if !matches!(self.provider, ProviderConfig::Evidence { .. }) {
                    return fail("mia requires the evidence provider".into());
                }
            }
            ExperimentKind::CompareAgg => {
                if !matches!(self.provider, ProviderConfig::Powerlaw { .. }) {
                    return fail("compare_agg requires the powerlaw provider".into());
                }
            }
            ExperimentKind::Calibrate => unreachable!("rejected above"),
        }
        if let Some(pbs) = &self.pbs {
            if pbs.rounds == 0 {
                return fail("pbs.rounds must be at least 1".into());
            }
            if !(pbs.q > 0.0) || pbs.q > 1.0 {
                return fail(format!("pbs.q must lie in (0, 1], got {}", pbs.q));
            }
        }
        match &self.provider {
            ProviderConfig::Remote { endpoint, max_in_flight, .. } => {
                if endpoint.is_empty() {
                    return fail("remote provider needs an endpoint".into());
                }
                if *max_in_flight == 0 {
                    return fail("remote max_in_flight must be at least 1".into());
                }
                match &self.vocabulary {
                    None => return fail("remote provider needs a top-level vocabulary".into()),
                    Some(v) if v.len() < 2 => {
                        return fail("vocabulary needs at least two candidates".into())
                    }
                    Some(_) => {}
                }
            }
            ProviderConfig::Powerlaw { k, exponent, .. } => {
                if *k < 2 {
                    return fail("powerlaw k must be at least 2".into());
                }
                if !(*exponent >= 0.0) || !exponent.is_finite() {
                    return fail(format!("powerlaw exponent must be ≥ 0, got {exponent}"));
                }
                if self.vocabulary.is_some() {
                    return fail("powerlaw provider defines its own vocabulary".into());
                }
            }
            ProviderConfig::Evidence { params } => {
                if self.vocabulary.is_some() {
                    return fail("evidence provider defines its own vocabulary".into());
                }
                if let Some(p) = params {
                    if p.num_classes < 2 {
                        return fail("evidence task needs at least two classes".into());
                    }
                }
            }
            ProviderConfig::Planted { .. } => {
                if self.vocabulary.is_some() {
                    return fail("planted provider defines its own vocabulary".into());
                }
            }
        }
        Ok(())
    }

    /// Stable hash of the configuration content. The document is re-encoded
    /// through `serde_json::Value` (object keys sort in map order) so two
    /// files with reordered keys or different whitespace hash identically.
    pub fn content_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = canonical_json(&value);
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

/// Serializes a JSON value with object keys in sorted order at every level.
fn canonical_json(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .iter()
                .map(|k| format!("{}:{}", serde_json::to_string(k).unwrap(), canonical_json(&map[*k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        serde_json::Value::Array(items) => {
            let body: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", body.join(","))
        }
        other => serde_json::to_string(other).unwrap(),
    }
}

/// Human-oriented schema reference printed by `--print-schema`.
pub const CONFIG_SCHEMA: &str = r#"poetry-dp run configuration (JSON, version 1)

{
  "version": 1,                     // required; must be 1
  "kind": "classify",               // classify | generate | converge | mia | compare_agg | pbs
  "provider": {                     // exactly one of:
    "type": "evidence",             //   synthetic classification task
    "params": { ... }               //   optional overrides: num_classes,
                                    //     words_per_class, concentration, blur,
                                    //     blur_seed, doc_len, prior_sharpness,
                                    //     evidence_sharpness, label_noise
  },
  // {"type": "planted", "seed": 12345}
  // {"type": "powerlaw", "k": 10, "exponent": 1.5, "seed": 7}
  // {"type": "remote", "endpoint": "http://host:port",
  //  "timeout_ms": 10000, "retries": 3, "max_in_flight": 4, "stochastic": false}
  "vocabulary": null,               // candidate surfaces; required for remote only
  "j": [4, 8, 32],                  // context sizes (ensemble sizes for converge)
  "group_size": 1,                  // examples per expert call
  "gamma": 2.0,                     // clip bound
  "epsilon": 1.0,                   // total privacy budget
  "delta": 1e-5,                    // budget slack; 0 forces naive composition
  "t_max": 1,                       // token horizon; classify requires 1
  "composition": null,              // "naive" | "advanced"; default: advanced
                                    // when t_max > 1 and delta > 0, else naive
  "modes": ["poe_dp", "rnm_dp"],    // nonprivate_full | soft_ci_noiseless |
                                    // hard_ci_noiseless | poe_dp | rnm_dp
  "seeds": [0, 1, 2],               // master seeds; all randomness derives from these
  "queries_per_seed": 10,           // prompts per seed (trials for converge)
  "pbs": {"rounds": 100, "q": 0.5}, // required for kind "pbs"
  "audit": false,                   // attach pre-noise utility vectors to records
  "out": "results/run"              // writes <out>.jsonl and <out>.csv; --out overrides
}

Unknown keys anywhere are errors. Exit codes: 0 success; 1 when more than 5%
of records failed; 2 for usage or config errors.
"#;
