//! Turns a provider descriptor into a live expert plus the sampling hooks
//! the experiment drivers need (context draws, query draws, ground truth
//! when the task knows it).

use std::time::Duration;

use poetry_dp_core::experts::planted::view_to_example;
use poetry_dp_core::experts::{
    EvidenceProvider, ExpertProvider, PlantedModel, PlantedProvider, PowerlawProvider,
    RemoteExpert, RemoteExpertConfig, SyntheticTask, SyntheticTaskParams,
};
use poetry_dp_core::rng::{derive_stream, RngStream};
use poetry_dp_core::types::{ContextExample, Vocabulary};

use crate::config::{ProviderConfig, RunConfig};

/// Stream tags; every random draw in a run is addressed as
/// (master seed, derive_stream([tag, ...])) so record identities are stable
/// under config reordering.
pub const TAG_CONTEXT: u64 = 1;
pub const TAG_QUERY: u64 = 2;
pub const TAG_MECHANISM: u64 = 3;
pub const TAG_PBS: u64 = 4;

/// Stable per-mode component of mechanism stream addresses.
pub fn mode_tag(mode: poetry_dp_core::engine::InferenceMode) -> u64 {
    use poetry_dp_core::engine::InferenceMode::*;
    match mode {
        PoeDp => 0,
        RnmDp => 1,
        PbsDp => 2,
        NonprivateFull => 3,
        SoftCiNoiseless => 4,
        HardCiNoiseless => 5,
    }
}

pub enum BuiltProvider {
    Evidence { task: SyntheticTask, provider: EvidenceProvider },
    Planted { model: PlantedModel, provider: PlantedProvider },
    Powerlaw(PowerlawProvider),
    Remote(RemoteExpert),
}

impl BuiltProvider {
    /// Instantiates the configured provider; `endpoint_override` carries the
    /// POETRY_DP_ENDPOINT environment variable when set.
    pub fn build(cfg: &RunConfig, endpoint_override: Option<String>) -> anyhow::Result<Self> {
        Ok(match &cfg.provider {
            ProviderConfig::Evidence { params } => {
                let params = params.clone().unwrap_or_else(|| default_task_params(cfg));
                let task = SyntheticTask::new(params)?;
                let provider = EvidenceProvider::new(task.clone());
                BuiltProvider::Evidence { task, provider }
            }
            ProviderConfig::Planted { seed } => {
                let model = PlantedModel::default_model(*seed);
                let provider = PlantedProvider::new(model.clone())?;
                BuiltProvider::Planted { model, provider }
            }
            ProviderConfig::Powerlaw { k, exponent, seed } => {
                BuiltProvider::Powerlaw(PowerlawProvider::new(*k, *exponent, *seed)?)
            }
            ProviderConfig::Remote { endpoint, timeout_ms, retries, max_in_flight, stochastic } => {
                let vocab = Vocabulary::new(
                    cfg.vocabulary.clone().expect("validated: remote has a vocabulary"),
                )?;
                let remote_cfg = RemoteExpertConfig {
                    endpoint: endpoint_override.unwrap_or_else(|| endpoint.clone()),
                    timeout: Duration::from_millis(*timeout_ms),
                    retries: *retries,
                    max_in_flight: *max_in_flight,
                    stochastic: *stochastic,
                };
                BuiltProvider::Remote(RemoteExpert::new(remote_cfg, vocab).map_err(
                    |e| anyhow::anyhow!("remote provider setup failed: {e}"),
                )?)
            }
        })
    }

    pub fn expert(&self) -> &dyn ExpertProvider {
        match self {
            BuiltProvider::Evidence { provider, .. } => provider,
            BuiltProvider::Planted { provider, .. } => provider,
            BuiltProvider::Powerlaw(p) => p,
            BuiltProvider::Remote(r) => r,
        }
    }

    /// Draws the per-seed context set (`max_j` examples; sweeps slice
    /// prefixes so growing J only adds examples).
    pub fn sample_context(&self, seed: u64, max_j: usize) -> Vec<ContextExample> {
        let mut rng = RngStream::new(seed, derive_stream(&[TAG_CONTEXT]));
        match self {
            BuiltProvider::Evidence { task, .. } => task.sample_context(max_j, &mut rng),
            BuiltProvider::Planted { model, .. } => (0..max_j)
                .map(|_| view_to_example(&model.sample_view(&mut rng)))
                .collect(),
            // Abstract providers have no task distribution; placeholder
            // payloads still exercise grouping and the wire protocol.
            BuiltProvider::Powerlaw(_) | BuiltProvider::Remote(_) => (0..max_j)
                .map(|i| {
                    ContextExample::new(format!("example_{i}"), None)
                        .expect("payload is non-empty")
                })
                .collect(),
        }
    }

    /// Draws one query prompt and, when the task defines one, its true label.
    pub fn sample_query(&self, seed: u64, query_id: usize) -> (String, Option<usize>) {
        match self {
            BuiltProvider::Evidence { task, .. } => {
                let mut rng =
                    RngStream::new(seed, derive_stream(&[TAG_QUERY, query_id as u64]));
                let (payload, truth) = task.sample_query(&mut rng);
                (payload, Some(truth))
            }
            // The planted expert conditions only on its views.
            BuiltProvider::Planted { .. } => (String::new(), None),
            BuiltProvider::Powerlaw(_) | BuiltProvider::Remote(_) => {
                (format!("query {seed}:{query_id}"), None)
            }
        }
    }
}

/// Per-kind parameter defaults: membership-attack runs get the membership
/// task, everything else the reference classification task.
fn default_task_params(cfg: &RunConfig) -> SyntheticTaskParams {
    if cfg.kind == crate::config::ExperimentKind::Mia {
        SyntheticTaskParams::membership()
    } else {
        SyntheticTaskParams::default()
    }
}
