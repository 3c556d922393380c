//! End-to-end inference: per-group expert calls, clipping, aggregation, and
//! release, looped over tokens — plus every baseline mode the comparisons
//! need (non-private full context, noiseless conditional-independence in
//! soft and hard form, noisy-vote and subsampled-voting baselines).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{
    advanced_epsilon, calibrate_pbs_rounds, naive_epsilon, AccountingError, CompositionMode,
    PbsCalibration,
};
use crate::experts::{ExpertProvider, ProviderError};
use crate::mechanisms::{
    aggregate_poe, aggregate_votes, argmax_release, clip_logprobs, noisy_argmax_votes,
    partition_groups, sample_exponential, ClipMode, UtilityKind, UtilityVector,
};
use crate::rng::RngStream;
use crate::types::{
    argmax_ties_low, log_normalize, ContextExample, CoreError, ExpertSet, LogProbVector,
    PrivacyBudget,
};
use thiserror::Error;

/// Which inference pipeline releases the tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// One full-context call, sample its distribution directly (no privacy).
    NonprivateFull,
    /// Clipped product-of-experts, deterministic argmax, no noise.
    SoftCiNoiseless,
    /// Per-expert votes, deterministic argmax, no noise.
    HardCiNoiseless,
    /// Clipped product-of-experts released through the exponential mechanism.
    PoeDp,
    /// Per-expert votes released through report-noisy-max.
    RnmDp,
    /// Subsampled voting over repeated full-context calls; see [`pbs_classify`].
    PbsDp,
}

impl InferenceMode {
    pub fn is_dp(self) -> bool {
        matches!(self, InferenceMode::PoeDp | InferenceMode::RnmDp | InferenceMode::PbsDp)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InferenceMode::NonprivateFull => "nonprivate_full",
            InferenceMode::SoftCiNoiseless => "soft_ci_noiseless",
            InferenceMode::HardCiNoiseless => "hard_ci_noiseless",
            InferenceMode::PoeDp => "poe_dp",
            InferenceMode::RnmDp => "rnm_dp",
            InferenceMode::PbsDp => "pbs_dp",
        }
    }
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("provider failure at token {token}, group {group}: {source}")]
    Provider {
        token: usize,
        group: usize,
        #[source]
        source: ProviderError,
    },
    #[error("dp mode requires a calibrated sigma; call PrivacyBudget::calibrated first")]
    BudgetUnset,
    #[error("requested {requested} tokens but the budget is calibrated for {calibrated}")]
    HorizonExceeded { requested: usize, calibrated: usize },
    #[error("mode {0} is not supported by this entry point")]
    UnsupportedMode(InferenceMode),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Accounting(#[from] AccountingError),
}

/// Options that tune a generation run without touching the privacy budget.
#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    pub clip_mode: ClipMode,
    /// Record the per-token utility vectors for post-hoc analysis (required
    /// by the membership-inference scorer).
    pub audit: bool,
}

/// Everything one generation run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Released token ids, in order; at most `t_max` of them.
    pub tokens: Vec<usize>,
    /// Per-token utility snapshots when auditing was requested.
    pub audit_utilities: Option<Vec<UtilityVector>>,
    /// Budget actually spent under the run's composition rule; `None` for
    /// non-private and noiseless modes.
    pub epsilon_spent: Option<f64>,
    pub mode: InferenceMode,
    pub seed: u64,
    pub stream: u64,
    /// Total provider calls issued; doubles as the deterministic cost field
    /// in result records so reruns stay byte-identical.
    pub expert_calls: u64,
}

impl GenerationRecord {
    /// The single released label of a classification run.
    pub fn label(&self) -> usize {
        self.tokens[0]
    }
}

/// Subsampled-voting configuration: `rounds` Poisson subsamples, each example
/// included independently with probability `q` per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PbsConfig {
    pub rounds: usize,
    pub q: f64,
}

impl Default for PbsConfig {
    fn default() -> Self {
        Self { rounds: 100, q: 0.5 }
    }
}

/// Result of one subsampled-voting classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PbsOutcome {
    pub token: usize,
    /// Summed noisy one-hot votes per candidate.
    pub votes: Vec<f64>,
    pub expert_calls: u64,
    pub mean_subset_size: f64,
    pub calibration: PbsCalibration,
}

/// Runs the token loop in the requested mode.
///
/// Per token: per-example modes issue one provider call per group (all J
/// examples partitioned contiguously), aggregate, and release; the
/// non-private mode issues a single full-context call and samples it. The
/// generated prefix is passed to every call so later tokens condition on
/// earlier ones. Generation stops early when the vocabulary defines an
/// end-of-sequence token and it is released (σ stays calibrated for `t_max`;
/// stopping early only underspends).
pub fn generate(
    query_x: &str,
    set: &ExpertSet,
    provider: &dyn ExpertProvider,
    budget: &PrivacyBudget,
    mode: InferenceMode,
    t_max: usize,
    opts: &GenerateOptions,
    rng: &mut RngStream,
) -> Result<GenerationRecord, EngineError> {
    if mode == InferenceMode::PbsDp {
        return Err(EngineError::UnsupportedMode(mode));
    }
    let sigma = if mode.is_dp() {
        if t_max > budget.max_tokens {
            return Err(EngineError::HorizonExceeded {
                requested: t_max,
                calibrated: budget.max_tokens,
            });
        }
        budget.sigma.ok_or(EngineError::BudgetUnset)?
    } else {
        0.0
    };

    let eos = provider.vocabulary().eos();
    let mut tokens: Vec<usize> = Vec::with_capacity(t_max);
    let mut audit = opts.audit.then(Vec::new);
    let mut expert_calls = 0u64;

    for t in 0..t_max {
        let (token, utility) = match mode {
            InferenceMode::NonprivateFull => {
                let lp = provider
                    .full_context(&tokens, query_x, set.examples())
                    .map_err(|source| EngineError::Provider { token: t, group: 0, source })?;
                expert_calls += 1;
                let probs = log_normalize(&lp);
                let token = rng.categorical(&probs);
                let utility = UtilityVector {
                    values: lp.values().to_vec(),
                    sensitivity: budget.gamma,
                    kind: UtilityKind::PoeSum,
                };
                (token, utility)
            }
            InferenceMode::SoftCiNoiseless
            | InferenceMode::PoeDp
            | InferenceMode::HardCiNoiseless
            | InferenceMode::RnmDp => {
                let groups = partition_groups(set);
                let raw = query_groups(provider, &groups, &tokens, query_x, t)?;
                expert_calls += groups.len() as u64;
                let utility = match mode {
                    InferenceMode::SoftCiNoiseless | InferenceMode::PoeDp => {
                        let clipped: Vec<LogProbVector> = raw
                            .iter()
                            .map(|lp| clip_logprobs(lp, budget.gamma, opts.clip_mode))
                            .collect();
                        aggregate_poe(&clipped, budget.gamma)?
                    }
                    _ => aggregate_votes(&raw)?,
                };
                let token = match mode {
                    InferenceMode::PoeDp => sample_exponential(&utility, sigma, rng),
                    InferenceMode::RnmDp => noisy_argmax_votes(&utility, sigma, rng),
                    _ => argmax_release(&utility),
                };
                (token, utility)
            }
            InferenceMode::PbsDp => unreachable!("rejected above"),
        };
        if let Some(a) = audit.as_mut() {
            a.push(utility);
        }
        tokens.push(token);
        if eos == Some(token) {
            break;
        }
    }

    let epsilon_spent = mode.is_dp().then(|| match budget.composition {
        CompositionMode::Naive => naive_epsilon(sigma, tokens.len()),
        CompositionMode::Advanced => advanced_epsilon(sigma, tokens.len(), budget.delta),
    });

    Ok(GenerationRecord {
        tokens,
        audit_utilities: audit,
        epsilon_spent,
        mode,
        seed: rng.seed(),
        stream: rng.stream(),
        expert_calls,
    })
}

/// Issues the per-group provider calls for one token step, concurrently
/// unless the provider asked to be serialized. Results come back in group
/// index order either way, so downstream float sums are reproducible.
fn query_groups(
    provider: &dyn ExpertProvider,
    groups: &[&[ContextExample]],
    prefix: &[usize],
    query_x: &str,
    t: usize,
) -> Result<Vec<LogProbVector>, EngineError> {
    if provider.serial() || groups.len() == 1 {
        groups
            .iter()
            .enumerate()
            .map(|(j, group)| {
                provider
                    .query(prefix, query_x, group)
                    .map_err(|source| EngineError::Provider { token: t, group: j, source })
            })
            .collect()
    } else {
        groups
            .par_iter()
            .enumerate()
            .map(|(j, group)| {
                provider
                    .query(prefix, query_x, group)
                    .map_err(|source| EngineError::Provider { token: t, group: j, source })
            })
            .collect()
    }
}

/// Single-token classification: [`generate`] with a one-token horizon.
pub fn classify(
    query_x: &str,
    set: &ExpertSet,
    provider: &dyn ExpertProvider,
    budget: &PrivacyBudget,
    mode: InferenceMode,
    opts: &GenerateOptions,
    rng: &mut RngStream,
) -> Result<GenerationRecord, EngineError> {
    generate(query_x, set, provider, budget, mode, 1, opts, rng)
}

/// Subsampled-voting classification baseline.
///
/// The total budget is split by accounting into a per-round budget ε₀ such
/// that `rounds` releases, each amplified by Poisson subsampling at rate q,
/// compose back to at most ε. Every round draws its subsample, makes one
/// full-context call on it (a zero-shot call when the subsample is empty),
/// clips, and releases a one-hot vote through the exponential mechanism at
/// ε₀. The final argmax over summed votes is post-processing and spends
/// nothing further.
pub fn pbs_classify(
    query_x: &str,
    set: &ExpertSet,
    provider: &dyn ExpertProvider,
    budget: &PrivacyBudget,
    cfg: &PbsConfig,
    opts: &GenerateOptions,
    rng: &mut RngStream,
) -> Result<PbsOutcome, EngineError> {
    let calibration = calibrate_pbs_rounds(
        budget.epsilon,
        budget.delta,
        cfg.rounds,
        cfg.q,
        budget.composition,
    )?;
    let k = provider.vocabulary().size();
    let mut votes = vec![0.0; k];
    let mut total_subset = 0usize;
    for round in 0..cfg.rounds {
        // Poisson subsample; q ≥ 1 keeps everything without consuming draws,
        // so the q = 1 case is exactly a full-context vote.
        let subset: Vec<ContextExample> = if cfg.q >= 1.0 {
            set.examples().to_vec()
        } else {
            set.examples()
                .iter()
                .filter(|_| rng.uniform_open01() < cfg.q)
                .cloned()
                .collect()
        };
        total_subset += subset.len();
        let lp = provider
            .full_context(&[], query_x, &subset)
            .map_err(|source| EngineError::Provider { token: 0, group: round, source })?;
        let clipped = clip_logprobs(&lp, budget.gamma, opts.clip_mode);
        let utility = UtilityVector {
            values: clipped.values().to_vec(),
            sensitivity: budget.gamma,
            kind: UtilityKind::PoeSum,
        };
        let winner = sample_exponential(&utility, calibration.round_epsilon, rng);
        votes[winner] += 1.0;
    }
    Ok(PbsOutcome {
        token: argmax_ties_low(&votes),
        votes,
        expert_calls: cfg.rounds as u64,
        mean_subset_size: total_subset as f64 / cfg.rounds as f64,
        calibration,
    })
}
