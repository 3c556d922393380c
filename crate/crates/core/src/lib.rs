//! Differentially private in-context inference.
//!
//! The pipeline asks an expert (typically a language model) for next-token
//! log-probabilities once per small group of context examples, clips each
//! vector so that no single example can move the aggregate by more than a
//! bounded amount, sums the clipped vectors (a product of experts in
//! probability space), and releases a token through the exponential
//! mechanism. Companion modules provide the privacy accounting that turns an
//! (ε, δ) budget into a mechanism temperature, voting and subsampled-voting
//! baselines, synthetic tasks with known ground truth, a remote HTTP expert,
//! and evaluation harnesses (convergence and membership-inference).

pub mod accounting;
pub mod engine;
pub mod evaluation;
pub mod experts;
pub mod mechanisms;
pub mod rng;
pub mod types;

pub use accounting::{
    advanced_epsilon, amplified_epsilon, calibrate_pbs_rounds, calibrate_sigma, naive_epsilon,
    AccountingError, CalibrationResult, CompositionMode, PbsCalibration,
    ADVANCED_COMPOSITION_FORMULA,
};
pub use engine::{
    classify, generate, pbs_classify, EngineError, GenerateOptions, GenerationRecord,
    InferenceMode, PbsConfig, PbsOutcome,
};
pub use evaluation::{
    convergence_experiment, d_inf, fit_loglog_slope, l1_dist, l_mean, mean_stderr, mia_scores,
    roc_auc, run_membership_attack, ConvergenceReport, EvalError, MiaConfig, MiaOutcome,
    MiaScore, RocCurve,
};
pub use experts::{
    EvidenceProvider, ExpertProvider, PlantedModel, PlantedProvider, PowerlawProvider,
    ProviderError, RemoteExpert, RemoteExpertConfig, RemoteStats, SyntheticTask,
    SyntheticTaskParams, ViewSampler,
};
pub use mechanisms::{
    aggregate_poe, aggregate_votes, argmax_release, clip_logprobs, exponential_distribution,
    noisy_argmax_votes, partition_groups, sample_exponential, vclip, ClipMode, UtilityKind,
    UtilityVector,
};
pub use rng::{derive_stream, hash_bytes, RngStream};
pub use types::{
    log_normalize, log_softmax, softmax, validate_logprobs, ContextExample, CoreError,
    ExpertSet, LogProbVector, PrivacyBudget, Token, Vocabulary,
};
