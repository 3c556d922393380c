//! Expert providers: everything that can answer "log-probabilities over the
//! candidate set, given a query, a generated prefix, and some context
//! examples". Synthetic providers stand in for a frozen language model at
//! desk scale; the remote provider speaks to a real one over HTTP.

use thiserror::Error;

use crate::rng::{derive_stream, hash_bytes};
use crate::types::{ContextExample, CoreError, LogProbVector, Vocabulary};

pub mod evidence;
pub mod planted;
pub mod powerlaw;
pub mod remote;

pub use evidence::{EvidenceProvider, SyntheticTask, SyntheticTaskParams};
pub use planted::{PlantedModel, PlantedProvider, ViewSampler};
pub use powerlaw::PowerlawProvider;
pub use remote::{RemoteExpert, RemoteExpertConfig, RemoteStats};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider returned invalid log-probabilities: {0}")]
    Invalid(#[from] CoreError),
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("expected {expected} log-probabilities, got {got}")]
    Arity { expected: usize, got: usize },
}

/// The log-probability oracle behind every inference mode.
///
/// `query` answers for one contiguous group of context examples (the
/// per-expert call); `full_context` answers a single call conditioned on the
/// whole example list, which is also used with an empty list for zero-shot
/// calls. Implementations must return vectors that pass
/// [`crate::types::validate_logprobs`] against their vocabulary, and must be
/// deterministic functions of their inputs and construction-time seed unless
/// they declare themselves `stochastic`.
pub trait ExpertProvider: Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn query(
        &self,
        prefix: &[usize],
        query_x: &str,
        group: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError>;

    fn full_context(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError>;

    /// Providers that cannot serve concurrent calls return true and the
    /// engine serializes access to them.
    fn serial(&self) -> bool {
        false
    }

    /// True when outputs are not a pure function of the inputs; disables
    /// request caching layers.
    fn stochastic(&self) -> bool {
        false
    }
}

/// Stable 64-bit digest of one call's inputs, used by synthetic providers to
/// key their per-call randomness so outputs are pure functions of the call.
pub(crate) fn call_fingerprint(
    provider_seed: u64,
    prefix: &[usize],
    query_x: &str,
    examples: &[ContextExample],
) -> u64 {
    let mut buf = Vec::with_capacity(64 + query_x.len());
    for &t in prefix {
        buf.extend_from_slice(&(t as u64).to_le_bytes());
        buf.push(0xfe);
    }
    buf.push(0xfd);
    buf.extend_from_slice(query_x.as_bytes());
    for ex in examples {
        buf.push(0xfc);
        buf.extend_from_slice(ex.payload.as_bytes());
        buf.push(0xfb);
        match ex.label {
            Some(l) => buf.extend_from_slice(&(l as u64).to_le_bytes()),
            None => buf.push(0xfa),
        }
    }
    derive_stream(&[provider_seed, hash_bytes(&buf)])
}
