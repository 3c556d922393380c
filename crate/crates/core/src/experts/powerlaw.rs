//! Synthetic experts whose predictions follow a power-law (Zipf-like)
//! profile: sorted probabilities p_(r) ∝ r^{−exponent}, with the assignment
//! of ranks to candidate indices drawn as a fresh permutation per call.

use crate::rng::RngStream;
use crate::types::{validate_logprobs, ContextExample, CoreError, LogProbVector, Vocabulary};

use super::{call_fingerprint, ExpertProvider, ProviderError};

#[derive(Debug, Clone)]
pub struct PowerlawProvider {
    vocab: Vocabulary,
    exponent: f64,
    seed: u64,
    /// Rank profile r^{−exponent}, normalized once at construction.
    profile: Vec<f64>,
}

impl PowerlawProvider {
    pub fn new(k: usize, exponent: f64, seed: u64) -> Result<Self, CoreError> {
        let vocab = Vocabulary::new((0..k).map(|i| format!("t{i}")).collect())?;
        if !(exponent >= 0.0) || !exponent.is_finite() {
            return Err(CoreError::InvalidBudget(format!(
                "power-law exponent must be finite and non-negative, got {exponent}"
            )));
        }
        let mut profile: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-exponent)).collect();
        let z: f64 = profile.iter().sum();
        for p in &mut profile {
            *p /= z;
        }
        Ok(Self { vocab, exponent, seed, profile })
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Sorted (descending) probability profile shared by every call.
    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    /// The distribution a given call returns: the rank profile scattered
    /// through a call-keyed random permutation.
    pub fn call_distribution(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Vec<f64> {
        let k = self.vocab.size();
        let mut rng = RngStream::new(self.seed, call_fingerprint(0, prefix, query_x, examples));
        let mut perm: Vec<usize> = (0..k).collect();
        // Fisher-Yates keyed entirely by the call fingerprint.
        for i in (1..k).rev() {
            let j = rng.below(i + 1);
            perm.swap(i, j);
        }
        let mut probs = vec![0.0; k];
        for (rank, &idx) in perm.iter().enumerate() {
            probs[idx] = self.profile[rank];
        }
        probs
    }

    fn answer(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        let probs = self.call_distribution(prefix, query_x, examples);
        let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Ok(validate_logprobs(&logs, self.vocab.size())?)
    }
}

impl ExpertProvider for PowerlawProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn query(
        &self,
        prefix: &[usize],
        query_x: &str,
        group: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        self.answer(prefix, query_x, group)
    }

    fn full_context(
        &self,
        prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        self.answer(prefix, query_x, examples)
    }
}
