//! Shared domain types: vocabularies, log-probability vectors, context
//! examples, expert sets, and the privacy budget that configures a run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{self, AccountingError, CompositionMode};

/// Positive values up to this tolerance are floored to zero by
/// [`validate_logprobs`]; anything larger is a protocol violation on the
/// provider side.
pub const LOGPROB_POSITIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("log-probability at index {0} is not finite")]
    NonFinite(usize),
    #[error("expected {expected} entries, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("vocabulary needs at least two candidates")]
    VocabularyTooSmall,
    #[error("duplicate candidate surface {0:?}")]
    DuplicateSurface(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    TokenOutOfRange { id: usize, size: usize },
    #[error("context example payload must be non-empty")]
    EmptyPayload,
    #[error("expert set needs at least one example")]
    EmptyExpertSet,
    #[error("group size must be at least 1")]
    ZeroGroupSize,
    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),
}

/// A single output symbol: an index into a [`Vocabulary`], with the surface
/// text it stands for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub surface: Option<String>,
}

/// The ordered candidate set all log-probability vectors align to. Index
/// order is canonical everywhere; classification runs use one candidate per
/// label. An optional end-of-sequence marker lets generation stop early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    candidates: Vec<String>,
    eos: Option<usize>,
}

impl Vocabulary {
    pub fn new(candidates: Vec<String>) -> Result<Self, CoreError> {
        if candidates.len() < 2 {
            return Err(CoreError::VocabularyTooSmall);
        }
        for (i, c) in candidates.iter().enumerate() {
            if candidates[..i].contains(c) {
                return Err(CoreError::DuplicateSurface(c.clone()));
            }
        }
        Ok(Self { candidates, eos: None })
    }

    pub fn with_eos(candidates: Vec<String>, eos: usize) -> Result<Self, CoreError> {
        let mut v = Self::new(candidates)?;
        if eos >= v.size() {
            return Err(CoreError::TokenOutOfRange { id: eos, size: v.size() });
        }
        v.eos = Some(eos);
        Ok(v)
    }

    /// Convenience constructor for classification over `k` indexed labels.
    pub fn labels(k: usize) -> Result<Self, CoreError> {
        Self::new((0..k).map(|i| format!("label_{i}")).collect())
    }

    pub fn size(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn surface(&self, id: usize) -> Result<&str, CoreError> {
        self.candidates
            .get(id)
            .map(String::as_str)
            .ok_or(CoreError::TokenOutOfRange { id, size: self.size() })
    }

    pub fn eos(&self) -> Option<usize> {
        self.eos
    }

    pub fn token(&self, id: usize) -> Result<Token, CoreError> {
        Ok(Token { id, surface: Some(self.surface(id)?.to_string()) })
    }
}

/// Per-candidate natural-log probabilities from one expert call. Values are
/// guaranteed finite and ≤ 0 after [`validate_logprobs`]; `exceeded` records
/// whether any raw entry was further above zero than the tolerance allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbVector {
    values: Vec<f64>,
    exceeded: bool,
}

impl LogProbVector {
    /// Validates `values` against their own length; see [`validate_logprobs`]
    /// when the expected arity comes from a vocabulary.
    pub fn new(values: Vec<f64>) -> Result<Self, CoreError> {
        let k = values.len();
        validate_logprobs(&values, k)
    }

    pub(crate) fn from_clipped(values: Vec<f64>) -> Self {
        Self { values, exceeded: false }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when some raw entry exceeded the +1e-9 tolerance before flooring.
    pub fn exceeded_tolerance(&self) -> bool {
        self.exceeded
    }

    /// Index of the largest value; ties break toward the lowest index.
    pub fn argmax(&self) -> usize {
        argmax_ties_low(&self.values)
    }
}

/// One private in-context example: an opaque payload and an optional label
/// (vocabulary index) for classification tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextExample {
    pub payload: String,
    pub label: Option<usize>,
}

impl ContextExample {
    pub fn new(payload: impl Into<String>, label: Option<usize>) -> Result<Self, CoreError> {
        let payload = payload.into();
        if payload.is_empty() {
            return Err(CoreError::EmptyPayload);
        }
        Ok(Self { payload, label })
    }
}

/// The ordered private context C_1..C_J together with the group size used to
/// partition it. Groups are contiguous; the last may be smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSet {
    examples: Vec<ContextExample>,
    group_size: usize,
}

impl ExpertSet {
    pub fn new(examples: Vec<ContextExample>, group_size: usize) -> Result<Self, CoreError> {
        if examples.is_empty() {
            return Err(CoreError::EmptyExpertSet);
        }
        if group_size == 0 {
            return Err(CoreError::ZeroGroupSize);
        }
        Ok(Self { examples, group_size })
    }

    pub fn examples(&self) -> &[ContextExample] {
        &self.examples
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one example
    }

    /// Number of groups the partition produces: ⌈J/g⌉.
    pub fn num_groups(&self) -> usize {
        self.examples.len().div_ceil(self.group_size)
    }
}

/// Full privacy configuration of a run: target (ε, δ), the token horizon the
/// noise is calibrated for, the clipping bound γ, the derived per-token noise
/// parameter σ, and which composition rule ties them together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub max_tokens: usize,
    pub gamma: f64,
    /// Per-token exponential-mechanism parameter; `None` until calibrated.
    pub sigma: Option<f64>,
    pub composition: CompositionMode,
}

impl PrivacyBudget {
    pub fn new(
        epsilon: f64,
        delta: f64,
        max_tokens: usize,
        gamma: f64,
        composition: CompositionMode,
    ) -> Result<Self, CoreError> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(CoreError::InvalidBudget(format!("epsilon must be positive, got {epsilon}")));
        }
        if !delta.is_finite() || !(0.0..1.0).contains(&delta) {
            return Err(CoreError::InvalidBudget(format!("delta must lie in [0,1), got {delta}")));
        }
        if composition == CompositionMode::Advanced && delta <= 0.0 {
            return Err(CoreError::InvalidBudget(
                "advanced composition requires delta > 0".into(),
            ));
        }
        if max_tokens == 0 {
            return Err(CoreError::InvalidBudget("max_tokens must be at least 1".into()));
        }
        if !gamma.is_finite() || gamma <= 0.0 {
            return Err(CoreError::InvalidBudget(format!("gamma must be positive, got {gamma}")));
        }
        Ok(Self { epsilon, delta, max_tokens, gamma, sigma: None, composition })
    }

    /// Budget for noiseless / non-private modes, which only consume the
    /// clipping bound. The nominal ε is never spent.
    pub fn nonprivate(gamma: f64) -> Self {
        Self {
            epsilon: f64::MAX,
            delta: 0.0,
            max_tokens: usize::MAX,
            gamma,
            sigma: None,
            composition: CompositionMode::Naive,
        }
    }

    /// Runs noise calibration for (ε, δ, T) under the configured composition
    /// rule and stores the resulting σ.
    pub fn calibrated(mut self) -> Result<Self, AccountingError> {
        let result =
            accounting::calibrate_sigma(self.epsilon, self.delta, self.max_tokens, self.composition)?;
        self.sigma = Some(result.sigma);
        Ok(self)
    }
}

/// Checks arity and finiteness, floors values ≤ 0, and records whether any
/// raw entry exceeded the +1e-9 tolerance before flooring.
pub fn validate_logprobs(raw: &[f64], k: usize) -> Result<LogProbVector, CoreError> {
    if raw.len() != k {
        return Err(CoreError::WrongArity { expected: k, got: raw.len() });
    }
    let mut exceeded = false;
    let mut values = Vec::with_capacity(k);
    for (i, &v) in raw.iter().enumerate() {
        if !v.is_finite() {
            return Err(CoreError::NonFinite(i));
        }
        if v > LOGPROB_POSITIVE_TOLERANCE {
            exceeded = true;
        }
        values.push(v.min(0.0));
    }
    Ok(LogProbVector { values, exceeded })
}

/// Softmax of `v` via max-subtraction: numerically stable normalization of
/// log-weights into a probability vector.
pub fn log_normalize(v: &LogProbVector) -> Vec<f64> {
    softmax(v.values())
}

/// Max-subtracted exponential normalization; valid for any finite logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax with max-subtraction; preserves argmax exactly.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&x| x - max - log_sum).collect()
}

/// Index of the maximum value; ties break toward the lowest index.
pub fn argmax_ties_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn validate_passes_through_valid_vectors() {
        let v = validate_logprobs(&[-0.5, -1.2], 2).unwrap();
        assert_eq!(v.values(), &[-0.5, -1.2]);
        assert!(!v.exceeded_tolerance());
    }

    #[test]
    fn validate_allows_exact_zero() {
        let v = validate_logprobs(&[0.0, -3.0], 2).unwrap();
        assert_eq!(v.values(), &[0.0, -3.0]);
        assert!(!v.exceeded_tolerance());
    }

    #[test]
    fn validate_floors_tiny_positive_within_tolerance() {
        let v = validate_logprobs(&[1e-12, -1.0], 2).unwrap();
        assert_eq!(v.values(), &[0.0, -1.0]);
        assert!(!v.exceeded_tolerance());
    }

    #[test]
    fn validate_flags_positive_beyond_tolerance() {
        let v = validate_logprobs(&[1e-3, -1.0], 2).unwrap();
        assert_eq!(v.values(), &[0.0, -1.0]);
        assert!(v.exceeded_tolerance());
    }

    #[test]
    fn validate_rejects_non_finite_and_wrong_arity() {
        assert_eq!(validate_logprobs(&[f64::NAN, -1.0], 2), Err(CoreError::NonFinite(0)));
        assert_eq!(
            validate_logprobs(&[-1.0, f64::NEG_INFINITY], 2),
            Err(CoreError::NonFinite(1))
        );
        assert_eq!(
            validate_logprobs(&[-1.0], 2),
            Err(CoreError::WrongArity { expected: 2, got: 1 })
        );
    }

    #[test]
    fn log_normalize_matches_closed_forms() {
        let v = LogProbVector::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(log_normalize(&v), vec![0.5, 0.5]);

        let v = LogProbVector::new(vec![0.42f64.ln(), 0.12f64.ln()]).unwrap();
        let p = log_normalize(&v);
        assert_abs_diff_eq!(p[0], 0.42 / 0.54, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.12 / 0.54, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7778, epsilon = 5e-5);
        assert_abs_diff_eq!(p[1], 0.2222, epsilon = 5e-5);
    }

    #[test]
    fn log_normalize_is_stable_at_extreme_magnitudes() {
        let v = LogProbVector::new(vec![-1000.0, 0.0]).unwrap();
        let p = log_normalize(&v);
        assert!(p[0] < 1e-300);
        assert_abs_diff_eq!(p[1], 1.0, epsilon = 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn log_softmax_preserves_argmax_and_normalizes() {
        let logits = [1.5, -0.2, 3.7, 3.7];
        let lp = log_softmax(&logits);
        assert_eq!(argmax_ties_low(&lp), argmax_ties_low(&logits));
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_small_sets() {
        assert_eq!(Vocabulary::new(vec!["a".into()]), Err(CoreError::VocabularyTooSmall));
        assert_eq!(
            Vocabulary::new(vec!["a".into(), "a".into()]),
            Err(CoreError::DuplicateSurface("a".into()))
        );
        let v = Vocabulary::with_eos(vec!["a".into(), "<eos>".into()], 1).unwrap();
        assert_eq!(v.eos(), Some(1));
        assert_eq!(v.token(0).unwrap().surface.as_deref(), Some("a"));
    }

    #[test]
    fn expert_set_grouping_counts() {
        let ex = |p: &str| ContextExample::new(p, None).unwrap();
        let set = ExpertSet::new(vec![ex("a"), ex("b"), ex("c"), ex("d"), ex("e")], 2).unwrap();
        assert_eq!(set.num_groups(), 3);
        let set = ExpertSet::new(vec![ex("a")], 1).unwrap();
        assert_eq!(set.num_groups(), 1);
    }

    #[test]
    fn budget_validation() {
        assert!(PrivacyBudget::new(1.0, 1e-5, 1, 2.0, CompositionMode::Advanced).is_ok());
        assert!(PrivacyBudget::new(0.0, 1e-5, 1, 2.0, CompositionMode::Advanced).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0, 1, 2.0, CompositionMode::Advanced).is_err());
        assert!(PrivacyBudget::new(1.0, 0.0, 1, 2.0, CompositionMode::Naive).is_ok());
        assert!(PrivacyBudget::new(1.0, 1e-5, 0, 2.0, CompositionMode::Advanced).is_err());
        assert!(PrivacyBudget::new(1.0, 1e-5, 1, 0.0, CompositionMode::Advanced).is_err());
    }

    #[test]
    fn budget_calibration_naive_is_epsilon_over_t() {
        let b = PrivacyBudget::new(4.0, 0.0, 1, 2.0, CompositionMode::Naive)
            .unwrap()
            .calibrated()
            .unwrap();
        assert_eq!(b.sigma, Some(4.0));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_ties_low(&[0.5, 0.5]), 0);
        assert_eq!(argmax_ties_low(&[0.1, 0.7, 0.7]), 1);
        assert_eq!(argmax_ties_low(&[-1.0, -0.5, -2.0]), 1);
    }
}
