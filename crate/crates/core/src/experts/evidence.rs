//! Generated classification tasks and the naive-Bayes evidence expert.
//!
//! A task plants one token-frequency profile per class; documents are bags
//! of words drawn from their class profile. Each in-context example acts as
//! soft evidence for its own (possibly noisy) label:
//!
//!   p(y | x, C_j) ∝ prior(y) · exp(β · sim(x, C_j.payload) · 1[y = C_j.label])
//!
//! with cosine similarity between token-frequency vectors. The zero-shot
//! prior is itself query-dependent: softmax of α times the cosine between the
//! query and per-class reference profiles that are deliberately blurred, so
//! the prior is informative but imperfect. The full-context reference applies
//! the prior once and multiplies in every example's evidence unclipped.

use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::types::{
    log_softmax, validate_logprobs, ContextExample, CoreError, LogProbVector, Vocabulary,
};

use super::{ExpertProvider, ProviderError};

/// Generation parameters for a synthetic classification task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskParams {
    /// Number of classes K (labels and profiles).
    pub num_classes: usize,
    /// Word-vocabulary block size per class; total words = K · per class.
    pub words_per_class: usize,
    /// Probability mass a class profile concentrates on its own word block.
    pub concentration: f64,
    /// Mixing weight of Dirichlet noise into the prior reference profiles.
    pub blur: f64,
    /// Seed for the blur draw (fixed per task, not per run).
    pub blur_seed: u64,
    /// Words per document.
    pub doc_len: usize,
    /// Zero-shot prior sharpness α (0 = uniform prior).
    pub prior_sharpness: f64,
    /// Evidence sharpness β.
    pub evidence_sharpness: f64,
    /// Probability an example's label is resampled uniformly at random.
    pub label_noise: f64,
}

impl Default for SyntheticTaskParams {
    /// The reference classification task used by the accuracy experiments.
    fn default() -> Self {
        Self {
            num_classes: 4,
            words_per_class: 16,
            concentration: 0.55,
            blur: 0.25,
            blur_seed: 777,
            doc_len: 120,
            prior_sharpness: 5.0,
            evidence_sharpness: 4.0,
            label_noise: 0.05,
        }
    }
}

impl SyntheticTaskParams {
    /// The reference membership-inference task: uniform prior, sharper
    /// evidence, no label noise, same document model.
    pub fn membership() -> Self {
        Self {
            prior_sharpness: 0.0,
            evidence_sharpness: 5.0,
            label_noise: 0.0,
            ..Self::default()
        }
    }
}

/// A concrete task: sampling profiles for documents plus blurred reference
/// profiles anchoring the zero-shot prior.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    params: SyntheticTaskParams,
    /// P: per-class word distributions documents are sampled from (rows sum 1).
    doc_profiles: Vec<Vec<f64>>,
    /// Per-class cumulative sums of `doc_profiles` for fast word draws.
    doc_cdf: Vec<Vec<f64>>,
    /// Blurred, ℓ₂-normalized reference profiles the prior cosines against.
    prior_anchors: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(params: SyntheticTaskParams) -> Result<Self, CoreError> {
        let k = params.num_classes;
        let per = params.words_per_class;
        let v = k * per;
        if k < 2 {
            return Err(CoreError::VocabularyTooSmall);
        }
        if per == 0 || params.doc_len == 0 {
            return Err(CoreError::InvalidBudget(
                "words_per_class and doc_len must be positive".into(),
            ));
        }
        if !(params.concentration > 0.0 && params.concentration < 1.0) {
            return Err(CoreError::InvalidBudget(format!(
                "concentration must lie in (0,1), got {}",
                params.concentration
            )));
        }
        if !(0.0..1.0).contains(&params.blur) {
            return Err(CoreError::InvalidBudget(format!(
                "blur must lie in [0,1), got {}",
                params.blur
            )));
        }
        if params.evidence_sharpness < 0.0 || params.prior_sharpness < 0.0 {
            return Err(CoreError::InvalidBudget("sharpness parameters must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&params.label_noise) {
            return Err(CoreError::InvalidBudget(format!(
                "label_noise must lie in [0,1], got {}",
                params.label_noise
            )));
        }

        // Class k concentrates `concentration` on its own block of words and
        // spreads the rest evenly over everyone else's.
        let off = (1.0 - params.concentration) / (v - per) as f64;
        let on = params.concentration / per as f64;
        let mut doc_profiles = vec![vec![off; v]; k];
        for (c, row) in doc_profiles.iter_mut().enumerate() {
            for w in row.iter_mut().skip(c * per).take(per) {
                *w = on;
            }
        }

        // Prior anchors: profiles mixed with task-fixed Dirichlet noise, row
        // re-normalized, then ℓ₂-normalized for cosine similarity.
        let mut prior_anchors = Vec::with_capacity(k);
        for (c, row) in doc_profiles.iter().enumerate() {
            let noise: Vec<f64> = if params.blur > 0.0 {
                let mut rng = RngStream::new(params.blur_seed, c as u64);
                Dirichlet::new(&vec![1.0; v])
                    .expect("valid Dirichlet parameters")
                    .sample(&mut rng)
            } else {
                vec![0.0; v]
            };
            let mut q: Vec<f64> = row
                .iter()
                .zip(&noise)
                .map(|(p, d)| (1.0 - params.blur) * p + params.blur * d)
                .collect();
            let sum: f64 = q.iter().sum();
            for x in &mut q {
                *x /= sum;
            }
            let norm = l2_norm(&q);
            for x in &mut q {
                *x /= norm;
            }
            prior_anchors.push(q);
        }

        let doc_cdf = doc_profiles
            .iter()
            .map(|row| {
                let mut acc = 0.0;
                row.iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            })
            .collect();

        Ok(Self { params, doc_profiles, doc_cdf, prior_anchors })
    }

    pub fn params(&self) -> &SyntheticTaskParams {
        &self.params
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes
    }

    pub fn word_vocab_size(&self) -> usize {
        self.params.num_classes * self.params.words_per_class
    }

    pub fn doc_profiles(&self) -> &[Vec<f64>] {
        &self.doc_profiles
    }

    /// The label vocabulary classification runs over.
    pub fn label_vocabulary(&self) -> Vocabulary {
        Vocabulary::labels(self.num_classes()).expect("K ≥ 2 checked at construction")
    }

    /// Samples one document for `class`: `doc_len` words joined by spaces.
    pub fn sample_document(&self, class: usize, rng: &mut RngStream) -> String {
        let cdf = &self.doc_cdf[class];
        let mut words = Vec::with_capacity(self.params.doc_len);
        for _ in 0..self.params.doc_len {
            let u = rng.uniform_open01();
            let idx = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
            words.push(format!("w{idx}"));
        }
        words.join(" ")
    }

    /// Samples an example: uniform class, one document, and a label that is
    /// resampled uniformly over all classes with probability `label_noise`.
    /// Returns the example together with its true class.
    pub fn sample_example(&self, rng: &mut RngStream) -> (ContextExample, usize) {
        let class = rng.below(self.num_classes());
        let payload = self.sample_document(class, rng);
        let label = if self.params.label_noise > 0.0
            && rng.uniform_open01() < self.params.label_noise
        {
            rng.below(self.num_classes())
        } else {
            class
        };
        (ContextExample { payload, label: Some(label) }, class)
    }

    /// Samples a J-example private context.
    pub fn sample_context(&self, j: usize, rng: &mut RngStream) -> Vec<ContextExample> {
        (0..j).map(|_| self.sample_example(rng).0).collect()
    }

    /// Samples a test query: a document plus its true class.
    pub fn sample_query(&self, rng: &mut RngStream) -> (String, usize) {
        let class = rng.below(self.num_classes());
        (self.sample_document(class, rng), class)
    }

    /// Word-count vector of a payload; words outside the task vocabulary
    /// count nothing, so similarity against foreign text degrades to zero.
    pub fn frequencies(&self, payload: &str) -> Vec<f64> {
        let v = self.word_vocab_size();
        let mut counts = vec![0.0; v];
        for word in payload.split_whitespace() {
            if let Some(idx) = word
                .strip_prefix('w')
                .and_then(|rest| rest.parse::<usize>().ok())
            {
                if idx < v {
                    counts[idx] += 1.0;
                }
            }
        }
        counts
    }

    /// Zero-shot prior logits for a query: α · cos(anchor_y, query).
    pub fn prior_logits(&self, query_counts: &[f64]) -> Vec<f64> {
        let alpha = self.params.prior_sharpness;
        if alpha == 0.0 {
            return vec![0.0; self.num_classes()];
        }
        let qn = unit(query_counts);
        self.prior_anchors.iter().map(|anchor| alpha * dot(anchor, &qn)).collect()
    }
}

fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = l2_norm(x);
    if n == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| v / n).collect()
}

/// Cosine similarity of two count vectors; zero when either is empty.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// The evidence expert over a [`SyntheticTask`].
pub struct EvidenceProvider {
    task: SyntheticTask,
    vocab: Vocabulary,
}

impl EvidenceProvider {
    pub fn new(task: SyntheticTask) -> Self {
        let vocab = task.label_vocabulary();
        Self { task, vocab }
    }

    pub fn task(&self) -> &SyntheticTask {
        &self.task
    }

    /// Shared evidence rule: prior applied once, plus β·sim bumped onto each
    /// example's label; log-normalized. Unlabeled examples contribute nothing.
    fn evidence_logprobs(
        &self,
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        let query_counts = self.task.frequencies(query_x);
        let qn = unit(&query_counts);
        let mut logits = self.task.prior_logits(&query_counts);
        let beta = self.task.params().evidence_sharpness;
        for ex in examples {
            if let Some(label) = ex.label {
                if label >= logits.len() {
                    return Err(ProviderError::Protocol(format!(
                        "example label {label} out of range for {} classes",
                        logits.len()
                    )));
                }
                let sim = dot(&unit(&self.task.frequencies(&ex.payload)), &qn);
                logits[label] += beta * sim;
            }
        }
        Ok(validate_logprobs(&log_softmax(&logits), logits.len())?)
    }
}

impl ExpertProvider for EvidenceProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn query(
        &self,
        _prefix: &[usize],
        query_x: &str,
        group: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        self.evidence_logprobs(query_x, group)
    }

    fn full_context(
        &self,
        _prefix: &[usize],
        query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        self.evidence_logprobs(query_x, examples)
    }
}
