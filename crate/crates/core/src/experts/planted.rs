//! Planted-view simulator for the bounded-interaction convergence analysis.
//!
//! A hidden state S generates i.i.d. views; each view contributes a bounded
//! per-view score ψ(y, C) (|ψ| ≤ M), and the whole collection contributes a
//! bounded cross-view residual R_J (|R_J| ≤ B). The J-view distribution
//!
//!   p_J(y) ∝ prior(y) · exp( (Σ_j ψ(y, C_j) + R_J(y)) / J )
//!
//! converges to the limit p★(y) ∝ prior(y)·exp(ψ̄(y)) as J grows, at rate
//! O(1/√J); the convergence experiment in `evaluation` measures exactly this.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{derive_stream, RngStream};
use crate::types::{
    log_softmax, softmax, validate_logprobs, ContextExample, CoreError, LogProbVector, Vocabulary,
};

use super::{ExpertProvider, ProviderError};

/// Default Monte-Carlo budget for estimating ψ̄ in [`PlantedModel::limit_distribution`].
pub const DEFAULT_LIMIT_MC: usize = 400_000;

/// How views are drawn given the hidden state.
#[derive(Debug, Clone)]
pub enum ViewSampler {
    /// C = P·(S + noise_scale·g) with g standard normal: independent noisy
    /// projections of the state through a fixed linear map.
    GaussianProjection { projection: Vec<Vec<f64>>, noise_scale: f64 },
    /// Finite enumerable view space with explicit probabilities; lets tests
    /// compute ψ̄ exactly.
    Finite { views: Vec<Vec<f64>>, probs: Vec<f64> },
}

/// The simulator: hidden state, view sampler, bounded per-view scores,
/// bounded residual, and the prior the scores perturb.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub state: Vec<f64>,
    pub sampler: ViewSampler,
    /// Per-class weight vectors; ψ(y, C) = M·tanh(C · weights[y]).
    pub weights: Vec<Vec<f64>>,
    /// Per-class residual couplings κ; see [`PlantedModel::residual`].
    pub couplings: Vec<f64>,
    /// Base distribution over the K classes.
    pub prior: Vec<f64>,
    /// Per-view score bound M.
    pub psi_bound: f64,
    /// Residual bound B.
    pub residual_bound: f64,
}

impl PlantedModel {
    /// The reference configuration: K = 4 classes, state dimension 8, view
    /// dimension 6, M = B = 1, all parameters drawn once from `seed`.
    pub fn default_model(seed: u64) -> Self {
        let (d, dv, k) = (8, 6, 4);
        let mut rng = RngStream::new(seed, 0);
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = rng.sample(StandardNormal);
            scale * z
        };
        let state: Vec<f64> = (0..d).map(|_| normal(1.0)).collect();
        let projection: Vec<Vec<f64>> = (0..dv)
            .map(|_| (0..d).map(|_| normal(1.0 / (d as f64).sqrt())).collect())
            .collect();
        let weights: Vec<Vec<f64>> =
            (0..k).map(|_| (0..dv).map(|_| normal(0.9)).collect()).collect();
        let couplings: Vec<f64> = (0..k).map(|_| normal(0.5)).collect();
        let prior_logits: Vec<f64> = (0..k).map(|_| normal(0.5)).collect();
        PlantedModel {
            state,
            sampler: ViewSampler::GaussianProjection { projection, noise_scale: 0.75 },
            weights,
            couplings,
            prior: softmax(&prior_logits),
            psi_bound: 1.0,
            residual_bound: 1.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    /// Draws one view from the sampler.
    pub fn sample_view(&self, rng: &mut RngStream) -> Vec<f64> {
        match &self.sampler {
            ViewSampler::GaussianProjection { projection, noise_scale } => {
                let noisy: Vec<f64> = self
                    .state
                    .iter()
                    .map(|&s| {
                        let g: f64 = rng.sample(StandardNormal);
                        s + noise_scale * g
                    })
                    .collect();
                projection.iter().map(|row| dot(row, &noisy)).collect()
            }
            ViewSampler::Finite { views, probs } => views[rng.categorical(probs)].clone(),
        }
    }

    /// Bounded per-view score ψ(y, C) = M·tanh(C·w_y).
    pub fn psi(&self, y: usize, view: &[f64]) -> f64 {
        let v = self.psi_bound * dot(view, &self.weights[y]).tanh();
        assert!(v.abs() <= self.psi_bound, "per-view score escaped its bound");
        v
    }

    /// Bounded cross-view residual: B·tanh(κ_y · mean of circular-pair dot
    /// products C_j·C_{(j+1) mod J}). Genuinely couples the views so the
    /// convergence experiment is not vacuous.
    pub fn residual(&self, y: usize, views: &[Vec<f64>]) -> f64 {
        let j = views.len();
        if j == 0 {
            return 0.0;
        }
        let mean_pair = (0..j).map(|i| dot(&views[i], &views[(i + 1) % j])).sum::<f64>() / j as f64;
        let v = self.residual_bound * (self.couplings[y] * mean_pair).tanh();
        assert!(v.abs() <= self.residual_bound, "residual escaped its bound");
        v
    }

    /// The J-view distribution p_J: prior perturbed by the per-view average
    /// of the full-context logits.
    pub fn pj_distribution(&self, views: &[Vec<f64>]) -> Vec<f64> {
        let j = views.len().max(1) as f64;
        let logits: Vec<f64> = (0..self.num_classes())
            .map(|y| self.prior[y].ln() + planted_fullcontext_logits(self, views, y) / j)
            .collect();
        softmax(&logits)
    }

    /// The limit p★ ∝ prior·exp(ψ̄): ψ̄ by exact enumeration when the view
    /// space is finite, otherwise by Monte-Carlo over `n_mc` fresh views.
    pub fn limit_distribution(&self, n_mc: usize, rng: &mut RngStream) -> Vec<f64> {
        let k = self.num_classes();
        let psi_bar: Vec<f64> = match &self.sampler {
            ViewSampler::Finite { views, probs } => (0..k)
                .map(|y| views.iter().zip(probs).map(|(v, p)| p * self.psi(y, v)).sum())
                .collect(),
            ViewSampler::GaussianProjection { .. } => {
                let mut acc = vec![0.0; k];
                for _ in 0..n_mc.max(1) {
                    let view = self.sample_view(rng);
                    for (a, y) in acc.iter_mut().zip(0..k) {
                        *a += self.psi(y, &view);
                    }
                }
                acc.into_iter().map(|a| a / n_mc.max(1) as f64).collect()
            }
        };
        let logits: Vec<f64> =
            (0..k).map(|y| self.prior[y].ln() + psi_bar[y]).collect();
        softmax(&logits)
    }
}

/// The bounded-interaction decomposition of the full-context log-likelihood:
/// Σ_j ψ(y, C_j) + R_J(y, C_{1:J}). Normalizing prior·exp(·/J) over y gives
/// p_J (see [`PlantedModel::pj_distribution`]).
pub fn planted_fullcontext_logits(model: &PlantedModel, views: &[Vec<f64>], y: usize) -> f64 {
    let sum_psi: f64 = views.iter().map(|c| model.psi(y, c)).sum();
    sum_psi + model.residual(y, views)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Serializes a view as a payload string that round-trips exactly.
pub fn view_to_example(view: &[f64]) -> ContextExample {
    let payload =
        view.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ");
    ContextExample { payload, label: None }
}

fn parse_view(payload: &str) -> Result<Vec<f64>, ProviderError> {
    payload
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| ProviderError::Protocol(format!("unparseable view component {tok:?}")))
        })
        .collect()
}

/// Expert-provider view of the simulator: per-group calls expose only the
/// per-view scores (prior + Σψ over the group), while the full-context call
/// exposes the complete decomposition including the residual.
pub struct PlantedProvider {
    model: PlantedModel,
    vocab: Vocabulary,
}

impl PlantedProvider {
    pub fn new(model: PlantedModel) -> Result<Self, CoreError> {
        let vocab = Vocabulary::labels(model.num_classes())?;
        Ok(Self { model, vocab })
    }

    pub fn model(&self) -> &PlantedModel {
        &self.model
    }
}

impl ExpertProvider for PlantedProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn query(
        &self,
        _prefix: &[usize],
        _query_x: &str,
        group: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        let views: Vec<Vec<f64>> =
            group.iter().map(|ex| parse_view(&ex.payload)).collect::<Result<_, _>>()?;
        let k = self.model.num_classes();
        let logits: Vec<f64> = (0..k)
            .map(|y| {
                self.model.prior[y].ln()
                    + views.iter().map(|c| self.model.psi(y, c)).sum::<f64>()
            })
            .collect();
        Ok(validate_logprobs(&log_softmax(&logits), k)?)
    }

    fn full_context(
        &self,
        _prefix: &[usize],
        _query_x: &str,
        examples: &[ContextExample],
    ) -> Result<LogProbVector, ProviderError> {
        let views: Vec<Vec<f64>> =
            examples.iter().map(|ex| parse_view(&ex.payload)).collect::<Result<_, _>>()?;
        let k = self.model.num_classes();
        let probs = self.model.pj_distribution(&views);
        let logs: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
        Ok(validate_logprobs(&logs, k)?)
    }
}

/// Stream tag for view draws inside experiments; exposed so experiment
/// drivers and tests derive identical views.
pub fn view_stream(master: u64, grid_index: u64, trial: u64) -> RngStream {
    RngStream::new(master, derive_stream(&[0x76696577, grid_index, trial]))
}
