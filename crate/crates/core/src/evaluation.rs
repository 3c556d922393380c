//! Evaluation utilities: distribution distances, summary statistics, ROC
//! analysis, a membership-inference harness, and the planted-model
//! convergence experiment.

use serde::Serialize;
use thiserror::Error;

use crate::engine::{
    classify, GenerateOptions, GenerationRecord, InferenceMode,
};
use crate::experts::planted::view_stream;
use crate::experts::{EvidenceProvider, PlantedModel, SyntheticTask};
use crate::rng::{derive_stream, RngStream};
use crate::types::{CoreError, ExpertSet, PrivacyBudget};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("score sets must be non-empty on both sides")]
    OneSidedScores,
    #[error("record carries no audit utilities; rerun with auditing enabled")]
    MissingAudit,
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

fn check_same_len(p: &[f64], q: &[f64]) -> Result<(), EvalError> {
    if p.is_empty() {
        return Err(EvalError::Empty);
    }
    if p.len() != q.len() {
        return Err(CoreError::WrongArity { expected: p.len(), got: q.len() }.into());
    }
    Ok(())
}

/// Mean absolute difference between two probability vectors.
pub fn l_mean(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    check_same_len(p, q)?;
    let sum: f64 = p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / p.len() as f64)
}

/// Total variation-style L1 distance: Σ|p− q|.
pub fn l1_dist(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    check_same_len(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum())
}

/// Worst-case coordinate gap max_y |p_y − q_y|.
pub fn d_inf(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    check_same_len(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Sample mean and standard error (sample standard deviation over √n).
pub fn mean_stderr(xs: &[f64]) -> Result<(f64, f64), EvalError> {
    if xs.len() < 2 {
        return Err(EvalError::TooFew { needed: 2, got: xs.len() });
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt() / n.sqrt()))
}

/// One attack score together with ground-truth membership.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiaScore {
    pub value: f64,
    pub is_member: bool,
}

/// ROC curve points plus the area under them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auroc: f64,
}

/// Sweeps thresholds over the pooled scores (descending, tied scores move
/// together) and integrates by trapezoid; equal member/non-member scores
/// therefore count half, matching the pairwise ties-at-½ definition.
pub fn roc_auc(scores: &[MiaScore]) -> Result<RocCurve, EvalError> {
    let pos = scores.iter().filter(|s| s.is_member).count();
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::OneSidedScores);
    }
    let mut sorted: Vec<&MiaScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.value.total_cmp(&a.value));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].value == sorted[i].value {
            if sorted[j].is_member {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j;
    }
    let auroc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auroc })
}

/// Membership-inference experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiaConfig {
    /// Independent contexts to attack.
    pub seeds: u64,
    /// Context size; the same number of fresh non-members is scored.
    pub examples_per_seed: usize,
    /// Private releases per target when scoring the protected pipeline.
    pub dp_repeats: usize,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for MiaConfig {
    fn default() -> Self {
        Self { seeds: 50, examples_per_seed: 20, dp_repeats: 2, epsilon: 1.0, gamma: 2.0 }
    }
}

/// AUROCs of the attack against the unprotected and protected pipelines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MiaOutcome {
    pub auroc_no_dp: f64,
    pub auroc_dp: f64,
    pub scores_no_dp: usize,
    pub scores_dp: usize,
}

/// A scored attack target: the example's stored label and whether it truly
/// sat in the context.
struct MiaTarget {
    payload: String,
    label: usize,
    is_member: bool,
}

/// Pulls a per-target attack score out of an audited classification record:
/// the aggregated utility that the mechanism assigned to the target's own
/// stored label. Members were part of the sum that produced it, so their
/// labels score systematically higher when nothing hides the utilities.
pub fn mia_scores(
    records: &[(GenerationRecord, usize, bool)],
) -> Result<Vec<MiaScore>, EvalError> {
    records
        .iter()
        .map(|(rec, label, is_member)| {
            let audit = rec.audit_utilities.as_ref().ok_or(EvalError::MissingAudit)?;
            let u = audit.first().ok_or(EvalError::MissingAudit)?;
            if *label >= u.values.len() {
                return Err(CoreError::TokenOutOfRange { id: *label, size: u.values.len() }
                    .into());
            }
            Ok(MiaScore { value: u.values[*label], is_member: *is_member })
        })
        .collect()
}

/// Runs the full membership-inference comparison on a synthetic task.
///
/// For each of `cfg.seeds` contexts: the attacker scores every member and an
/// equal number of held-out non-members. Against the unprotected pipeline
/// the score is the clipped product-of-experts utility of the target's label
/// (read from an audited noiseless run with the target as the query).
/// Against the private pipeline the attacker only sees released labels, so
/// the score is the frequency with which `dp_repeats` independent ε-budgeted
/// releases match the target's label. Scores pool across contexts into one
/// AUROC per pipeline.
pub fn run_membership_attack(
    task: &SyntheticTask,
    cfg: &MiaConfig,
    master_seed: u64,
) -> Result<MiaOutcome, EvalError> {
    let provider = EvidenceProvider::new(task.clone());
    let budget_soft = PrivacyBudget::nonprivate(cfg.gamma);
    let budget_dp = PrivacyBudget::new(
        cfg.epsilon,
        0.0,
        1,
        cfg.gamma,
        crate::accounting::CompositionMode::Naive,
    )?
    .calibrated()
    .map_err(crate::engine::EngineError::from)?;

    let mut no_dp = Vec::new();
    let mut dp = Vec::new();
    for s in 0..cfg.seeds {
        let mut ctx_rng = RngStream::new(master_seed, derive_stream(&[888, s]));
        let members = task.sample_context(cfg.examples_per_seed, &mut ctx_rng);
        let set = ExpertSet::new(members.clone(), 1)?;

        let mut targets: Vec<MiaTarget> = members
            .iter()
            .map(|ex| MiaTarget {
                payload: ex.payload.clone(),
                label: ex.label.expect("synthetic contexts are fully labeled"),
                is_member: true,
            })
            .collect();
        for _ in 0..cfg.examples_per_seed {
            let (ex, _) = task.sample_example(&mut ctx_rng);
            targets.push(MiaTarget {
                payload: ex.payload,
                label: ex.label.expect("synthetic contexts are fully labeled"),
                is_member: false,
            });
        }

        for (idx, target) in targets.iter().enumerate() {
            let mut rng =
                RngStream::new(master_seed, derive_stream(&[888, s, 1000 + idx as u64]));
            let rec = classify(
                &target.payload,
                &set,
                &provider,
                &budget_soft,
                InferenceMode::SoftCiNoiseless,
                &GenerateOptions { audit: true, ..Default::default() },
                &mut rng,
            )?;
            no_dp.push((rec, target.label, target.is_member));

            let mut matches = 0usize;
            for r in 0..cfg.dp_repeats {
                let mut rng = RngStream::new(
                    master_seed,
                    derive_stream(&[888, s, 2000 + idx as u64, r as u64]),
                );
                let rec = classify(
                    &target.payload,
                    &set,
                    &provider,
                    &budget_dp,
                    InferenceMode::PoeDp,
                    &GenerateOptions::default(),
                    &mut rng,
                )?;
                if rec.label() == target.label {
                    matches += 1;
                }
            }
            dp.push(MiaScore {
                value: matches as f64 / cfg.dp_repeats as f64,
                is_member: target.is_member,
            });
        }
    }

    let no_dp_scores = mia_scores(&no_dp)?;
    Ok(MiaOutcome {
        auroc_no_dp: roc_auc(&no_dp_scores)?.auroc,
        auroc_dp: roc_auc(&dp)?.auroc,
        scores_no_dp: no_dp_scores.len(),
        scores_dp: dp.len(),
    })
}

/// Convergence experiment output: median L1 gap to the infinite-ensemble
/// limit per ensemble size, plus the fitted log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of ln(median gap) against ln(J); `None` when a
    /// median hits zero or fewer than two sizes were measured.
    pub slope: Option<f64>,
}

/// Measures how fast the per-view aggregate closes in on the infinite-view
/// limit of a planted model. For each ensemble size J in `j_grid`, runs
/// `trials` independent draws of J views, computes the aggregate posterior,
/// and records the median L1 distance to the limit distribution (estimated
/// once with `n_mc` samples).
pub fn convergence_experiment(
    model: &PlantedModel,
    j_grid: &[usize],
    trials: usize,
    n_mc: usize,
    master_seed: u64,
) -> Result<ConvergenceReport, EvalError> {
    if j_grid.is_empty() || trials == 0 {
        return Err(EvalError::Empty);
    }
    let limit = model.limit_distribution(n_mc, &mut RngStream::new(master_seed, 0));
    let mut points = Vec::with_capacity(j_grid.len());
    for (gi, &j) in j_grid.iter().enumerate() {
        let mut gaps = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut rng = view_stream(master_seed, gi as u64, trial as u64);
            let views: Vec<Vec<f64>> =
                (0..j).map(|_| model.sample_view(&mut rng)).collect();
            let pj = model.pj_distribution(&views);
            gaps.push(l1_dist(&pj, &limit)?);
        }
        gaps.sort_by(f64::total_cmp);
        let median = if gaps.len() % 2 == 1 {
            gaps[gaps.len() / 2]
        } else {
            (gaps[gaps.len() / 2 - 1] + gaps[gaps.len() / 2]) / 2.0
        };
        points.push((j, median));
    }
    Ok(ConvergenceReport { slope: fit_loglog_slope(&points), points })
}

/// Least-squares slope of ln(y) on ln(x); `None` on degenerate input.
pub fn fit_loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 || points.iter().any(|&(_, y)| y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|&(x, _)| (x as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, y)| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
