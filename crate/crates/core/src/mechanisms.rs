//! Pure differential-privacy primitives: scalar-range and vector-norm
//! clipping, product-of-experts and vote aggregation, contiguous grouping,
//! and the exponential-mechanism sampler shared by every release path.

use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::types::{argmax_ties_low, softmax, ContextExample, CoreError, ExpertSet, LogProbVector};

/// How out-of-range log-probabilities are mapped into [−γ, 0].
///
/// `Clamp` (the default) is the saturating map min(0, max(−γ, l)). `ZeroOut`
/// instead sends any value outside [−γ, 0] to 0 — the maximum utility — and
/// is kept only as a compatibility switch; both modes preserve the [−γ, 0]
/// range the privacy analysis needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    #[default]
    Clamp,
    ZeroOut,
}

/// Whether a utility vector carries summed clipped log-probs (sensitivity γ)
/// or integer vote counts (sensitivity 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    PoeSum,
    VoteCounts,
}

/// Scores the exponential mechanism selects over: one value per candidate
/// plus the sensitivity Δ that one example change can move any value by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityVector {
    pub values: Vec<f64>,
    pub sensitivity: f64,
    pub kind: UtilityKind,
}

/// Maps each coordinate into [−γ, 0] under the chosen mode.
pub fn clip_logprobs(l: &LogProbVector, gamma: f64, mode: ClipMode) -> LogProbVector {
    let clipped = l
        .values()
        .iter()
        .map(|&v| match mode {
            ClipMode::Clamp => v.max(-gamma).min(0.0),
            ClipMode::ZeroOut => {
                if v < -gamma {
                    0.0
                } else {
                    v.min(0.0)
                }
            }
        })
        .collect();
    LogProbVector::from_clipped(clipped)
}

/// Vector-norm clipping: x · min(1, γ/‖x‖₂), so the output ℓ₂ norm never
/// exceeds γ and the sum over a set changes by at most 2γ when one element
/// changes.
pub fn vclip(x: &[f64], gamma: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if norm > gamma { gamma / norm } else { 1.0 };
    x.iter().map(|v| v * scale).collect()
}

/// Coordinate-wise sum of clipped per-expert vectors; sensitivity γ because
/// each expert contributes within a γ-wide range per coordinate.
pub fn aggregate_poe(clipped: &[LogProbVector], gamma: f64) -> Result<UtilityVector, CoreError> {
    let k = expect_uniform_arity(clipped)?;
    let mut values = vec![0.0; k];
    for vector in clipped {
        for (acc, v) in values.iter_mut().zip(vector.values()) {
            *acc += v;
        }
    }
    Ok(UtilityVector { values, sensitivity: gamma, kind: UtilityKind::PoeSum })
}

/// Sum of one-hot argmax votes (ties toward the lowest index); sensitivity 1
/// because one example moves at most one vote.
pub fn aggregate_votes(raw: &[LogProbVector]) -> Result<UtilityVector, CoreError> {
    let k = expect_uniform_arity(raw)?;
    let mut values = vec![0.0; k];
    for vector in raw {
        values[vector.argmax()] += 1.0;
    }
    Ok(UtilityVector { values, sensitivity: 1.0, kind: UtilityKind::VoteCounts })
}

fn expect_uniform_arity(vectors: &[LogProbVector]) -> Result<usize, CoreError> {
    let first = vectors.first().ok_or(CoreError::WrongArity { expected: 1, got: 0 })?;
    let k = first.len();
    for v in vectors {
        if v.len() != k {
            return Err(CoreError::WrongArity { expected: k, got: v.len() });
        }
    }
    Ok(k)
}

/// Contiguous partition of the expert set into ⌈J/g⌉ groups in input order.
pub fn partition_groups(set: &ExpertSet) -> Vec<&[ContextExample]> {
    set.examples().chunks(set.group_size()).collect()
}

/// Exponential-mechanism draw: index i with probability ∝ exp(u_i·σ/(2Δ)),
/// realized as argmax of scaled utilities plus i.i.d. Gumbel noise. The
/// Gumbel route never normalizes tiny weights, and its output distribution
/// equals the closed form in [`exponential_distribution`] exactly.
pub fn sample_exponential(u: &UtilityVector, sigma: f64, rng: &mut RngStream) -> usize {
    let scale = sigma / (2.0 * u.sensitivity);
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, &v) in u.values.iter().enumerate() {
        let score = v * scale + rng.gumbel();
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    best
}

/// Closed-form distribution of [`sample_exponential`]: softmax(u·σ/(2Δ)).
/// Kept as an independent route for exactness and DP-ratio checks.
pub fn exponential_distribution(u: &UtilityVector, sigma: f64) -> Vec<f64> {
    let scale = sigma / (2.0 * u.sensitivity);
    let scaled: Vec<f64> = u.values.iter().map(|&v| v * scale).collect();
    softmax(&scaled)
}

/// Report-noisy-max release over vote counts: Pr[y] ∝ exp(count_y·σ/2).
///
/// # Panics
/// Panics if `votes` does not carry vote counts (sensitivity-1 histogram).
pub fn noisy_argmax_votes(votes: &UtilityVector, sigma: f64, rng: &mut RngStream) -> usize {
    assert_eq!(
        votes.kind,
        UtilityKind::VoteCounts,
        "noisy_argmax_votes expects a vote histogram"
    );
    sample_exponential(votes, sigma, rng)
}

/// Deterministic argmax release shared by the noiseless modes.
pub fn argmax_release(u: &UtilityVector) -> usize {
    argmax_ties_low(&u.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_logprobs;
    use approx::assert_abs_diff_eq;

    fn lp(values: &[f64]) -> LogProbVector {
        validate_logprobs(values, values.len()).unwrap()
    }

    #[test]
    fn clamp_mode_saturates() {
        let out = clip_logprobs(&lp(&[-1.5, -3.0, -0.2]), 2.0, ClipMode::Clamp);
        assert_eq!(out.values(), &[-1.5, -2.0, -0.2]);
    }

    #[test]
    fn zero_out_mode_drops_out_of_range_values_to_zero() {
        let out = clip_logprobs(&lp(&[-1.5, -3.0, -0.2]), 2.0, ClipMode::ZeroOut);
        assert_eq!(out.values(), &[-1.5, 0.0, -0.2]);
    }

    #[test]
    fn clamp_in_probability_view_floors_at_exp_minus_gamma() {
        let p = [0.9f64, 0.05, 0.05];
        let logs = lp(&p.map(f64::ln));
        let clipped = clip_logprobs(&logs, 2.0, ClipMode::Clamp);
        let back: Vec<f64> = clipped.values().iter().map(|v| v.exp()).collect();
        assert_abs_diff_eq!(back[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], (-2.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(back[2], (-2.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], 0.1353, epsilon = 5e-5);
    }

    #[test]
    fn vclip_scales_long_vectors_and_keeps_short_ones() {
        let scaled = vclip(&[3.0, 4.0], 2.0);
        assert_abs_diff_eq!(scaled[0], 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(scaled[1], 1.6, epsilon = 1e-12);
        assert_eq!(vclip(&[1.0, 0.0], 2.0), vec![1.0, 0.0]);
        assert_eq!(vclip(&[0.0, 0.0], 2.0), vec![0.0, 0.0]);
    }

    #[test]
    fn poe_aggregation_sums_logs() {
        let a = lp(&[0.6f64.ln(), 0.4f64.ln()]);
        let b = lp(&[0.7f64.ln(), 0.3f64.ln()]);
        let u = aggregate_poe(&[a.clone(), b], 2.0).unwrap();
        assert_abs_diff_eq!(u.values[0], 0.42f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(u.values[1], 0.12f64.ln(), epsilon = 1e-12);
        assert_eq!(u.sensitivity, 2.0);

        let single = aggregate_poe(std::slice::from_ref(&a), 2.0).unwrap();
        assert_eq!(single.values, a.values());
    }

    #[test]
    fn poe_aggregation_of_uniform_experts_is_flat() {
        let u = lp(&[0.25f64.ln(); 4]);
        let agg = aggregate_poe(&[u.clone(), u.clone(), u], 2.0).unwrap();
        for v in &agg.values {
            assert_abs_diff_eq!(*v, 3.0 * 0.25f64.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn vote_aggregation_counts_argmaxes() {
        let a = lp(&[0.6f64.ln(), 0.4f64.ln()]);
        let b = lp(&[0.7f64.ln(), 0.3f64.ln()]);
        let u = aggregate_votes(&[a, b]).unwrap();
        assert_eq!(u.values, vec![2.0, 0.0]);
        assert_eq!(u.sensitivity, 1.0);

        let tie = lp(&[0.5f64.ln(), 0.5f64.ln()]);
        let u = aggregate_votes(&[tie]).unwrap();
        assert_eq!(u.values, vec![1.0, 0.0]);
    }

    #[test]
    fn vote_tie_break_is_repeatable() {
        let tie = lp(&[-1.0, -1.0, -2.0]);
        for _ in 0..10 {
            let u = aggregate_votes(std::slice::from_ref(&tie)).unwrap();
            assert_eq!(u.values, vec![1.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn aggregation_rejects_mixed_arity() {
        let a = lp(&[-0.5, -0.5]);
        let b = lp(&[-0.5, -0.5, -0.5]);
        assert!(aggregate_poe(&[a.clone(), b.clone()], 2.0).is_err());
        assert!(aggregate_votes(&[a, b]).is_err());
    }

    #[test]
    fn grouping_is_contiguous_with_remainder() {
        let ex = |p: &str, l| ContextExample::new(p, Some(l)).unwrap();
        let set = ExpertSet::new(
            vec![ex("1", 0), ex("2", 0), ex("3", 0), ex("4", 0), ex("5", 0), ex("6", 0)],
            3,
        )
        .unwrap();
        let groups = partition_groups(&set);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].len(), 3);
        assert_eq!(groups[1].len(), 3);

        let set = ExpertSet::new(
            vec![ex("1", 0), ex("2", 0), ex("3", 0), ex("4", 0), ex("5", 0)],
            2,
        )
        .unwrap();
        let groups = partition_groups(&set);
        assert_eq!(groups.iter().map(|g| g.len()).collect::<Vec<_>>(), vec![2, 2, 1]);
        let flat: Vec<&str> = groups.iter().flat_map(|g| g.iter().map(|e| e.payload.as_str())).collect();
        assert_eq!(flat, vec!["1", "2", "3", "4", "5"]);

        let set = ExpertSet::new(vec![ex("1", 0), ex("2", 0)], 1).unwrap();
        assert_eq!(partition_groups(&set).len(), 2);
    }

    #[test]
    fn closed_form_matches_hand_computed_case() {
        let u = UtilityVector { values: vec![-1.0, -2.0], sensitivity: 2.0, kind: UtilityKind::PoeSum };
        let p = exponential_distribution(&u, 1.0);
        assert_abs_diff_eq!(p[0], 0.5621765008857981, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.5622, epsilon = 5e-5);
    }

    #[test]
    fn sampler_frequencies_match_closed_form() {
        let u = UtilityVector { values: vec![-1.0, -2.0], sensitivity: 2.0, kind: UtilityKind::PoeSum };
        let mut rng = RngStream::new(2024, 0);
        let n = 1_000_000;
        let mut count0 = 0usize;
        for _ in 0..n {
            if sample_exponential(&u, 1.0, &mut rng) == 0 {
                count0 += 1;
            }
        }
        let freq = count0 as f64 / n as f64;
        assert!((freq - 0.5621765008857981).abs() < 0.002, "freq {freq}");
    }

    #[test]
    fn sampler_is_uniform_when_noise_dominates() {
        let u = UtilityVector { values: vec![-1.0, -2.0, -0.5], sensitivity: 2.0, kind: UtilityKind::PoeSum };
        let p = exponential_distribution(&u, 1e-9);
        for v in &p {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-8);
        }

        let flat = UtilityVector { values: vec![-1.0; 4], sensitivity: 2.0, kind: UtilityKind::PoeSum };
        let p = exponential_distribution(&flat, 3.0);
        for v in &p {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn rnm_closed_form_matches_hand_computed_case() {
        let votes = UtilityVector { values: vec![2.0, 0.0], sensitivity: 1.0, kind: UtilityKind::VoteCounts };
        let p = exponential_distribution(&votes, 1.0);
        assert_abs_diff_eq!(p[0], 0.7310585786300049, epsilon = 1e-12);
    }

    #[test]
    fn rnm_with_huge_sigma_pins_the_leader() {
        let votes = UtilityVector { values: vec![3.0, 0.0, 0.0, 0.0], sensitivity: 1.0, kind: UtilityKind::VoteCounts };
        let p = exponential_distribution(&votes, 50.0);
        assert!(p[0] > 1.0 - 1e-6);

        let mut rng = RngStream::new(5, 5);
        for _ in 0..1000 {
            assert_eq!(noisy_argmax_votes(&votes, 50.0, &mut rng), 0);
        }
    }

    #[test]
    fn rnm_uniform_votes_sample_uniformly() {
        let votes = UtilityVector { values: vec![1.0; 4], sensitivity: 1.0, kind: UtilityKind::VoteCounts };
        let p = exponential_distribution(&votes, 1.0);
        for v in &p {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }
}
