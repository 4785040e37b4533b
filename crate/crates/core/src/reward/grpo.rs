use serde::{Deserialize, Serialize};

use super::{group_advantages, RewardError};
use crate::scalar::{mean_ordered, sum_ordered, Scalar};

pub const DEFAULT_EPS_CLIP: f64 = 0.2;
pub const DEFAULT_BETA: f64 = 0.01;

/// Token log-probabilities of one sampled output under the three policies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoSequence<T> {
    pub logp_theta: Vec<T>,
    pub logp_old: Vec<T>,
    pub logp_ref: Vec<T>,
}

/// One group of sampled outputs for a single prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoBatch<T> {
    pub group_rewards: Vec<T>,
    pub sequences: Vec<GrpoSequence<T>>,
    /// Precomputed advantages; derived from `group_rewards` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantages: Option<Vec<T>>,
    pub eps_clip: T,
    pub beta: T,
}

impl<T: Scalar> GrpoBatch<T> {
    pub fn new(group_rewards: Vec<T>, sequences: Vec<GrpoSequence<T>>) -> Self {
        Self { group_rewards, sequences, advantages: None, eps_clip: T::lit(DEFAULT_EPS_CLIP), beta: T::lit(DEFAULT_BETA) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoDiagnostics<T> {
    /// Mean token ratio `pi_theta / pi_old` over all tokens.
    pub mean_ratio: T,
    /// Fraction of tokens whose ratio lies outside `[1 - eps, 1 + eps]`.
    pub clip_fraction: T,
    /// Group mean of the per-sequence KL estimate.
    pub kl: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoOutput<T> {
    pub loss: T,
    pub diagnostics: GrpoDiagnostics<T>,
}

/// Negated clipped surrogate with KL penalty for one group.
///
/// Per sequence: the advantage times the token mean of the clipped ratio
/// factor, minus `beta` times the token mean of the `k3` estimator
/// `exp(ref - theta) - (ref - theta) - 1`. Sequences are averaged left to right.
pub fn grpo_surrogate<T: Scalar>(batch: &GrpoBatch<T>) -> Result<GrpoOutput<T>, RewardError> {
    let g = batch.sequences.len();
    let advantages = match &batch.advantages {
        Some(a) => a.clone(),
        None => group_advantages(&batch.group_rewards)?,
    };
    if advantages.len() != g {
        return Err(RewardError::ShapeMismatch(format!("{} advantages for {g} sequences", advantages.len())));
    }
    if batch.advantages.is_none() && batch.group_rewards.len() != g {
        return Err(RewardError::ShapeMismatch(format!("{} rewards for {g} sequences", batch.group_rewards.len())));
    }
    if g == 0 {
        return Err(RewardError::EmptyInput);
    }
    let (lo, hi) = (T::one() - batch.eps_clip, T::one() + batch.eps_clip);
    let mut objectives = Vec::with_capacity(g);
    let mut kls = Vec::with_capacity(g);
    let mut ratios = Vec::new();
    let mut clipped = 0usize;
    for (i, (seq, adv)) in batch.sequences.iter().zip(&advantages).enumerate() {
        let n = seq.logp_theta.len();
        if n == 0 || seq.logp_old.len() != n || seq.logp_ref.len() != n {
            return Err(RewardError::ShapeMismatch(format!(
                "sequence {i}: theta/old/ref lengths {}/{}/{}",
                n,
                seq.logp_old.len(),
                seq.logp_ref.len()
            )));
        }
        let mut factors = Vec::with_capacity(n);
        let mut kl_terms = Vec::with_capacity(n);
        for t in 0..n {
            let ratio = (seq.logp_theta[t] - seq.logp_old[t]).exp();
            let clip = ratio.max(lo).min(hi);
            if clip != ratio {
                clipped += 1;
            }
            // min(r * A, clip(r) * A) == A * min(r, clip(r)) for A >= 0, A * max(...) otherwise.
            factors.push(if *adv >= T::zero() { ratio.min(clip) } else { ratio.max(clip) });
            ratios.push(ratio);
            let d = seq.logp_ref[t] - seq.logp_theta[t];
            kl_terms.push(d.exp() - d - T::one());
        }
        let kl = mean_ordered(&kl_terms).expect("non-empty");
        let surrogate = *adv * mean_ordered(&factors).expect("non-empty");
        objectives.push(surrogate - batch.beta * kl);
        kls.push(kl);
    }
    let objective = mean_ordered(&objectives).expect("non-empty");
    Ok(GrpoOutput {
        loss: -objective,
        diagnostics: GrpoDiagnostics {
            mean_ratio: sum_ordered(ratios.iter().copied()) / T::from_count(ratios.len()),
            clip_fraction: T::from_count(clipped) / T::from_count(ratios.len()),
            kl: mean_ordered(&kls).expect("non-empty"),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(theta: &[f64], old: &[f64], reference: &[f64]) -> GrpoSequence<f64> {
        GrpoSequence { logp_theta: theta.to_vec(), logp_old: old.to_vec(), logp_ref: reference.to_vec() }
    }

    #[test]
    fn on_policy_reduces_to_mean_advantage() {
        let lp = [-0.5, -1.25, -2.0];
        let mut batch = GrpoBatch::new(
            vec![1.0, 0.0, 0.5, 0.25],
            (0..4).map(|_| seq(&lp, &lp, &[-0.1, -0.2, -0.3])).collect(),
        );
        batch.beta = 0.0;
        let out = grpo_surrogate(&batch).unwrap();
        let adv = group_advantages(&batch.group_rewards).unwrap();
        let mean = adv.iter().sum::<f64>() / 4.0;
        assert_eq!(out.loss, -mean);
        assert_eq!(out.diagnostics.clip_fraction, 0.0);
        assert_eq!(out.diagnostics.mean_ratio, 1.0);
    }

    #[test]
    fn zero_advantage_at_reference_is_zero() {
        let lp = [-0.3, -0.7];
        let batch = GrpoBatch::new(vec![1.0, 1.0], vec![seq(&lp, &lp, &lp), seq(&lp, &lp, &lp)]);
        let out = grpo_surrogate(&batch).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.diagnostics.kl, 0.0);
    }

    #[test]
    fn single_token_clip_branch() {
        let mut batch = GrpoBatch::new(vec![], vec![seq(&[1.5f64.ln()], &[0.0], &[1.5f64.ln()])]);
        batch.advantages = Some(vec![1.0]);
        batch.beta = 0.0;
        let out = grpo_surrogate(&batch).unwrap();
        assert_eq!(out.loss, -1.2);
        assert_eq!(out.diagnostics.clip_fraction, 1.0);
    }

    #[test]
    fn negative_advantage_takes_pessimistic_branch() {
        let mut batch = GrpoBatch::new(vec![], vec![seq(&[0.5f64.ln()], &[0.0], &[0.0])]);
        batch.advantages = Some(vec![-1.0]);
        batch.beta = 0.0;
        // min(0.5 * -1, 0.8 * -1) = -0.8
        assert_eq!(grpo_surrogate(&batch).unwrap().loss, 0.8);
    }

    #[test]
    fn shape_mismatch() {
        let batch = GrpoBatch::new(vec![1.0, 0.0], vec![seq(&[0.0], &[0.0, 0.0], &[0.0]), seq(&[0.0], &[0.0], &[0.0])]);
        assert!(matches!(grpo_surrogate(&batch), Err(RewardError::ShapeMismatch(_))));
        let batch = GrpoBatch::new(vec![1.0, 0.0, 1.0], vec![seq(&[0.0], &[0.0], &[0.0]), seq(&[0.0], &[0.0], &[0.0])]);
        assert!(matches!(grpo_surrogate(&batch), Err(RewardError::ShapeMismatch(_))));
    }
}
