//! Rewards, group-relative advantages and the clipped policy surrogate.
//!
//! Everything here is generic over [`Scalar`]; the crate root re-exports the
//! `f64` instantiations used by the rest of the workspace.

mod grpo;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{check_tag_balance, normalize_answer, NormalizedAnswer, DEFAULT_TAGS};
use crate::scalar::{mean_ordered, sum_ordered, Scalar};

pub use grpo::{grpo_surrogate, GrpoBatch, GrpoDiagnostics, GrpoOutput, GrpoSequence, DEFAULT_BETA, DEFAULT_EPS_CLIP};

/// Below this population standard deviation a group carries no signal.
pub const SIGMA_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("a group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
}

/// Weights of the linear reward combination and the numeric decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights<T> {
    pub correct: T,
    pub format: T,
    pub tool: T,
    /// Decay rate of the numeric correctness reward.
    pub alpha: T,
}

impl<T: Scalar> Default for RewardWeights<T> {
    fn default() -> Self {
        Self { correct: T::lit(1.0), format: T::lit(0.3), tool: T::lit(0.3), alpha: T::lit(1.0) }
    }
}

impl<T: Scalar> RewardWeights<T> {
    pub fn validate(&self) -> Result<(), RewardError> {
        if ![self.correct, self.format, self.tool, self.alpha].iter().all(|w| w.is_finite()) {
            return Err(RewardError::InvalidConfig("weights must be finite".into()));
        }
        if self.alpha <= T::zero() {
            return Err(RewardError::InvalidConfig("alpha must be positive".into()));
        }
        Ok(())
    }
}

/// The three reward components before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardParts<T> {
    pub format: T,
    pub correct: T,
    pub tool: T,
}

impl<T: Scalar> std::ops::Add for RewardParts<T> {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { format: self.format + o.format, correct: self.correct + o.correct, tool: self.tool + o.tool }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    pub r_format: T,
    pub r_correct: T,
    pub r_tool: T,
    pub r_all: T,
}

impl<T: Scalar> RewardBreakdown<T> {
    pub fn new(parts: RewardParts<T>, weights: &RewardWeights<T>) -> Self {
        Self { r_format: parts.format, r_correct: parts.correct, r_tool: parts.tool, r_all: combine(parts, weights) }
    }

    pub fn parts(&self) -> RewardParts<T> {
        RewardParts { format: self.r_format, correct: self.r_correct, tool: self.r_tool }
    }
}

/// `0` when every tag in `tags` is balanced in `text`, `-1` otherwise.
pub fn format_reward<T: Scalar, S: AsRef<str>>(text: &str, tags: &[S]) -> T {
    if check_tag_balance(text, tags).balanced {
        T::zero()
    } else {
        -T::one()
    }
}

/// Format reward over the default tag set.
pub fn format_reward_default<T: Scalar>(text: &str) -> T {
    format_reward(text, &DEFAULT_TAGS)
}

/// Indicator for discrete answers, `exp(-alpha * |pred - gt|)` for numeric ones.
/// A kind mismatch or a non-finite prediction earns 0.
pub fn correctness_reward<T: Scalar>(pred: &NormalizedAnswer, gt: &NormalizedAnswer, alpha: T) -> T {
    match (pred, gt) {
        (NormalizedAnswer::Choice(p), NormalizedAnswer::Choice(g)) => {
            if p == g {
                T::one()
            } else {
                T::zero()
            }
        }
        (NormalizedAnswer::Number(p), NormalizedAnswer::Number(g)) if p.is_finite() && g.is_finite() => {
            (-(alpha * (T::lit(*p) - T::lit(*g)).abs())).exp()
        }
        _ => T::zero(),
    }
}

/// Correctness from raw answer text; an unextractable answer earns 0.
pub fn correctness_from_text<T: Scalar>(answer_text: Option<&str>, gt: &NormalizedAnswer, alpha: T) -> T {
    answer_text
        .and_then(|t| normalize_answer(t, gt.kind()).ok())
        .map_or(T::zero(), |pred| correctness_reward(&pred, gt, alpha))
}

/// What the tool reward needs to know about an episode.
pub trait ToolUsage {
    /// Number of tool calls that completed successfully.
    fn successful_calls(&self) -> usize;
    fn answer_correct(&self) -> bool;
}

/// `1` iff at least one tool call succeeded and the final answer is correct.
pub fn tool_reward<T: Scalar>(episode: &impl ToolUsage) -> T {
    tool_reward_from(episode.successful_calls() > 0, episode.answer_correct())
}

pub fn tool_reward_from<T: Scalar>(any_success: bool, answer_correct: bool) -> T {
    if any_success && answer_correct {
        T::one()
    } else {
        T::zero()
    }
}

/// `format_w * r_format + correct_w * r_correct + tool_w * r_tool`, in that order.
pub fn combine<T: Scalar>(parts: RewardParts<T>, weights: &RewardWeights<T>) -> T {
    weights.format * parts.format + weights.correct * parts.correct + weights.tool * parts.tool
}

/// Standardises a group of rewards with the population mean and deviation.
/// A (near-)constant group yields all-zero advantages.
pub fn group_advantages<T: Scalar>(rewards: &[T]) -> Result<Vec<T>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    let mu = mean_ordered(rewards).expect("non-empty");
    let var = sum_ordered(rewards.iter().map(|r| (*r - mu) * (*r - mu))) / T::from_count(rewards.len());
    let sigma = var.sqrt();
    if !(sigma >= T::lit(SIGMA_GUARD)) {
        return Ok(vec![T::zero(); rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (*r - mu) / sigma).collect())
}

/// Mean negative log-likelihood of a token sequence.
pub fn token_nll<T: Scalar>(token_logprobs: &[T]) -> Result<T, RewardError> {
    mean_ordered(token_logprobs).map(|m| -m).ok_or(RewardError::EmptyInput)
}

/// Reward settings as stored in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub weights: RewardWeights<f64>,
    pub eps_clip: f64,
    pub beta: f64,
    /// Tags checked by the format reward.
    pub tags: Vec<String>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardWeights::default(),
            eps_clip: DEFAULT_EPS_CLIP,
            beta: DEFAULT_BETA,
            tags: DEFAULT_TAGS.iter().map(|t| t.to_string()).collect(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        self.weights.validate()?;
        if !(self.eps_clip > 0.0 && self.eps_clip < 1.0) {
            return Err(RewardError::InvalidConfig("eps_clip must lie in (0, 1)".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(RewardError::InvalidConfig("beta must be finite and non-negative".into()));
        }
        if self.tags.is_empty() {
            return Err(RewardError::InvalidConfig("tag set is empty".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, RewardError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| RewardError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_reward_cases() {
        assert_eq!(format_reward_default::<f64>("<analy>x</analy><action>A()</action><ans>B</ans>"), 0.0);
        assert_eq!(format_reward_default::<f64>("<analy>x</analy><action>A()"), -1.0);
        assert_eq!(format_reward_default::<f64>(""), 0.0);
    }

    #[test]
    fn correctness_cases() {
        let c = NormalizedAnswer::Choice;
        let n = NormalizedAnswer::Number;
        assert_eq!(correctness_reward(&c('B'), &c('B'), 1.0f64), 1.0);
        assert_eq!(correctness_reward(&c('A'), &c('B'), 1.0f64), 0.0);
        assert_eq!(correctness_reward(&n(2.0), &n(2.0), 1.0f64), 1.0);
        assert_eq!(correctness_reward(&c('A'), &n(2.0), 1.0f64), 0.0);
        assert_eq!(correctness_from_text::<f64>(Some("no idea"), &n(2.0), 1.0), 0.0);
        assert_eq!(correctness_from_text::<f64>(None, &c('A'), 1.0), 0.0);
        assert_eq!(correctness_from_text::<f64>(Some("(b)"), &c('B'), 1.0), 1.0);
    }

    #[test]
    fn tool_reward_cases() {
        assert_eq!(tool_reward_from::<f64>(true, true), 1.0);
        assert_eq!(tool_reward_from::<f64>(true, false), 0.0);
        assert_eq!(tool_reward_from::<f64>(false, true), 0.0);
    }

    #[test]
    fn combine_with_default_weights() {
        let w = RewardWeights::<f64>::default();
        assert_eq!(combine(RewardParts { format: 0.0, correct: 1.0, tool: 1.0 }, &w), 1.3);
        assert_eq!(combine(RewardParts { format: -1.0, correct: 0.0, tool: 0.0 }, &w), -0.3);
        assert_eq!(combine(RewardParts::default(), &w), 0.0);
    }

    #[test]
    fn advantages() {
        assert_eq!(group_advantages(&[1.0f64, 1.0, 0.0, 0.0]).unwrap(), [1.0, 1.0, -1.0, -1.0]);
        assert_eq!(group_advantages(&[0.7f64; 4]).unwrap(), [0.0; 4]);
        assert_eq!(group_advantages(&[2.0f64, 0.0]).unwrap(), [1.0, -1.0]);
        assert_eq!(group_advantages(&[1.0f64]), Err(RewardError::GroupTooSmall(1)));
        assert_eq!(group_advantages(&[1.0f32, 1.0, 0.0, 0.0]).unwrap(), [1.0, 1.0, -1.0, -1.0]);
    }

    #[test]
    fn nll() {
        assert_eq!(token_nll(&[0.0f64, 0.0]).unwrap(), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(token_nll(&[-ln2, -ln2]).unwrap(), ln2);
        assert_eq!(token_nll::<f64>(&[]), Err(RewardError::EmptyInput));
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = RewardConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RewardConfig::default());
        assert_eq!(cfg.tags, ["analy", "action", "obs", "ans"]);
        assert!(RewardConfig::from_json(r#"{"weights": {"correct": 1, "format": 0.3, "tool": 0.3, "alpha": 0}}"#).is_err());
    }
}
