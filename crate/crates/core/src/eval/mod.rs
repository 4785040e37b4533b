//! Episode runner, answer scoring and evaluation metrics.

mod agent;
mod episode;
mod metrics;
pub mod oracle;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::NormalizedAnswer;
use crate::scalar::Scalar;

pub use agent::{Agent, AgentError, AgentView, NoToolAgent, OracleAgent};
pub use episode::{
    run_episode, run_eval, CallOutcome, EpisodeLimits, EpisodeRecord, Termination, ToolCallRecord, BUDGET_EXHAUSTED,
};
pub use metrics::{compute_metrics, EvalReport, MetricsError};

/// Relative-error margin for numeric answers.
pub const DEFAULT_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ScoreError {
    #[error("ratio scoring needs a positive ground truth, got {0}")]
    NonpositiveGroundTruth(f64),
}

/// Multiple choice: equality. Numeric: `pred / gt` within `[1 - r, 1 + r]`,
/// both bounds inclusive. Answers of different kinds never match.
pub fn score_answer<T: Scalar>(pred: &NormalizedAnswer, gt: &NormalizedAnswer, r: T) -> Result<bool, ScoreError> {
    match (pred, gt) {
        (NormalizedAnswer::Choice(p), NormalizedAnswer::Choice(g)) => Ok(p == g),
        (NormalizedAnswer::Number(p), NormalizedAnswer::Number(g)) => {
            if !(*g > 0.0) {
                return Err(ScoreError::NonpositiveGroundTruth(*g));
            }
            let ratio = T::lit(*p) / T::lit(*g);
            Ok(ratio >= T::one() - r && ratio <= T::one() + r)
        }
        (NormalizedAnswer::Number(_), NormalizedAnswer::Choice(_)) => Ok(false),
        (NormalizedAnswer::Choice(_), NormalizedAnswer::Number(g)) => {
            if *g > 0.0 {
                Ok(false)
            } else {
                Err(ScoreError::NonpositiveGroundTruth(*g))
            }
        }
    }
}

/// Scoring settings carried into reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub margin: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { margin: DEFAULT_MARGIN }
    }
}
