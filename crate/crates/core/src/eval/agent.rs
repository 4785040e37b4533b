use thiserror::Error;

use super::oracle::{answer_text, derive_answer, fallback_answer, plan_analysis, plan_calls};
use crate::grammar::{render_calls, Trajectory, TurnKind};
use crate::image::{ImageRef, ImageStore};
use crate::world::QAItem;

/// What an agent sees before producing its next output.
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub qa: &'a QAItem,
    /// Everything so far, including sandbox observations.
    pub transcript: &'a Trajectory,
    pub store: &'a ImageStore,
}

impl AgentView<'_> {
    /// Observation turns that follow the most recent action turn.
    pub fn latest_observations(&self) -> Vec<&str> {
        let turns = &self.transcript.turns;
        let start = turns.iter().rposition(|t| t.kind == TurnKind::Action).map_or(turns.len(), |i| i + 1);
        turns[start..].iter().filter(|t| t.kind == TurnKind::Observation).map(|t| t.content.as_str()).collect()
    }

    pub fn has_acted(&self) -> bool {
        self.transcript.turns.iter().any(|t| t.kind == TurnKind::Action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("agent failed: {0}")]
pub struct AgentError(pub String);

/// A policy producing tagged text one step at a time.
pub trait Agent: Send {
    fn name(&self) -> &str;

    /// Next chunk of tagged output: an action step or a final answer.
    fn act(&mut self, view: &AgentView<'_>) -> Result<String, AgentError>;
}

/// Scripted agent that calls the matching skills and reads the answer from their hints.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleAgent;

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn act(&mut self, view: &AgentView<'_>) -> Result<String, AgentError> {
        if !view.has_acted() {
            let calls = plan_calls(view.qa, ImageRef::INPUT);
            return Ok(format!("<analy>{}</analy><action>{}</action>", plan_analysis(view.qa), render_calls(&calls)));
        }
        let (answer, reasoning) = match derive_answer(view.qa, &view.latest_observations()) {
            Some(d) => (d.answer, d.reasoning),
            None => (
                fallback_answer(view.qa),
                format!("The tool output is unusable, so I fall back to the original image {}.", ImageRef::INPUT),
            ),
        };
        Ok(format!("<analy>{reasoning}</analy><ans>{}</ans>", answer_text(&answer)))
    }
}

/// Baseline that answers immediately with a fixed guess.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoToolAgent;

impl Agent for NoToolAgent {
    fn name(&self) -> &str {
        "notool"
    }

    fn act(&mut self, view: &AgentView<'_>) -> Result<String, AgentError> {
        Ok(format!("<analy>Answering from the image alone.</analy><ans>{}</ans>", answer_text(&fallback_answer(view.qa))))
    }
}
