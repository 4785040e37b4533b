use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::agent::{Agent, AgentView};
use super::score_answer;
use crate::grammar::{
    extract_answer, parse_trajectory, render_trajectory, ActionCall, GrammarConfig, NormalizedAnswer, Trajectory, Turn,
};
use crate::reward::ToolUsage;
use crate::skills::{execute_skill, EpisodeSetupError, SkillStatus, Toolbox};
use crate::world::QAItem;

/// Observation returned when a call exceeds the episode's call budget.
pub const BUDGET_EXHAUSTED: &str = "call budget exhausted";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLimits {
    pub max_calls: usize,
    pub max_turns: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<Duration>,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self { max_calls: 8, max_turns: 8, deadline: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CallOutcome {
    Success,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub call: ActionCall,
    pub outcome: CallOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<SkillStatus>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answered,
    TurnLimit,
    Deadline,
    /// The agent output did not parse; the raw text is kept in the transcript.
    MalformedOutput,
    AgentError,
}

/// One complete episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub agent: String,
    pub qa: QAItem,
    /// The full tagged text: agent output interleaved with observations.
    pub transcript: String,
    pub trajectory: Trajectory,
    pub tool_calls: Vec<ToolCallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<NormalizedAnswer>,
    pub answer_correct: bool,
    pub n_calls: usize,
    pub wall_ms: u64,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_error: Option<String>,
}

impl EpisodeRecord {
    pub fn all_calls_succeeded(&self) -> bool {
        self.tool_calls.iter().all(|c| c.outcome == CallOutcome::Success)
    }
}

impl ToolUsage for EpisodeRecord {
    fn successful_calls(&self) -> usize {
        self.tool_calls.iter().filter(|c| c.outcome == CallOutcome::Success).count()
    }

    fn answer_correct(&self) -> bool {
        self.answer_correct
    }
}

fn outcome_of(status: SkillStatus) -> CallOutcome {
    match status {
        SkillStatus::Complete => CallOutcome::Success,
        SkillStatus::Partial => CallOutcome::Partial,
        SkillStatus::Failed => CallOutcome::Failed,
    }
}

/// Runs one agent on one item until it answers or a limit is hit.
///
/// Each action turn's calls run through the skill engine and come back as
/// observation turns. Calls beyond `max_calls` are rejected with
/// [`BUDGET_EXHAUSTED`]. An agent failure ends the episode as an incorrect,
/// zero-call record.
pub fn run_episode(
    agent: &mut dyn Agent,
    qa: &QAItem,
    toolbox: &Toolbox,
    limits: &EpisodeLimits,
    seed: u64,
    margin: f64,
) -> Result<EpisodeRecord, EpisodeSetupError> {
    let started = Instant::now();
    let grammar = GrammarConfig::default();
    let episode_id = format!("{}-{}", qa.id, seed);
    let mut ctx = toolbox.start_episode(&episode_id, &qa.scene_id, seed)?;
    let mut transcript = Trajectory::new(Vec::new());
    let mut text = String::new();
    let mut tool_calls = Vec::new();
    let mut agent_error = None;
    let mut termination = Termination::TurnLimit;

    for _ in 0..limits.max_turns.max(1) {
        if limits.deadline.is_some_and(|d| started.elapsed() >= d) {
            termination = Termination::Deadline;
            break;
        }
        let output = {
            let view = AgentView { qa, transcript: &transcript, store: &ctx.store };
            agent.act(&view)
        };
        let output = match output {
            Ok(o) => o,
            Err(e) => {
                agent_error = Some(e.0);
                termination = Termination::AgentError;
                break;
            }
        };
        let step = match parse_trajectory(&output, &grammar) {
            Ok(step) => step,
            Err(_) => {
                text.push_str(&output);
                termination = Termination::MalformedOutput;
                break;
            }
        };
        text.push_str(&output);
        let calls: Vec<ActionCall> = step.calls().cloned().collect();
        let malformed_action = step.turns.iter().any(|t| t.malformed);
        let answered = step.answer_turn().is_some();
        transcript.turns.extend(step.turns);
        if answered {
            termination = Termination::Answered;
            break;
        }
        let mut observations = Vec::new();
        if malformed_action {
            observations.push(Turn::observation("Error: the action could not be parsed.", vec![]));
        }
        for call in calls {
            if tool_calls.len() >= limits.max_calls {
                observations.push(Turn::observation(BUDGET_EXHAUSTED, vec![]));
                continue;
            }
            let (obs, record) = match execute_skill(&toolbox.registry, &call, &mut ctx) {
                Ok(result) => {
                    let obs = Turn::observation(result.text(), result.visuals());
                    let record = ToolCallRecord {
                        call,
                        outcome: outcome_of(result.status),
                        status: Some(result.status),
                        error: result.error.map(|e| e.to_string()),
                    };
                    (obs, record)
                }
                Err(e) => {
                    let obs = Turn::observation(format!("Error: {e}."), vec![]);
                    let record = ToolCallRecord { call, outcome: CallOutcome::Failed, status: None, error: Some(e.to_string()) };
                    (obs, record)
                }
            };
            observations.push(obs);
            tool_calls.push(record);
        }
        let obs_traj = Trajectory::new(observations);
        text.push_str(&render_trajectory(&obs_traj, &grammar));
        transcript.turns.extend(obs_traj.turns);
    }

    if termination == Termination::AgentError {
        tool_calls.clear();
    }
    transcript.raw_text = text.clone();
    let answer = if termination == Termination::Answered { extract_answer(&transcript, qa.kind).ok() } else { None };
    let answer_correct = answer.as_ref().is_some_and(|a| score_answer(a, &qa.answer, margin).unwrap_or(false));
    Ok(EpisodeRecord {
        episode_id,
        agent: agent.name().to_string(),
        qa: qa.clone(),
        transcript: text,
        trajectory: transcript,
        n_calls: tool_calls.len(),
        tool_calls,
        answer,
        answer_correct,
        wall_ms: started.elapsed().as_millis() as u64,
        termination,
        agent_error,
    })
}

/// Runs every item with up to `parallelism` concurrent episodes. Item `i`
/// uses seed `seed + i`; results come back in item order.
pub fn run_eval(
    items: &[QAItem],
    toolbox: &Toolbox,
    make_agent: &(dyn Fn() -> Box<dyn Agent> + Sync),
    limits: &EpisodeLimits,
    seed: u64,
    margin: f64,
    parallelism: usize,
) -> Result<Vec<EpisodeRecord>, EpisodeSetupError> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<EpisodeRecord, EpisodeSetupError>>>> =
        Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, items.len().max(1)) {
            s.spawn(|| {
                let mut agent = make_agent();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(qa) = items.get(i) else { break };
                    let rec = run_episode(agent.as_mut(), qa, toolbox, limits, seed.wrapping_add(i as u64), margin);
                    slots.lock().expect("no panics while holding the lock")[i] = Some(rec);
                }
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every item visited"))
        .collect()
}
