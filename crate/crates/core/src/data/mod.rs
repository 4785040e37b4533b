//! Warm-up view pairs and scripted SFT trajectories.

use std::path::PathBuf;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::oracle::{answer_text, derive_answer, plan_analysis, plan_calls};
use crate::eval::score_answer;
use crate::grammar::{
    render_calls, render_trajectory, ActionCall, ArgValue, GrammarConfig, NormalizedAnswer, Trajectory, Turn,
};
use crate::image::{ImageRef, ImageStore};
use crate::skills::{execute_skill, EpisodeSetupError, SkillError, SkillName, SkillResult, SkillStatus, Toolbox};
use crate::tools::splitmix64;
use crate::world::{normalize_label, NoiseConfig, QAItem};

pub const SFT_SCHEMA: &str = "sft.v1";
pub const WARMUP_SCHEMA: &str = "warmup.v1";
/// Answer for every depth-view pair.
pub const DEPTH_VIEW_ANSWER: &str = "depth map: brightness encodes relative distance";
pub const VIEW_QUESTION_PREFIX: &str = "Which view is shown";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failure fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("the scene store is empty")]
    NoScenes,
    #[error(transparent)]
    Setup(#[from] EpisodeSetupError),
    #[error("teacher call rejected: {0}")]
    Skill(#[from] SkillError),
    #[error("skill produced no visual for a warm-up view")]
    MissingView,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewKind {
    MaskMap,
    DepthMap,
}

impl ViewKind {
    /// The skill that produces this kind of view.
    pub fn skill(self) -> SkillName {
        match self {
            ViewKind::MaskMap => SkillName::SegmentObjects,
            ViewKind::DepthMap => SkillName::EstimateDepth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupPair {
    pub schema: String,
    pub id: String,
    pub scene_id: String,
    pub base_image: ImageRef,
    pub augmented_view: ImageRef,
    pub view_kind: ViewKind,
    pub question: String,
    pub answer: String,
    /// Labels segmented into the mask view; empty for depth views.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub image_paths: IndexMap<String, PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Consistency {
    Empty,
    Partial,
    Complete,
}

/// Seed for item `index` of a run seeded with `seed`.
pub fn item_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ (index as u64).wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn image_paths(store: &ImageStore) -> IndexMap<String, PathBuf> {
    store
        .refs()
        .filter_map(|r| store.get(r).and_then(|img| img.path.clone()).map(|p| (r.to_string(), p)))
        .collect()
}

fn distinct_labels(labels: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for l in labels {
        let l = normalize_label(&l);
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

/// The templated answer for a view-discrimination question.
pub fn view_answer(kind: ViewKind, labels: &[String]) -> String {
    match kind {
        ViewKind::DepthMap => DEPTH_VIEW_ANSWER.to_string(),
        ViewKind::MaskMap => format!("mask map: segmented objects are {}", labels.join(", ")),
    }
}

/// Builds `n` view-discrimination pairs, cycling through the scenes in id
/// order and drawing the view kind per pair.
pub fn build_warmup(toolbox: &Toolbox, n: usize, seed: u64) -> Result<Vec<WarmupPair>, DataError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut ids: Vec<&str> = toolbox.scenes.ids().collect();
    ids.sort_unstable();
    if ids.is_empty() {
        return Err(DataError::NoScenes);
    }
    let mut quiet = toolbox.clone();
    quiet.failures = NoiseConfig::off();
    (0..n)
        .map(|i| {
            let s = item_seed(seed, i);
            let scene_id = ids[i % ids.len()];
            let scene = toolbox.scenes.get(scene_id).ok_or(DataError::NoScenes)?;
            let kind = if ChaCha8Rng::seed_from_u64(s).random::<bool>() { ViewKind::DepthMap } else { ViewKind::MaskMap };
            let id = format!("warmup-{seed}-{i}");
            let mut ctx = quiet.start_episode(&id, scene_id, s)?;
            let labels = match kind {
                ViewKind::MaskMap => distinct_labels(scene.objects.iter().map(|o| o.label.clone())),
                ViewKind::DepthMap => Vec::new(),
            };
            let mut call = ActionCall::new(kind.skill().as_str()).arg("img_path", ArgValue::Text(ImageRef::INPUT.to_string()));
            if kind == ViewKind::MaskMap {
                call = call.arg("text_labels", ArgValue::TextList(labels.clone()));
            }
            let result = execute_skill(&quiet.registry, &call, &mut ctx)?;
            let view = result.visuals().first().copied().ok_or(DataError::MissingView)?;
            let found: Vec<String> = match kind {
                ViewKind::MaskMap => result.per_query.iter().filter(|(_, f)| **f).map(|(l, _)| l.clone()).collect(),
                ViewKind::DepthMap => Vec::new(),
            };
            Ok(WarmupPair {
                schema: WARMUP_SCHEMA.into(),
                id,
                scene_id: scene_id.to_string(),
                base_image: ImageRef::INPUT,
                augmented_view: view,
                view_kind: kind,
                question: format!(
                    "{VIEW_QUESTION_PREFIX} in {view}, a mask map or a depth map of {}? What does it represent?",
                    ImageRef::INPUT
                ),
                answer: view_answer(kind, &found),
                labels: found,
                image_paths: image_paths(&ctx.store),
            })
        })
        .collect()
}

/// Compares the entities a question is about with what a skill found.
///
/// Entities are matched after label normalization. A failed result is
/// always `Empty`.
pub fn consistency_check<S: AsRef<str>>(entities: &[S], result: &SkillResult) -> Consistency {
    if result.status == SkillStatus::Failed {
        return Consistency::Empty;
    }
    let found: Vec<String> = result.per_query.iter().filter(|(_, f)| **f).map(|(l, _)| normalize_label(l)).collect();
    let hits = entities.iter().filter(|e| found.contains(&normalize_label(e.as_ref()))).count();
    if hits == 0 {
        Consistency::Empty
    } else if hits == entities.len() {
        Consistency::Complete
    } else {
        Consistency::Partial
    }
}

/// Worst consistency over every call in a trajectory.
pub fn trajectory_consistency<S: AsRef<str>>(entities: &[S], results: &[SkillResult]) -> Consistency {
    results.iter().map(|r| consistency_check(entities, r)).min().unwrap_or(Consistency::Empty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTrajectory {
    pub schema: String,
    pub id: String,
    pub qa: QAItem,
    pub turns: Trajectory,
    /// The rendered tagged text of `turns`.
    pub text: String,
    pub consistency: Consistency,
    pub failure_injected: bool,
    /// Structured skill results behind each observation, in call order.
    pub tool_results: Vec<SkillResult>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub image_paths: IndexMap<String, PathBuf>,
}

impl SftTrajectory {
    pub fn final_answer(&self) -> Option<&str> {
        self.turns.answer_turn().map(|t| t.content.as_str())
    }
}

/// Indices that receive an injected failure: exactly `round(fraction * n)`
/// of them, chosen by a seeded shuffle.
pub fn failure_indices(n: usize, fraction: f64, seed: u64) -> Result<Vec<bool>, DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed)));
    let mut marks = vec![false; n];
    for &i in &order[..k] {
        marks[i] = true;
    }
    Ok(marks)
}

fn fallback_reasoning(qa: &QAItem, answer: &NormalizedAnswer, why: &str) -> String {
    let shown = qa.option_text(answer_letter(answer)).map(|t| format!(" ({t})")).unwrap_or_default();
    format!(
        "{why} I abandon the tool path and revert to the original image {}: judging from it directly, the answer is {}{shown}.",
        ImageRef::INPUT,
        answer_text(answer)
    )
}

fn answer_letter(answer: &NormalizedAnswer) -> char {
    match answer {
        NormalizedAnswer::Choice(c) => *c,
        NormalizedAnswer::Number(_) => '\0',
    }
}

/// Writes one scripted teacher trajectory per item.
///
/// The sampled failure items run with every tool call forced to fail; all
/// other items run with failures disabled. Numeric answers on the tool path
/// are the ones derived from the hints and match the ground truth within
/// `margin`.
pub fn build_sft(
    qa_items: &[QAItem],
    toolbox: &Toolbox,
    failure_fraction: f64,
    seed: u64,
    margin: f64,
) -> Result<Vec<SftTrajectory>, DataError> {
    let marks = failure_indices(qa_items.len(), failure_fraction, seed)?;
    let grammar = GrammarConfig::default();
    qa_items
        .iter()
        .zip(marks)
        .enumerate()
        .map(|(i, (qa, inject))| {
            let s = item_seed(seed, i);
            let id = format!("sft-{seed}-{i}");
            let mut ctx = toolbox.start_episode(&id, &qa.scene_id, s)?;
            ctx.failures = NoiseConfig { failure_prob: if inject { 1.0 } else { 0.0 }, ..toolbox.failures.clone() };
            let calls = plan_calls(qa, ImageRef::INPUT);
            let mut turns = vec![Turn::analysis(plan_analysis(qa)), Turn::action(render_calls(&calls))];
            let mut results = Vec::with_capacity(calls.len());
            for call in &calls {
                let r = execute_skill(&toolbox.registry, call, &mut ctx)?;
                turns.push(Turn::observation(r.text(), r.visuals()));
                results.push(r);
            }
            let consistency = trajectory_consistency(&qa.entities, &results);
            let texts: Vec<String> = results.iter().map(SkillResult::text).collect();
            let text_refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let (reasoning, answer) = if inject {
                let why = results
                    .iter()
                    .find(|r| r.error.is_some())
                    .map_or_else(|| "The tool failed.".to_string(), |r| r.text());
                (fallback_reasoning(qa, &qa.answer, &why), qa.answer.clone())
            } else {
                let derived = (consistency == Consistency::Complete)
                    .then(|| derive_answer(qa, &text_refs))
                    .flatten()
                    .filter(|d| score_answer(&d.answer, &qa.answer, margin).unwrap_or(false));
                match derived {
                    Some(d) => (d.reasoning, d.answer),
                    None => {
                        let why = match consistency {
                            Consistency::Partial => "The tool output covers only some of the objects in question.",
                            _ => "The tool output does not contain the objects in question.",
                        };
                        let r = fallback_reasoning(qa, &qa.answer, why).replace(
                            "I abandon the tool path and revert to",
                            "I combine the partial tool output with",
                        );
                        (r, qa.answer.clone())
                    }
                }
            };
            turns.push(Turn::analysis(reasoning));
            turns.push(Turn::answer(answer_text(&answer)));
            let mut traj = Trajectory::new(turns);
            let text = render_trajectory(&traj, &grammar);
            traj.raw_text = text.clone();
            Ok(SftTrajectory {
                schema: SFT_SCHEMA.into(),
                id,
                qa: qa.clone(),
                turns: traj,
                text,
                consistency,
                failure_injected: inject,
                tool_results: results,
                image_paths: image_paths(&ctx.store),
            })
        })
        .collect()
}
