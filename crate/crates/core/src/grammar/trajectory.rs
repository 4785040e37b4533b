use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::action::{parse_action_call, ActionCall};
use super::balance::check_tag_balance;
use crate::image::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnKind {
    Analysis,
    Action,
    Observation,
    Answer,
}

/// Tag-name to turn-kind mapping used by the parser and renderer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub tags: Vec<(String, TurnKind)>,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            tags: vec![
                ("analy".into(), TurnKind::Analysis),
                ("action".into(), TurnKind::Action),
                ("obs".into(), TurnKind::Observation),
                ("ans".into(), TurnKind::Answer),
            ],
        }
    }
}

impl GrammarConfig {
    pub fn tag_names(&self) -> Vec<&str> {
        self.tags.iter().map(|(t, _)| t.as_str()).collect()
    }

    fn tag_for(&self, kind: TurnKind) -> &str {
        self.tags
            .iter()
            .find(|(_, k)| *k == kind)
            .map(|(t, _)| t.as_str())
            .expect("grammar config maps every turn kind")
    }
}

/// One tagged segment of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub kind: TurnKind,
    pub content: String,
    /// Images attached to an observation; empty for every other kind.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attachments: Vec<ImageRef>,
    /// Text found outside any tag, kept as an analysis turn.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub untagged: bool,
    /// Calls parsed from an action turn's content.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<ActionCall>,
    /// Action content that failed to parse as calls.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub malformed: bool,
}

impl Turn {
    fn plain(kind: TurnKind, content: String) -> Self {
        Self { kind, content, attachments: Vec::new(), untagged: false, calls: Vec::new(), malformed: false }
    }

    pub fn analysis(content: impl Into<String>) -> Self {
        Self::plain(TurnKind::Analysis, content.into())
    }

    pub fn answer(content: impl Into<String>) -> Self {
        Self::plain(TurnKind::Answer, content.into())
    }

    /// Action turn from raw content; parse failures mark it malformed.
    pub fn action(content: impl Into<String>) -> Self {
        let content = content.into();
        let mut turn = Self::plain(TurnKind::Action, content);
        match parse_action_call(&turn.content) {
            Ok(calls) => turn.calls = calls,
            Err(_) => turn.malformed = true,
        }
        turn
    }

    pub fn observation(content: impl Into<String>, attachments: Vec<ImageRef>) -> Self {
        let mut turn = Self::plain(TurnKind::Observation, content.into());
        turn.attachments = attachments;
        turn
    }
}

/// A parsed agent output: ordered turns plus the source text.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub turns: Vec<Turn>,
    #[serde(default)]
    pub raw_text: String,
}

/// Equality is structural: the source text is not compared.
impl PartialEq for Trajectory {
    fn eq(&self, other: &Self) -> bool {
        self.turns == other.turns
    }
}

impl Trajectory {
    pub fn new(turns: Vec<Turn>) -> Self {
        Self { turns, raw_text: String::new() }
    }

    pub fn answer_turn(&self) -> Option<&Turn> {
        self.turns.iter().find(|t| t.kind == TurnKind::Answer)
    }

    pub fn calls(&self) -> impl Iterator<Item = &ActionCall> {
        self.turns.iter().flat_map(|t| t.calls.iter())
    }

    /// Appends turns from a later chunk of output, keeping the answer-last invariant.
    pub fn extend(&mut self, other: Trajectory) -> Result<(), GrammarError> {
        if self.answer_turn().is_some() && !other.turns.is_empty() {
            return Err(GrammarError::AnswerNotLast { offset: self.raw_text.len() });
        }
        self.raw_text.push_str(&other.raw_text);
        self.turns.extend(other.turns);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("unbalanced tags: {tags:?}")]
    UnbalancedTags { tags: Vec<String>, offset: usize },
    #[error("tag <{inner}> at byte {offset} appears inside <{outer}>")]
    NestedTags { outer: String, inner: String, offset: usize },
    #[error("an answer turn must be the last turn (content at byte {offset})")]
    AnswerNotLast { offset: usize },
    #[error("input is not valid UTF-8 (byte {offset})")]
    InvalidUtf8 { offset: usize },
}

const ATTACHMENT_PREFIX: &str = "[image-";

/// Parses tagged text into a [`Trajectory`].
///
/// Whitespace between tags is dropped; other untagged text becomes an
/// analysis turn flagged `untagged`.
pub fn parse_trajectory(text: &str, config: &GrammarConfig) -> Result<Trajectory, GrammarError> {
    let names = config.tag_names();
    let report = check_tag_balance(text, &names);
    if !report.balanced {
        return Err(GrammarError::UnbalancedTags {
            tags: report.unbalanced_tags().map(str::to_string).collect(),
            offset: text.len(),
        });
    }

    let markers: Vec<(String, String, TurnKind)> = config
        .tags
        .iter()
        .map(|(t, k)| (format!("<{t}>"), format!("</{t}>"), *k))
        .collect();

    let mut turns = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let rest = &text[pos..];
        // Nearest tag marker of any kind.
        let next = markers
            .iter()
            .enumerate()
            .flat_map(|(i, (open, close, _))| {
                [
                    rest.find(open.as_str()).map(|at| (at, i, true)),
                    rest.find(close.as_str()).map(|at| (at, i, false)),
                ]
            })
            .flatten()
            .min_by_key(|(at, _, _)| *at);

        let Some((at, idx, is_open)) = next else {
            push_untagged(&mut turns, rest);
            break;
        };
        push_untagged(&mut turns, &rest[..at]);
        let marker_at = pos + at;
        if !is_open {
            return Err(GrammarError::UnbalancedTags {
                tags: vec![config.tags[idx].0.clone()],
                offset: marker_at,
            });
        }

        let (open, close, kind) = &markers[idx];
        let body_start = marker_at + open.len();
        let body = &text[body_start..];
        let close_at = body.find(close.as_str()).ok_or_else(|| GrammarError::UnbalancedTags {
            tags: vec![config.tags[idx].0.clone()],
            offset: marker_at,
        })?;
        let inner = &body[..close_at];
        // Any other marker inside the region is a nesting violation.
        if let Some((inner_at, inner_idx)) = markers
            .iter()
            .enumerate()
            .flat_map(|(i, (o, c, _))| [inner.find(o.as_str()).map(|a| (a, i)), inner.find(c.as_str()).map(|a| (a, i))])
            .flatten()
            .min_by_key(|(a, _)| *a)
        {
            return Err(GrammarError::NestedTags {
                outer: config.tags[idx].0.clone(),
                inner: config.tags[inner_idx].0.clone(),
                offset: body_start + inner_at,
            });
        }

        if turns.last().is_some_and(|t: &Turn| t.kind == TurnKind::Answer) {
            return Err(GrammarError::AnswerNotLast { offset: marker_at });
        }
        turns.push(make_turn(*kind, inner));
        pos = body_start + close_at + close.len();
    }

    if let Some(answer_idx) = turns.iter().position(|t| t.kind == TurnKind::Answer) {
        if answer_idx + 1 != turns.len() {
            return Err(GrammarError::AnswerNotLast { offset: text.len() });
        }
    }

    Ok(Trajectory { turns, raw_text: text.to_string() })
}

/// Byte-level entry point: rejects invalid UTF-8 with a typed error.
pub fn parse_trajectory_bytes(bytes: &[u8], config: &GrammarConfig) -> Result<Trajectory, GrammarError> {
    let text = std::str::from_utf8(bytes).map_err(|e| GrammarError::InvalidUtf8 { offset: e.valid_up_to() })?;
    parse_trajectory(text, config)
}

fn push_untagged(turns: &mut Vec<Turn>, text: &str) {
    if text.trim().is_empty() {
        return;
    }
    let mut turn = Turn::analysis(text);
    turn.untagged = true;
    turns.push(turn);
}

fn make_turn(kind: TurnKind, inner: &str) -> Turn {
    match kind {
        TurnKind::Action => Turn::action(inner),
        TurnKind::Observation => {
            let (attachments, content) = split_attachments(inner);
            Turn::observation(content, attachments)
        }
        TurnKind::Analysis => Turn::analysis(inner),
        TurnKind::Answer => Turn::answer(inner),
    }
}

/// Leading `[image-k]` markers of an observation are its attachments.
fn split_attachments(mut inner: &str) -> (Vec<ImageRef>, &str) {
    let mut refs = Vec::new();
    while let Some(rest) = inner.strip_prefix(ATTACHMENT_PREFIX) {
        let Some(end) = rest.find(']') else { break };
        let Ok(k) = rest[..end].parse::<u32>() else { break };
        if rest[..end].starts_with('+') || (end > 1 && rest.starts_with('0')) {
            break;
        }
        refs.push(ImageRef(k));
        inner = &rest[end + 1..];
    }
    (refs, inner)
}

/// Canonical serialization; re-parses to an equal trajectory.
pub fn render_trajectory(traj: &Trajectory, config: &GrammarConfig) -> String {
    let mut out = String::new();
    for turn in &traj.turns {
        if turn.untagged {
            out.push_str(&turn.content);
            continue;
        }
        let tag = config.tag_for(turn.kind);
        out.push('<');
        out.push_str(tag);
        out.push('>');
        for image in &turn.attachments {
            out.push('[');
            out.push_str(&image.to_string());
            out.push(']');
        }
        out.push_str(&turn.content);
        out.push_str("</");
        out.push_str(tag);
        out.push('>');
    }
    out
}
