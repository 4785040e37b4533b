//! Scripted planning and hint reading shared by the oracle agent and the
//! data teacher. Everything it knows comes from hint text, never from the scene.

use regex::Regex;

use crate::grammar::{ActionCall, ArgValue, NormalizedAnswer};
use crate::image::ImageRef;
use crate::skills::SkillName;
use crate::world::{direction_from_centers, euclidean, option_letter, Dimension, QAItem, TaskType};

/// The skill calls that answer `qa`, all on `image`.
pub fn plan_calls(qa: &QAItem, image: ImageRef) -> Vec<ActionCall> {
    let call = |skill: SkillName, labels: &[String]| {
        ActionCall::new(skill.as_str())
            .arg("img_path", ArgValue::Text(image.to_string()))
            .arg("text_labels", ArgValue::TextList(labels.to_vec()))
    };
    let entities = qa.entities.as_slice();
    match qa.task {
        TaskType::RelDir => vec![call(SkillName::SegmentObjects, entities)],
        TaskType::RelDist | TaskType::AbsDist => vec![call(SkillName::Get3DPoint, entities)],
        TaskType::SizeEst => vec![call(SkillName::Get3DPoint, entities), call(SkillName::EstimateSize, entities)],
        TaskType::Count => vec![call(SkillName::CountObjects, entities)],
    }
}

fn the_list(labels: &[String]) -> String {
    let named: Vec<String> = labels.iter().map(|l| format!("the {l}")).collect();
    match named.as_slice() {
        [] => "the scene".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Opening analysis naming the target entities and the chosen tools.
pub fn plan_analysis(qa: &QAItem) -> String {
    let who = the_list(&qa.entities);
    match qa.task {
        TaskType::RelDir => format!("I need the image positions of {who}; segmenting them gives their centroids."),
        TaskType::RelDist | TaskType::AbsDist => {
            format!("I need the 3D positions of {who} to measure the distance between them.")
        }
        TaskType::SizeEst => format!(
            "I need the depth and the pixel extent of {who}; with the focal length they give the metric size."
        ),
        TaskType::Count => format!("I need to detect every instance of {who} and count them."),
    }
}

/// An answer read off hint text, with the reasoning that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub answer: NormalizedAnswer,
    pub reasoning: String,
}

const NUM: &str = r"(-?[0-9]+(?:\.[0-9]+)?)";

fn capture(text: &str, pattern: &str) -> Option<Vec<f64>> {
    let re = Regex::new(pattern).expect("valid pattern");
    let caps = re.captures(text)?;
    caps.iter().skip(1).map(|m| m?.as_str().parse().ok()).collect()
}

fn centroid(text: &str, label: &str) -> Option<[f64; 2]> {
    let v = capture(text, &format!(r"(?m)^{}: centroid \({NUM}, {NUM}\)", regex::escape(label)))?;
    Some([v[0], v[1]])
}

fn point3d(text: &str, label: &str) -> Option<[f64; 3]> {
    let v = capture(text, &format!(r"(?m)^{}: \[{NUM}, {NUM}, {NUM}\]", regex::escape(label)))?;
    Some([v[0], v[1], v[2]])
}

fn extent(text: &str, label: &str) -> Option<[f64; 2]> {
    let v = capture(
        text,
        &format!(r"(?m)^{}: centroid \({NUM}, {NUM}\), pixel extent {NUM} x {NUM}", regex::escape(label)),
    )?;
    Some([v[2], v[3]])
}

fn focal(text: &str) -> Option<f64> {
    capture(text, &format!(r"focal length {NUM} px")).map(|v| v[0])
}

fn count(text: &str, label: &str) -> Option<usize> {
    let v = capture(text, &format!(r"(?m)^{}: ([0-9]+)(?:,|$)", regex::escape(label)))?;
    Some(v[0] as usize)
}

fn choose(qa: &QAItem, pred: impl Fn(&str) -> bool) -> Option<NormalizedAnswer> {
    qa.options.iter().position(|o| pred(o)).map(|i| NormalizedAnswer::Choice(option_letter(i)))
}

fn nearest_option(qa: &QAItem, value: f64) -> Option<NormalizedAnswer> {
    qa.options
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.trim_end_matches(" m").trim().parse::<f64>().ok().map(|v| (i, (v - value).abs())))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| NormalizedAnswer::Choice(option_letter(i)))
}

/// Reads the answer to `qa` from observation texts, if they contain what it needs.
pub fn derive_answer(qa: &QAItem, observations: &[&str]) -> Option<Derivation> {
    let text = observations.join("\n");
    let e = &qa.entities;
    match qa.task {
        TaskType::RelDir => {
            let (a, b) = (centroid(&text, &e[0])?, centroid(&text, &e[1])?);
            let dir = direction_from_centers(a, b)?;
            let relation = if matches!(dir, "left" | "right") { format!("{dir} of") } else { dir.to_string() };
            Some(Derivation {
                answer: choose(qa, |o| o == dir)?,
                reasoning: format!(
                    "The {} centroid ({}, {}) against the {} centroid ({}, {}) differs most along the dominant axis, so the {} is {relation} the {}.",
                    e[0], a[0], a[1], e[1], b[0], b[1], e[0], e[1]
                ),
            })
        }
        TaskType::RelDist | TaskType::AbsDist => {
            let (a, b) = (point3d(&text, &e[0])?, point3d(&text, &e[1])?);
            let d = euclidean(a, b);
            let answer = if qa.task == TaskType::AbsDist { NormalizedAnswer::Number(d) } else { nearest_option(qa, d)? };
            Some(Derivation {
                answer,
                reasoning: format!(
                    "The {} is at {:?} and the {} at {:?}; their Euclidean distance is {d} m.",
                    e[0], a, e[1], b
                ),
            })
        }
        TaskType::SizeEst => {
            let [_, _, z] = point3d(&text, &e[0])?;
            let f = focal(&text)?;
            let [w, h] = extent(&text, &e[0])?;
            let (word, px) = match qa.dimension? {
                Dimension::Width => ("width", w),
                Dimension::Height => ("height", h),
            };
            let size = px * z / f;
            Some(Derivation {
                answer: NormalizedAnswer::Number(size),
                reasoning: format!(
                    "The {} spans {px} px in {word} at depth {z} m with a focal length of {f} px, so its {word} is {px} * {z} / {f} = {size} m.",
                    e[0]
                ),
            })
        }
        TaskType::Count => {
            let n = count(&text, &e[0])?;
            Some(Derivation {
                answer: choose(qa, |o| o == n.to_string())?,
                reasoning: format!("The detector reports {n} instances of {}.", e[0]),
            })
        }
    }
}

/// Answer chosen without tool evidence: the first option, or 1 for numeric items.
pub fn fallback_answer(qa: &QAItem) -> NormalizedAnswer {
    if qa.options.is_empty() {
        NormalizedAnswer::Number(1.0)
    } else {
        NormalizedAnswer::Choice('A')
    }
}

/// Text placed inside the answer tag.
pub fn answer_text(answer: &NormalizedAnswer) -> String {
    match answer {
        NormalizedAnswer::Choice(c) => c.to_string(),
        NormalizedAnswer::Number(v) => format!("{v}"),
    }
}
