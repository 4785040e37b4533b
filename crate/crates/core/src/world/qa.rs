use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::scene::{normalize_label, SceneObject, SceneSpec};
use crate::grammar::{AnswerKind, NormalizedAnswer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskType {
    RelDir,
    RelDist,
    AbsDist,
    SizeEst,
    Count,
}

impl TaskType {
    pub const ALL: [TaskType; 5] =
        [TaskType::RelDir, TaskType::RelDist, TaskType::AbsDist, TaskType::SizeEst, TaskType::Count];

    pub fn answer_kind(self) -> AnswerKind {
        match self {
            TaskType::RelDir | TaskType::RelDist | TaskType::Count => AnswerKind::MultipleChoice,
            TaskType::AbsDist | TaskType::SizeEst => AnswerKind::Numeric,
        }
    }
}

/// Which of an object's two physical dimensions a size question asks about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Width,
    Height,
}

/// One generated question with its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub scene_id: String,
    pub task: TaskType,
    pub question: String,
    /// Option texts for multiple-choice items, lettered A, B, C, ...
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<String>,
    pub answer: NormalizedAnswer,
    pub kind: AnswerKind,
    /// Scene labels the question is about, in question order.
    pub entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<Dimension>,
}

impl QAItem {
    /// Question followed by lettered options, as shown to an agent.
    pub fn prompt(&self) -> String {
        let mut text = self.question.clone();
        for (i, opt) in self.options.iter().enumerate() {
            text.push_str(&format!("\n{}. {}", option_letter(i), opt));
        }
        text
    }

    pub fn option_text(&self, letter: char) -> Option<&str> {
        let idx = (letter as u8).checked_sub(b'A')? as usize;
        self.options.get(idx).map(String::as_str)
    }
}

pub fn option_letter(index: usize) -> char {
    (b'A' + index as u8) as char
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("scene {scene} cannot support a {task:?} question: {reason}")]
    Underspecified { scene: String, task: TaskType, reason: String },
}

pub const DIRECTIONS: [&str; 4] = ["left", "right", "above", "below"];

/// Direction of `a` relative to `b` by the dominant axis of their box-centre offset.
/// `None` when the two axes tie.
pub fn relative_direction(a: &SceneObject, b: &SceneObject) -> Option<&'static str> {
    direction_from_centers(a.bbox.center(), b.bbox.center())
}

pub fn direction_from_centers(a: [f64; 2], b: [f64; 2]) -> Option<&'static str> {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    if dx.abs() == dy.abs() {
        return None;
    }
    Some(if dx.abs() > dy.abs() {
        if dx < 0.0 {
            "left"
        } else {
            "right"
        }
    } else if dy < 0.0 {
        "above"
    } else {
        "below"
    })
}

pub fn euclidean(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d: [f64; 3] = std::array::from_fn(|i| a[i] - b[i]);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Multiplicative distractors, kept outside the 25% acceptance band.
pub const DISTRACTOR_FACTORS: [f64; 3] = [0.5, 1.5, 2.0];
const MIN_MC_DISTANCE_M: f64 = 0.05;

pub fn format_distance_option(meters: f64) -> String {
    format!("{meters:.3} m")
}

/// Builds a question of the requested type from the scene's ground truth.
pub fn generate_qa(scene: &SceneSpec, task: TaskType, seed: u64) -> Result<QAItem, QaError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let under = |reason: &str| QaError::Underspecified {
        scene: scene.id.clone(),
        task,
        reason: reason.to_string(),
    };
    let unique: Vec<&SceneObject> =
        scene.objects.iter().filter(|o| scene.multiplicity(&o.label) == 1).collect();
    let id = format!("{}-{:?}-{seed}", scene.id, task).to_lowercase();

    let mut item = QAItem {
        id,
        scene_id: scene.id.clone(),
        task,
        question: String::new(),
        options: Vec::new(),
        answer: NormalizedAnswer::Number(0.0),
        kind: task.answer_kind(),
        entities: Vec::new(),
        dimension: None,
    };

    match task {
        TaskType::RelDir => {
            let pairs: Vec<(&SceneObject, &SceneObject, &str)> = ordered_pairs(&unique)
                .filter_map(|(a, b)| relative_direction(a, b).map(|d| (a, b, d)))
                .collect();
            let (a, b, dir) = *pick(&mut rng, &pairs).ok_or_else(|| under("needs two uniquely labelled objects"))?;
            item.question = format!("Where is the {} relative to the {} in the image?", a.label, b.label);
            let mut options: Vec<String> = DIRECTIONS.iter().map(|s| s.to_string()).collect();
            options.shuffle(&mut rng);
            set_choice(&mut item, options, dir);
            item.entities = vec![a.label.clone(), b.label.clone()];
        }
        TaskType::RelDist => {
            let pairs: Vec<(&SceneObject, &SceneObject)> = unordered_pairs(&unique)
                .filter(|(a, b)| euclidean(a.point3d, b.point3d) >= MIN_MC_DISTANCE_M)
                .collect();
            let (a, b) = *pick(&mut rng, &pairs).ok_or_else(|| under("needs two uniquely labelled objects"))?;
            let d = euclidean(a.point3d, b.point3d);
            item.question = format!(
                "Approximately how far apart are the {} and the {} in 3D space?",
                a.label, b.label
            );
            let correct = format_distance_option(d);
            let mut options = vec![correct.clone()];
            options.extend(DISTRACTOR_FACTORS.iter().map(|f| format_distance_option(d * f)));
            options.shuffle(&mut rng);
            set_choice(&mut item, options, &correct);
            item.entities = vec![a.label.clone(), b.label.clone()];
        }
        TaskType::AbsDist => {
            let pairs: Vec<(&SceneObject, &SceneObject)> = unordered_pairs(&unique).collect();
            let (a, b) = *pick(&mut rng, &pairs).ok_or_else(|| under("needs two uniquely labelled objects"))?;
            item.question = format!("What is the distance between the {} and the {} in meters?", a.label, b.label);
            item.answer = NormalizedAnswer::Number(euclidean(a.point3d, b.point3d));
            item.entities = vec![a.label.clone(), b.label.clone()];
        }
        TaskType::SizeEst => {
            let obj = *pick(&mut rng, &unique).ok_or_else(|| under("needs a uniquely labelled object"))?;
            let dim = if rng.random::<bool>() { Dimension::Height } else { Dimension::Width };
            let (word, value) = match dim {
                Dimension::Width => ("width", obj.size_m[0]),
                Dimension::Height => ("height", obj.size_m[1]),
            };
            item.question = format!("What is the {word} of the {} in meters?", obj.label);
            item.answer = NormalizedAnswer::Number(value);
            item.entities = vec![obj.label.clone()];
            item.dimension = Some(dim);
        }
        TaskType::Count => {
            let mut labels: Vec<String> = scene.objects.iter().map(|o| normalize_label(&o.label)).collect();
            labels.sort();
            labels.dedup();
            let label = pick(&mut rng, &labels).ok_or_else(|| under("scene has no objects"))?.clone();
            let n = scene.multiplicity(&label);
            item.question = format!("How many instances of {label} are in the image?");
            let mut options = vec![n.to_string()];
            options.extend(count_distractors(n).into_iter().map(|c| c.to_string()));
            options.shuffle(&mut rng);
            set_choice(&mut item, options, &n.to_string());
            item.entities = vec![label];
        }
    }
    Ok(item)
}

/// Three distinct counts other than `n`: scaled by the distractor factors, then n+1, n+2, ...
pub fn count_distractors(n: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let scaled = DISTRACTOR_FACTORS.iter().map(|f| (n as f64 * f).round() as usize);
    for c in scaled.chain((1..).map(|k| n + k)) {
        if c != n && !out.contains(&c) {
            out.push(c);
        }
        if out.len() == 3 {
            break;
        }
    }
    out
}

fn set_choice(item: &mut QAItem, options: Vec<String>, correct: &str) {
    let idx = options.iter().position(|o| o == correct).expect("correct option present");
    item.answer = NormalizedAnswer::Choice(option_letter(idx));
    item.options = options;
}

fn pick<'a, T>(rng: &mut impl Rng, items: &'a [T]) -> Option<&'a T> {
    (!items.is_empty()).then(|| &items[rng.random_range(0..items.len())])
}

fn ordered_pairs<'a, 'b>(
    objs: &'b [&'a SceneObject],
) -> impl Iterator<Item = (&'a SceneObject, &'a SceneObject)> + 'b {
    objs.iter()
        .flat_map(move |a| objs.iter().map(move |b| (*a, *b)))
        .filter(|(a, b)| a.instance_id != b.instance_id)
}

fn unordered_pairs<'a, 'b>(
    objs: &'b [&'a SceneObject],
) -> impl Iterator<Item = (&'a SceneObject, &'a SceneObject)> + 'b {
    objs.iter()
        .enumerate()
        .flat_map(move |(i, a)| objs[i + 1..].iter().map(move |b| (*a, *b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::BBox;
    use crate::world::{generate_scene, SceneParams};

    fn obj(label: &str, bbox: [f64; 4], p: [f64; 3], id: u32) -> SceneObject {
        SceneObject { label: label.into(), bbox: BBox::from(bbox), mean_depth: 0.5, size_m: [1.0, 2.0], point3d: p, instance_id: id }
    }

    fn scene_with(objects: Vec<SceneObject>) -> SceneSpec {
        let mut s = generate_scene(0, &SceneParams::new(0, 640, 480)).unwrap();
        s.objects = objects;
        s
    }

    #[test]
    fn absolute_distance_is_euclidean() {
        let s = scene_with(vec![
            obj("cup", [0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 2.0], 0),
            obj("book", [20.0, 0.0, 30.0, 10.0], [0.0, 0.0, 4.0], 1),
        ]);
        let q = generate_qa(&s, TaskType::AbsDist, 1).unwrap();
        assert_eq!(q.answer, NormalizedAnswer::Number(2.0));
        assert_eq!(q.kind, AnswerKind::Numeric);
    }

    #[test]
    fn direction_by_dominant_axis() {
        let a = obj("a", [50.0, 50.0, 150.0, 150.0], [0.0; 3], 0);
        let b = obj("b", [250.0, 50.0, 350.0, 150.0], [0.0; 3], 1);
        assert_eq!(relative_direction(&a, &b), Some("left"));
        assert_eq!(relative_direction(&b, &a), Some("right"));
        assert_eq!(direction_from_centers([0.0, 0.0], [0.0, 10.0]), Some("above"));
        assert_eq!(direction_from_centers([0.0, 10.0], [0.0, 0.0]), Some("below"));
        assert_eq!(direction_from_centers([10.0, 10.0], [0.0, 0.0]), None);

        let s = scene_with(vec![a, b]);
        let q = generate_qa(&s, TaskType::RelDir, 5).unwrap();
        let NormalizedAnswer::Choice(letter) = q.answer else { panic!() };
        let expected = if q.entities[0] == "a" { "left" } else { "right" };
        assert_eq!(q.option_text(letter), Some(expected));
        assert_eq!(q.options.len(), 4);
    }

    #[test]
    fn relational_tasks_need_two_objects() {
        let s = scene_with(vec![obj("cup", [0.0, 0.0, 10.0, 10.0], [0.0, 0.0, 2.0], 0)]);
        assert!(matches!(generate_qa(&s, TaskType::RelDist, 0), Err(QaError::Underspecified { .. })));
        assert!(matches!(generate_qa(&s, TaskType::RelDir, 0), Err(QaError::Underspecified { .. })));
        assert!(generate_qa(&s, TaskType::SizeEst, 0).is_ok());
    }

    #[test]
    fn count_options_are_distinct() {
        for n in 1..10 {
            let d = count_distractors(n);
            assert_eq!(d.len(), 3);
            assert!(!d.contains(&n));
        }
        assert_eq!(count_distractors(2), vec![1, 3, 4]);
        assert_eq!(count_distractors(1), vec![2, 3, 4]);
    }

    #[test]
    fn numeric_distractors_fall_outside_acceptance_band() {
        for f in DISTRACTOR_FACTORS {
            assert!(!(0.75..=1.25).contains(&f));
        }
    }

    #[test]
    fn seeded_reproducibility() {
        let s = generate_scene(21, &SceneParams::new(5, 320, 240)).unwrap();
        for task in TaskType::ALL {
            assert_eq!(generate_qa(&s, task, 3), generate_qa(&s, task, 3));
        }
    }
}
