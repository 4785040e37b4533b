//! Seeded random inputs for property checks and fuzzing: well-formed
//! trajectories, tag soups with a known balance, and reward groups.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::grammar::{render_calls, ActionCall, ArgValue, Trajectory, Turn, DEFAULT_TAGS};
use crate::image::ImageRef;
use crate::skills::SkillName;

const WORDS: [&str; 16] = [
    "the", "chair", "is", "left", "of", "table", "3.5", "meters", "image-2", "(x,", "y)", "->", "[1, 2]", "\"q\"", "a/b",
    "ok.",
];
const SEPARATORS: [&str; 4] = [" ", " ", "\n", "  "];
const KEYS: [&str; 6] = ["img_path", "text_labels", "threshold", "box", "center", "zoom_factor"];
const STRING_CHARS: [char; 10] = ['a', 'z', ' ', '"', '\\', '\n', '\t', '-', '9', 'é'];

/// Free text without `<`, so it can never contain a tag marker.
pub fn random_text<R: Rng + ?Sized>(rng: &mut R, max_words: usize) -> String {
    let n = rng.random_range(0..=max_words);
    let mut out = String::new();
    for i in 0..n {
        if i > 0 {
            out.push_str(SEPARATORS.choose(rng).expect("non-empty"));
        }
        out.push_str(WORDS.choose(rng).expect("non-empty"));
    }
    out
}

fn random_string<R: Rng + ?Sized>(rng: &mut R) -> String {
    (0..rng.random_range(0..8)).map(|_| *STRING_CHARS.choose(rng).expect("non-empty")).collect()
}

/// A finite number whose shortest decimal form is exact.
pub fn random_number<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    match rng.random_range(0..3) {
        0 => f64::from(rng.random_range(-1000..=1000)),
        1 => f64::from(rng.random_range(-100_000..=100_000)) / 100.0,
        _ => rng.random_range(-1e6..1e6),
    }
}

fn random_value<R: Rng + ?Sized>(rng: &mut R) -> ArgValue {
    match rng.random_range(0..4) {
        0 => ArgValue::Text(random_string(rng)),
        1 => ArgValue::Number(random_number(rng)),
        2 => ArgValue::TextList((0..rng.random_range(0..4)).map(|_| random_string(rng)).collect()),
        _ => ArgValue::NumberList((0..rng.random_range(1..5)).map(|_| random_number(rng)).collect()),
    }
}

/// A call with distinct argument names; the skill name may be unknown.
pub fn random_call<R: Rng + ?Sized>(rng: &mut R) -> ActionCall {
    let name = if rng.random_bool(0.8) {
        SkillName::ALL.choose(rng).expect("non-empty").as_str().to_string()
    } else {
        format!("Tool_{}", rng.random_range(0..100))
    };
    let mut call = ActionCall::new(name);
    let n = rng.random_range(0..=KEYS.len());
    for key in KEYS.choose_multiple(rng, n) {
        call = call.arg(*key, random_value(rng));
    }
    call
}

/// A tagged trajectory whose canonical rendering re-parses to itself.
pub fn random_trajectory<R: Rng + ?Sized>(rng: &mut R) -> Trajectory {
    let n = rng.random_range(0..8);
    let mut turns = Vec::with_capacity(n + 1);
    for _ in 0..n {
        let turn = match rng.random_range(0..3) {
            0 => Turn::analysis(random_text(rng, 12)),
            1 => {
                let calls: Vec<ActionCall> = (0..rng.random_range(1..4)).map(|_| random_call(rng)).collect();
                Turn::action(render_calls(&calls))
            }
            _ => {
                let refs = (0..rng.random_range(0..3)).map(|_| ImageRef(rng.random_range(0..20))).collect();
                Turn::observation(random_text(rng, 12), refs)
            }
        };
        turns.push(turn);
    }
    if rng.random_bool(0.7) {
        turns.push(Turn::answer(random_text(rng, 4)));
    }
    Trajectory::new(turns)
}

/// Text made of tag markers and filler, with the expected balance verdict
/// computed from the generator's own open and close counts. Tokens are
/// space-separated so marker fragments never join into a marker.
#[derive(Debug, Clone)]
pub struct TagSoup {
    pub text: String,
    pub balanced: bool,
}

pub fn random_tag_soup<R: Rng + ?Sized>(rng: &mut R) -> TagSoup {
    let mut counts = [[0usize; 2]; DEFAULT_TAGS.len()];
    let mut text = String::new();
    let force_balanced = rng.random_bool(0.5);
    let n = rng.random_range(0..12);
    for i in 0..n {
        if i > 0 {
            text.push(' ');
        }
        match rng.random_range(0..5) {
            0 => text.push_str(&random_text(rng, 3)),
            1 => text.push_str(["<", ">", "</", "<analysis>", "<ans", "/ans>"].choose(rng).expect("non-empty")),
            _ => {
                let t = rng.random_range(0..DEFAULT_TAGS.len());
                if force_balanced {
                    let tag = DEFAULT_TAGS[t];
                    text.push_str(&format!("<{tag}>{}</{tag}>", random_text(rng, 3)));
                    counts[t][0] += 1;
                    counts[t][1] += 1;
                } else {
                    let close = rng.random_bool(0.5);
                    text.push_str(&if close { format!("</{}>", DEFAULT_TAGS[t]) } else { format!("<{}>", DEFAULT_TAGS[t]) });
                    counts[t][usize::from(close)] += 1;
                }
            }
        }
    }
    TagSoup { text, balanced: counts.iter().all(|[o, c]| o == c) }
}

/// A group of `g` rewards drawn from the discrete values a trajectory can
/// earn, with at least two distinct values.
pub fn random_reward_group<R: Rng + ?Sized>(rng: &mut R, g: usize) -> Vec<f64> {
    loop {
        let group: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.6)).collect();
        if group.iter().any(|v| *v != group[0]) {
            return group;
        }
    }
}
