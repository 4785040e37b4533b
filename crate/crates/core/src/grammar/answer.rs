use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    MultipleChoice,
    Numeric,
}

/// Answer after normalization: an upper-case option letter or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizedAnswer {
    Choice(char),
    Number(f64),
}

impl NormalizedAnswer {
    pub fn kind(&self) -> AnswerKind {
        match self {
            NormalizedAnswer::Choice(_) => AnswerKind::MultipleChoice,
            NormalizedAnswer::Number(_) => AnswerKind::Numeric,
        }
    }
}

impl std::fmt::Display for NormalizedAnswer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormalizedAnswer::Choice(c) => write!(f, "{c}"),
            NormalizedAnswer::Number(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("trajectory has no answer turn")]
    NoAnswerTurn,
    #[error("answer turn has no parsable {0:?} answer")]
    NoParsableAnswer(AnswerKind),
}

pub fn extract_answer(traj: &Trajectory, kind: AnswerKind) -> Result<NormalizedAnswer, AnswerError> {
    let turn = traj.answer_turn().ok_or(AnswerError::NoAnswerTurn)?;
    normalize_answer(&turn.content, kind)
}

/// Normalizes free answer text.
///
/// Multiple choice: the first standalone letter A-F (case-insensitive).
/// Numeric: the first decimal number; surrounding unit words are ignored.
pub fn normalize_answer(text: &str, kind: AnswerKind) -> Result<NormalizedAnswer, AnswerError> {
    let text = text.trim();
    let found = match kind {
        AnswerKind::MultipleChoice => first_option_letter(text).map(NormalizedAnswer::Choice),
        AnswerKind::Numeric => first_number(text).map(NormalizedAnswer::Number),
    };
    found.ok_or(AnswerError::NoParsableAnswer(kind))
}

fn first_option_letter(text: &str) -> Option<char> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|tok| tok.chars().count() == 1)
        .filter_map(|tok| tok.chars().next())
        .map(|c| c.to_ascii_uppercase())
        .find(|c| ('A'..='F').contains(c))
}

fn first_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let prev_is_word = i > 0 && (bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_');
        // `image-0` style identifiers are not numbers.
        let hyphenated = i > 1 && bytes[i - 1] == b'-' && bytes[i - 2].is_ascii_alphanumeric();
        if b.is_ascii_digit() && hyphenated {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            continue;
        }
        if b.is_ascii_digit() && !prev_is_word {
            let negative = i > 0 && bytes[i - 1] == b'-';
            let start = if negative { i - 1 } else { i };
            let mut end = i;
            while end < bytes.len() && bytes[end].is_ascii_digit() {
                end += 1;
            }
            if end + 1 < bytes.len() && bytes[end] == b'.' && bytes[end + 1].is_ascii_digit() {
                end += 1;
                while end < bytes.len() && bytes[end].is_ascii_digit() {
                    end += 1;
                }
            }
            return text[start..end].parse().ok();
        }
        i += 1;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_trajectory, GrammarConfig, Turn};

    fn traj(answer: &str) -> Trajectory {
        Trajectory::new(vec![Turn::analysis("x"), Turn::answer(answer)])
    }

    #[test]
    fn choice_letter() {
        assert_eq!(extract_answer(&traj("B"), AnswerKind::MultipleChoice), Ok(NormalizedAnswer::Choice('B')));
        assert_eq!(normalize_answer(" (c) ", AnswerKind::MultipleChoice), Ok(NormalizedAnswer::Choice('C')));
        assert_eq!(normalize_answer("Option D.", AnswerKind::MultipleChoice), Ok(NormalizedAnswer::Choice('D')));
        assert!(normalize_answer("none", AnswerKind::MultipleChoice).is_err());
        assert!(normalize_answer("G", AnswerKind::MultipleChoice).is_err());
    }

    #[test]
    fn no_answer_turn() {
        let t = Trajectory::new(vec![Turn::analysis("thinking")]);
        assert_eq!(extract_answer(&t, AnswerKind::Numeric), Err(AnswerError::NoAnswerTurn));
    }

    /// Hand-labelled answer strings with the value a reader would extract.
    #[test]
    fn numeric_fixture_corpus() {
        let corpus: &[(&str, f64)] = &[
            ("The answer is 3.5 meters", 3.5),
            ("3.5", 3.5),
            ("about 12 cm", 12.0),
            ("-0.75 m", -0.75),
            ("Distance: 2.0m", 2.0),
            ("It is 4 meters, not 5", 4.0),
            ("roughly 1.25.", 1.25),
            ("there are 3 tables", 3.0),
            ("0.5", 0.5),
            ("height=1.80 m", 1.8),
        ];
        for (text, want) in corpus {
            let t = parse_trajectory(&format!("<ans>{text}</ans>"), &GrammarConfig::default()).unwrap();
            assert_eq!(
                extract_answer(&t, AnswerKind::Numeric),
                Ok(NormalizedAnswer::Number(*want)),
                "{text}"
            );
        }
        assert!(normalize_answer("image-0 shows it", AnswerKind::Numeric).is_err());
        assert!(normalize_answer("unknown", AnswerKind::Numeric).is_err());
    }
}
