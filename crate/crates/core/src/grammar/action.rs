//! The call syntax used inside `<action>` blocks, e.g.
//! `ZoomCrop(img_path="image-0", box=[100, 200, 300, 400])`.
//!
//! Literals are double-quoted strings, decimal numbers and homogeneous
//! lists of either. Several calls may follow each other, separated by
//! whitespace or `;`.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Argument value of a tool call.
///
/// An empty list literal parses as `TextList(vec![])` and is accepted
/// wherever either list type is expected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Text(String),
    Number(f64),
    TextList(Vec<String>),
    NumberList(Vec<f64>),
}

impl ArgValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ArgValue::Text(_) => "text",
            ArgValue::Number(_) => "number",
            ArgValue::TextList(_) => "list of text",
            ArgValue::NumberList(_) => "list of number",
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            ArgValue::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            ArgValue::Number(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_text_list(&self) -> Option<&[String]> {
        match self {
            ArgValue::TextList(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_number_list(&self) -> Option<&[f64]> {
        match self {
            ArgValue::NumberList(v) => Some(v),
            ArgValue::TextList(v) if v.is_empty() => Some(&[]),
            _ => None,
        }
    }
}

impl fmt::Display for ArgValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArgValue::Text(s) => write_string(f, s),
            ArgValue::Number(n) => write!(f, "{n}"),
            ArgValue::TextList(items) => {
                f.write_str("[")?;
                for (i, s) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write_string(f, s)?;
                }
                f.write_str("]")
            }
            ArgValue::NumberList(items) => {
                f.write_str("[")?;
                for (i, n) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{n}")?;
                }
                f.write_str("]")
            }
        }
    }
}

fn write_string(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for ch in s.chars() {
        match ch {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// One structured tool invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCall {
    pub skill_name: String,
    pub args: IndexMap<String, ArgValue>,
}

impl ActionCall {
    pub fn new(skill_name: impl Into<String>) -> Self {
        Self {
            skill_name: skill_name.into(),
            args: IndexMap::new(),
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: ArgValue) -> Self {
        self.args.insert(key.into(), value);
        self
    }
}

impl fmt::Display for ActionCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.skill_name)?;
        for (i, (k, v)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str(")")
    }
}

/// Renders calls in canonical form, one per line.
pub fn render_calls(calls: &[ActionCall]) -> String {
    calls
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at byte {offset}: {kind}")]
pub struct SyntaxError {
    pub offset: usize,
    pub kind: SyntaxErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxErrorKind {
    #[error("expected {0}")]
    Expected(&'static str),
    #[error("unterminated string literal")]
    UnterminatedString,
    #[error("invalid escape sequence")]
    InvalidEscape,
    #[error("invalid number literal")]
    InvalidNumber,
    #[error("trailing comma")]
    TrailingComma,
    #[error("list mixes text and numbers")]
    HeterogeneousList,
    #[error("duplicate argument `{0}`")]
    DuplicateArg(String),
    #[error("no call found")]
    Empty,
}

/// Parses the content of an action turn into its calls, in order.
pub fn parse_action_call(text: &str) -> Result<Vec<ActionCall>, SyntaxError> {
    let mut p = Parser { src: text.as_bytes(), text, pos: 0 };
    let mut calls = Vec::new();
    loop {
        p.skip_separators();
        if p.at_end() {
            break;
        }
        calls.push(p.call()?);
    }
    if calls.is_empty() {
        return Err(p.err(SyntaxErrorKind::Empty));
    }
    Ok(calls)
}

struct Parser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, kind: SyntaxErrorKind) -> SyntaxError {
        SyntaxError { offset: self.pos, kind }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace() || b == b';') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, byte: u8, what: &'static str) -> Result<(), SyntaxError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(SyntaxErrorKind::Expected(what)))
        }
    }

    fn ident(&mut self, what: &'static str) -> Result<&'a str, SyntaxError> {
        let start = self.pos;
        match self.peek() {
            Some(b) if b.is_ascii_alphabetic() || b == b'_' => self.pos += 1,
            _ => return Err(self.err(SyntaxErrorKind::Expected(what))),
        }
        while matches!(self.peek(), Some(b) if b.is_ascii_alphanumeric() || b == b'_') {
            self.pos += 1;
        }
        Ok(&self.text[start..self.pos])
    }

    fn call(&mut self) -> Result<ActionCall, SyntaxError> {
        let name = self.ident("skill name")?;
        self.skip_ws();
        self.expect(b'(', "`(`")?;
        let mut args = IndexMap::new();
        self.skip_ws();
        if self.peek() == Some(b')') {
            self.pos += 1;
            return Ok(ActionCall { skill_name: name.to_string(), args });
        }
        loop {
            self.skip_ws();
            let key_pos = self.pos;
            if self.peek() == Some(b')') && !args.is_empty() {
                return Err(self.err(SyntaxErrorKind::TrailingComma));
            }
            let key = self.ident("argument name or `)`")?;
            self.skip_ws();
            self.expect(b'=', "`=`")?;
            self.skip_ws();
            let value = self.value()?;
            if args.insert(key.to_string(), value).is_some() {
                return Err(SyntaxError {
                    offset: key_pos,
                    kind: SyntaxErrorKind::DuplicateArg(key.to_string()),
                });
            }
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(ActionCall { skill_name: name.to_string(), args });
                }
                _ => return Err(self.err(SyntaxErrorKind::Expected("`,` or `)`"))),
            }
        }
    }

    fn value(&mut self) -> Result<ArgValue, SyntaxError> {
        match self.peek() {
            Some(b'"') => Ok(ArgValue::Text(self.string()?)),
            Some(b'[') => self.list(),
            Some(b) if b == b'-' || b == b'+' || b == b'.' || b.is_ascii_digit() => {
                Ok(ArgValue::Number(self.number()?))
            }
            _ => Err(self.err(SyntaxErrorKind::Expected("a string, number or list"))),
        }
    }

    fn string(&mut self) -> Result<String, SyntaxError> {
        let open = self.pos;
        self.pos += 1;
        let mut out = String::new();
        loop {
            let rest = &self.text[self.pos..];
            let Some(ch) = rest.chars().next() else {
                return Err(SyntaxError { offset: open, kind: SyntaxErrorKind::UnterminatedString });
            };
            match ch {
                '"' => {
                    self.pos += 1;
                    return Ok(out);
                }
                '\\' => {
                    let esc = rest[1..].chars().next();
                    let decoded = match esc {
                        Some('"') => '"',
                        Some('\\') => '\\',
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('r') => '\r',
                        None => {
                            return Err(SyntaxError {
                                offset: open,
                                kind: SyntaxErrorKind::UnterminatedString,
                            })
                        }
                        Some(_) => return Err(self.err(SyntaxErrorKind::InvalidEscape)),
                    };
                    out.push(decoded);
                    self.pos += 2;
                }
                c => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }

    fn number(&mut self) -> Result<f64, SyntaxError> {
        let start = self.pos;
        if matches!(self.peek(), Some(b'-' | b'+')) {
            self.pos += 1;
        }
        let mut digits = 0;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
            digits += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
                digits += 1;
            }
        }
        if digits > 0 && matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'-' | b'+')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == exp_start {
                self.pos = save;
            }
        }
        let literal = &self.text[start..self.pos];
        match literal.parse::<f64>() {
            Ok(v) if digits > 0 && v.is_finite() => Ok(v),
            _ => Err(SyntaxError { offset: start, kind: SyntaxErrorKind::InvalidNumber }),
        }
    }

    fn list(&mut self) -> Result<ArgValue, SyntaxError> {
        self.pos += 1;
        let mut texts = Vec::new();
        let mut numbers = Vec::new();
        self.skip_ws();
        if self.peek() == Some(b']') {
            self.pos += 1;
            return Ok(ArgValue::TextList(texts));
        }
        loop {
            self.skip_ws();
            let item_pos = self.pos;
            match self.peek() {
                Some(b']') => return Err(self.err(SyntaxErrorKind::TrailingComma)),
                Some(b'"') => {
                    let s = self.string()?;
                    if !numbers.is_empty() {
                        return Err(SyntaxError { offset: item_pos, kind: SyntaxErrorKind::HeterogeneousList });
                    }
                    texts.push(s);
                }
                Some(b) if b == b'-' || b == b'+' || b == b'.' || b.is_ascii_digit() => {
                    let n = self.number()?;
                    if !texts.is_empty() {
                        return Err(SyntaxError { offset: item_pos, kind: SyntaxErrorKind::HeterogeneousList });
                    }
                    numbers.push(n);
                }
                _ => return Err(self.err(SyntaxErrorKind::Expected("a string or number list item"))),
            }
            self.skip_ws();
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b']') => {
                    self.pos += 1;
                    return Ok(if numbers.is_empty() {
                        ArgValue::TextList(texts)
                    } else {
                        ArgValue::NumberList(numbers)
                    });
                }
                _ => return Err(self.err(SyntaxErrorKind::Expected("`,` or `]`"))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoom_crop_with_box() {
        let calls = parse_action_call(r#"ZoomCrop(img_path="image-0", box=[100, 200, 300, 400])"#).unwrap();
        assert_eq!(calls.len(), 1);
        let c = &calls[0];
        assert_eq!(c.skill_name, "ZoomCrop");
        assert_eq!(c.args["img_path"], ArgValue::Text("image-0".into()));
        assert_eq!(c.args["box"], ArgValue::NumberList(vec![100.0, 200.0, 300.0, 400.0]));
    }

    #[test]
    fn estimate_size_with_threshold() {
        let calls =
            parse_action_call(r#"EstimateSize(img_path="image-0", text_labels=["a person"], threshold=0.1)"#)
                .unwrap();
        assert_eq!(calls[0].args.len(), 3);
        assert_eq!(calls[0].args["threshold"], ArgValue::Number(0.1));
        assert_eq!(calls[0].args["text_labels"], ArgValue::TextList(vec!["a person".into()]));
    }

    #[test]
    fn unclosed_paren_reports_end_offset() {
        let err = parse_action_call("Foo(").unwrap_err();
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn error_cases() {
        let e = parse_action_call(r#"Foo(a="x)"#).unwrap_err();
        assert_eq!(e.kind, SyntaxErrorKind::UnterminatedString);
        assert_eq!(e.offset, 6);

        let e = parse_action_call(r#"Foo(a=1,)"#).unwrap_err();
        assert_eq!(e.kind, SyntaxErrorKind::TrailingComma);

        let e = parse_action_call(r#"Foo(a=[1,])"#).unwrap_err();
        assert_eq!(e.kind, SyntaxErrorKind::TrailingComma);

        let e = parse_action_call(r#"Foo(a=[1, "x"])"#).unwrap_err();
        assert_eq!(e.kind, SyntaxErrorKind::HeterogeneousList);
        assert_eq!(e.offset, 10);

        let e = parse_action_call(r#"Foo(a=1, a=2)"#).unwrap_err();
        assert_eq!(e.kind, SyntaxErrorKind::DuplicateArg("a".into()));

        assert_eq!(parse_action_call("  ").unwrap_err().kind, SyntaxErrorKind::Empty);
        assert!(parse_action_call("Foo(a=true)").is_err());
        assert!(parse_action_call("Foo(a=Bar())").is_err());
    }

    #[test]
    fn several_calls_in_order() {
        let calls = parse_action_call(
            "Get3DPoint(img_path=\"image-0\", text_labels=[\"cup\"])\nEstimateSize(img_path=\"image-0\", text_labels=[\"cup\"]);",
        )
        .unwrap();
        let names: Vec<_> = calls.iter().map(|c| c.skill_name.as_str()).collect();
        assert_eq!(names, ["Get3DPoint", "EstimateSize"]);
    }

    #[test]
    fn numbers_and_escapes() {
        let calls = parse_action_call(r#"F(a=-1.5e2, b="q\"\\", c=[], d=.5)"#).unwrap();
        let a = &calls[0].args;
        assert_eq!(a["a"], ArgValue::Number(-150.0));
        assert_eq!(a["b"], ArgValue::Text("q\"\\".into()));
        assert_eq!(a["c"], ArgValue::TextList(vec![]));
        assert_eq!(a["d"], ArgValue::Number(0.5));
        assert_eq!(parse_action_call(&render_calls(&calls)).unwrap(), calls);
    }

    #[test]
    fn render_is_canonical() {
        let call = ActionCall::new("CountObjects")
            .arg("img_path", ArgValue::Text("image-0".into()))
            .arg("text_labels", ArgValue::TextList(vec!["table".into()]));
        assert_eq!(call.to_string(), r#"CountObjects(img_path="image-0", text_labels=["table"])"#);
    }
}
