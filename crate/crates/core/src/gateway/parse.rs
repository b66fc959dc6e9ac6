//! Turning free-text completions into numeric answers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{AnswerKind, QuestionSpec};
use crate::forecast::Party;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ParseError {
    #[error("no integer in {min}..={max} found in `{raw}`")]
    Unparseable { raw: String, min: i64, max: i64 },
    #[error("question `{0}` is not a likert or multiple-choice item")]
    WrongAnswerKind(String),
}

/// How strictly completions are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strictness {
    /// First in-range integer token wins.
    #[default]
    FirstInRange,
    /// The whole reply (ignoring surrounding punctuation) must be one
    /// in-range integer.
    Exact,
}

fn tokens(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty())
}

/// Scans `raw` for an integer in `[min, max]` under `strictness`.
pub fn parse_in_range(raw: &str, min: i64, max: i64, strictness: Strictness) -> Result<i64, ParseError> {
    let fail = || ParseError::Unparseable {
        raw: raw.to_string(),
        min,
        max,
    };
    match strictness {
        Strictness::FirstInRange => tokens(raw)
            .filter_map(|t| t.parse::<i64>().ok())
            .find(|v| (min..=max).contains(v))
            .ok_or_else(fail),
        Strictness::Exact => {
            let t = raw.trim().trim_matches(|c: char| !c.is_alphanumeric());
            match t.parse::<i64>() {
                Ok(v) if (min..=max).contains(&v) => Ok(v),
                _ => Err(fail()),
            }
        }
    }
}

/// Reads a likert or multiple-choice answer with the default rule.
pub fn parse_likert(raw: &str, spec: &QuestionSpec) -> Result<i64, ParseError> {
    parse_likert_with(raw, spec, Strictness::FirstInRange)
}

pub fn parse_likert_with(raw: &str, spec: &QuestionSpec, strictness: Strictness) -> Result<i64, ParseError> {
    if spec.answer_kind == AnswerKind::BallotChoice {
        return Err(ParseError::WrongAnswerKind(spec.question_id.clone()));
    }
    parse_in_range(raw, spec.scale_min, spec.scale_max, strictness)
}

/// Ballot answer: 1 is the Democratic ticket, 2 the Republican one.
pub fn parse_vote(raw: &str) -> Result<Party, ParseError> {
    parse_vote_with(raw, Strictness::FirstInRange)
}

pub fn parse_vote_with(raw: &str, strictness: Strictness) -> Result<Party, ParseError> {
    match parse_in_range(raw, 1, 2, strictness)? {
        1 => Ok(Party::Democratic),
        _ => Ok(Party::Republican),
    }
}

/// Splits a numbered-list reply into per-item answer texts.
///
/// Lines of the form `3. text`, `3) text` or `3: text` are assigned to item
/// 3. A reply with no enumerators and exactly `items` non-empty lines is
/// read positionally; a single-item reply is passed through whole.
pub fn split_numbered(raw: &str, items: usize) -> Vec<Option<String>> {
    let mut out = vec![None; items];
    if items == 1 {
        out[0] = Some(raw.to_string());
        return out;
    }
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut any_numbered = false;
    for line in &lines {
        let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let rest = &line[digits.len()..];
        let Some(sep) = rest.chars().next() else { continue };
        if !matches!(sep, '.' | ')' | ':') {
            continue;
        }
        let Ok(n) = digits.parse::<usize>() else { continue };
        if n >= 1 && n <= items && out[n - 1].is_none() {
            out[n - 1] = Some(rest[sep.len_utf8()..].trim().to_string());
            any_numbered = true;
        }
    }
    if !any_numbered && lines.len() == items {
        for (slot, line) in out.iter_mut().zip(&lines) {
            *slot = Some(line.to_string());
        }
    }
    out
}
