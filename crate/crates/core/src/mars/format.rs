use std::fmt;

use serde::{Deserialize, Serialize};

pub const THINK_OPEN_TAG: &str = "<think>";
pub const THINK_CLOSE_TAG: &str = "</think>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThinkingMode {
    Fast,
    Slow,
}

impl fmt::Display for ThinkingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThinkingMode::Fast => "fast",
            ThinkingMode::Slow => "slow",
        })
    }
}

/// What the format validator should demand of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedMode {
    Fast,
    Slow,
    /// Either a bare answer or a single well-formed leading think block.
    Any,
}

impl std::str::FromStr for ExpectedMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fast" => Ok(ExpectedMode::Fast),
            "slow" => Ok(ExpectedMode::Slow),
            "any" => Ok(ExpectedMode::Any),
            other => Err(format!("unknown mode `{other}` (fast|slow|any)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThinkTags {
    pub opens: usize,
    pub closes: usize,
    /// Tags are properly nested and never close before opening.
    pub balanced: bool,
    /// The trimmed text starts with an opening tag.
    pub leading: bool,
}

pub fn scan_think_tags(text: &str) -> ThinkTags {
    let mut opens = 0;
    let mut closes = 0;
    let mut depth: i64 = 0;
    let mut balanced = true;
    let mut rest = text;
    while let Some(i) = rest.find('<') {
        rest = &rest[i..];
        if rest.starts_with(THINK_OPEN_TAG) {
            opens += 1;
            depth += 1;
            if depth > 1 {
                balanced = false;
            }
            rest = &rest[THINK_OPEN_TAG.len()..];
        } else if rest.starts_with(THINK_CLOSE_TAG) {
            closes += 1;
            depth -= 1;
            if depth < 0 {
                balanced = false;
            }
            rest = &rest[THINK_CLOSE_TAG.len()..];
        } else {
            rest = &rest[1..];
        }
    }
    ThinkTags {
        opens,
        closes,
        balanced: balanced && depth == 0,
        leading: text.trim_start().starts_with(THINK_OPEN_TAG),
    }
}

/// Splits `<think>reasoning</think>summary` into its parts, if the text
/// is exactly one leading block followed by a summary.
pub fn split_think_block(text: &str) -> Option<(&str, &str)> {
    let tags = scan_think_tags(text);
    if tags.opens != 1 || tags.closes != 1 || !tags.balanced || !tags.leading {
        return None;
    }
    let body = text.trim_start().strip_prefix(THINK_OPEN_TAG)?;
    let close = body.find(THINK_CLOSE_TAG)?;
    Some((&body[..close], &body[close + THINK_CLOSE_TAG.len()..]))
}

/// `0.0` when the response satisfies `mode`, `-1.0` otherwise.
pub fn validate_format(response: &str, mode: ExpectedMode) -> f64 {
    let tags = scan_think_tags(response);
    let single_block = split_think_block(response).is_some();
    let ok = match mode {
        ExpectedMode::Slow => single_block,
        ExpectedMode::Fast => tags.opens == 0 && tags.closes == 0,
        ExpectedMode::Any => single_block || (tags.opens == 0 && tags.closes == 0),
    };
    if ok {
        0.0
    } else {
        -1.0
    }
}
