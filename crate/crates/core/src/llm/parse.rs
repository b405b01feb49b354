//! Strict line-oriented parsing of enumerated model responses.
//!
//! Blank lines are ignored and a single leading heading line ending in `:`
//! is tolerated. Any other line that does not fit the expected shape is an
//! error naming that line. Item text is trimmed; terminal periods are kept.

use std::ops::RangeInclusive;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefixStyle {
    /// `1. item`
    Numbered,
    /// `Version1: item`
    Versioned,
    /// `Group1: name` followed by numbered members.
    Grouped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedGroup {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Items(Vec<String>),
    Groups(Vec<ParsedGroup>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}{}", if .content.is_empty() { String::new() } else { format!(" (`{}`)", .content) })]
pub struct ParseError {
    /// 1-based line number in the raw response; 0 when not line specific.
    pub line: usize,
    pub content: String,
    pub reason: String,
}

static NUMBERED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d+)\s*[.)]\s*(\S.*?)\s*$").unwrap());
static VERSIONED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^version\s*(\d+)\s*:\s*(\S.*?)\s*$").unwrap());
static GROUP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^group\s*(\d+)\s*:\s*(\S.*?)\s*$").unwrap());

fn fail(line: usize, content: &str, reason: impl Into<String>) -> ParseError {
    ParseError {
        line,
        content: content.to_owned(),
        reason: reason.into(),
    }
}

fn expect_number(captured: &str, expected: usize, line: usize, content: &str) -> Result<(), ParseError> {
    match captured.parse::<usize>() {
        Ok(n) if n == expected => Ok(()),
        _ => Err(fail(line, content, format!("expected number {expected}"))),
    }
}

fn check_count(found: usize, expected: &RangeInclusive<usize>, what: &str, last_line: usize) -> Result<(), ParseError> {
    if expected.contains(&found) {
        Ok(())
    } else {
        Err(fail(
            last_line,
            "",
            format!(
                "expected {}..={} {what}, found {found}",
                expected.start(),
                expected.end()
            ),
        ))
    }
}

pub fn parse_enumerated(
    raw: &str,
    expected: RangeInclusive<usize>,
    style: PrefixStyle,
) -> Result<Parsed, ParseError> {
    let lines: Vec<(usize, &str)> = raw
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    if lines.is_empty() {
        return Err(fail(0, "", "response is empty"));
    }
    let item_pattern: &Regex = match style {
        PrefixStyle::Numbered => &NUMBERED,
        PrefixStyle::Versioned => &VERSIONED,
        PrefixStyle::Grouped => &GROUP,
    };
    let mut body = &lines[..];
    if let Some(&(_, first)) = body.first() {
        if first.ends_with(':') && !item_pattern.is_match(first) && body.len() > 1 {
            body = &body[1..];
        }
    }
    let last_line = lines.last().map_or(0, |(n, _)| *n);

    match style {
        PrefixStyle::Numbered | PrefixStyle::Versioned => {
            let mut items = Vec::new();
            for &(n, line) in body {
                let caps = item_pattern
                    .captures(line)
                    .ok_or_else(|| fail(n, line, "not an enumerated item"))?;
                expect_number(&caps[1], items.len() + 1, n, line)?;
                items.push(caps[2].to_owned());
            }
            check_count(items.len(), &expected, "items", last_line)?;
            Ok(Parsed::Items(items))
        }
        PrefixStyle::Grouped => {
            let mut groups: Vec<ParsedGroup> = Vec::new();
            let mut group_lines = Vec::new();
            for &(n, line) in body {
                if let Some(caps) = GROUP.captures(line) {
                    expect_number(&caps[1], groups.len() + 1, n, line)?;
                    groups.push(ParsedGroup {
                        name: caps[2].to_owned(),
                        members: Vec::new(),
                    });
                    group_lines.push((n, line));
                } else if let Some(caps) = NUMBERED.captures(line) {
                    let group = groups
                        .last_mut()
                        .ok_or_else(|| fail(n, line, "item before any group heading"))?;
                    expect_number(&caps[1], group.members.len() + 1, n, line)?;
                    group.members.push(caps[2].to_owned());
                } else {
                    return Err(fail(n, line, "neither a group heading nor a numbered item"));
                }
            }
            if let Some((g, &(n, line))) = groups
                .iter()
                .zip(&group_lines)
                .find(|(g, _)| g.members.is_empty())
            {
                return Err(fail(n, line, format!("group `{}` has no members", g.name)));
            }
            check_count(groups.len(), &expected, "groups", last_line)?;
            Ok(Parsed::Groups(groups))
        }
    }
}
