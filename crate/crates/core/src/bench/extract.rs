//! Letter extraction from free-text answers.
//!
//! Rules, tried in order:
//! 1. an explicit "answer is X" or "answer: X" (keyword case-insensitive);
//! 2. a leading "X.", "X)", "X:" or "(X)";
//! 3. standalone A-F tokens anywhere, accepted only if exactly one distinct
//!    letter occurs.
//!
//! Letters are matched upper-case only, so the article "a" never counts.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

/// Bumped whenever the rules change; reports record it.
pub const EXTRACTOR_VERSION: u32 = 1;

fn explicit() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i:answer)\**\s*(?:(?i:is)\s*:?|:|-)\s*\**\s*(?:(?i:option|choice)\s+)?[\(\[]?([A-F])(?:[^A-Za-z0-9'\-]|$)",
        )
        .expect("static regex")
    })
}

fn leading() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*\**\s*(?:\(([A-F])\)|([A-F])[\.\):])").expect("static regex")
    })
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\'' || c == '-' || c == '’'
}

/// Distinct standalone A-F tokens.
fn standalone_letters(text: &str) -> BTreeSet<char> {
    let chars: Vec<char> = text.chars().collect();
    let mut found = BTreeSet::new();
    for (i, &c) in chars.iter().enumerate() {
        if !('A'..='F').contains(&c) {
            continue;
        }
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        if !before.is_some_and(is_token_char) && !after.is_some_and(is_token_char) {
            found.insert(c);
        }
    }
    found
}

pub fn extract_choice(text: &str) -> Option<char> {
    if let Some(c) = explicit().captures(text) {
        return c[1].chars().next();
    }
    if let Some(c) = leading().captures(text) {
        return c.get(1).or_else(|| c.get(2)).and_then(|m| m.as_str().chars().next());
    }
    let letters = standalone_letters(text);
    if letters.len() == 1 {
        letters.into_iter().next()
    } else {
        None
    }
}
