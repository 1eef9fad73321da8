//! Deterministic Unicode helpers shared by the cleaning rules.

use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Removes every combining mark after canonical decomposition, then recomposes.
///
/// `"ọmọdé"` becomes `"omode"`. This is the input transform of an accent
/// restoration model.
pub fn strip_diacritics(text: &str) -> String {
    text.nfd().filter(|c| !is_combining_mark(*c)).nfc().collect()
}

/// Multiset of maximal ASCII digit runs, sorted so two bags compare with `==`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NumberBag(Vec<String>);

impl NumberBag {
    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Extracts digit runs. Compatibility digits (fullwidth, superscript) are
/// NFKC-folded first so `"３"` and `"3"` agree.
pub fn extract_numbers(text: &str) -> NumberBag {
    let folded: String = if text.is_ascii() { text.to_string() } else { text.nfkc().collect() };
    let mut runs: Vec<String> = folded
        .split(|c: char| !c.is_ascii_digit())
        .filter(|run| !run.is_empty())
        .map(str::to_string)
        .collect();
    runs.sort_unstable();
    NumberBag(runs)
}

/// Outermost balanced parenthetical span; both offsets are byte indices and
/// `end` points at the closing `)` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParenSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParenProfile {
    pub open_count: usize,
    pub close_count: usize,
    pub spans: Vec<ParenSpan>,
}

/// Counts parentheses and records outermost balanced spans in one pass.
/// A `)` with no pending `(` is counted but ignored for matching.
pub fn paren_profile(text: &str) -> ParenProfile {
    let mut profile = ParenProfile::default();
    let mut stack: Vec<usize> = Vec::new();
    for (i, c) in text.char_indices() {
        match c {
            '(' => {
                profile.open_count += 1;
                stack.push(i);
            }
            ')' => {
                profile.close_count += 1;
                if let Some(start) = stack.pop() {
                    if stack.is_empty() {
                        profile.spans.push(ParenSpan { start, end: i });
                    }
                }
            }
            _ => {}
        }
    }
    profile
}

/// Deletes the balanced spans of `text` and collapses the whitespace left behind.
pub fn remove_paren_spans(text: &str) -> String {
    let profile = paren_profile(text);
    if profile.spans.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut cursor = 0;
    for span in &profile.spans {
        out.push_str(&text[cursor..span.start]);
        cursor = span.end + 1;
    }
    out.push_str(&text[cursor..]);
    collapse_whitespace(&out)
}

/// Trims and replaces internal whitespace runs with a single space.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Terminal punctuation watched by the pair rule. `.` is not watched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TerminalPunct {
    Colon,
    Exclamation,
    Question,
    Ellipsis,
}

pub fn final_punct_class(text: &str) -> Option<TerminalPunct> {
    let trimmed = text.trim_end();
    if trimmed.ends_with("...") || trimmed.ends_with('…') {
        return Some(TerminalPunct::Ellipsis);
    }
    match trimmed.chars().next_back()? {
        ':' => Some(TerminalPunct::Colon),
        '!' => Some(TerminalPunct::Exclamation),
        '?' => Some(TerminalPunct::Question),
        _ => None,
    }
}
