//! Pulling an option-letter set out of free-form model output.
//!
//! The last `Answer:` (or `答案：`) marker in the text wins. After the marker,
//! uppercase letters are collected across separators (spaces, commas, `、`,
//! `/`, `&`, `+`, `and`, `和`) until anything else appears.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

static MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:answer|答案)(?:\s+is)?\s*[:：]").expect("static regex"));

pub const ANSWER_INSTRUCTION: &str = "This question may have more than one correct option. \
Finish your reply with one line of the form \"Answer: <letters>\", for example \"Answer: AC\".";

pub const ANSWER_REPAIR: &str = "I could not find your final choice. Reply with a single line \
of the form \"Answer: <letters>\" listing every option you consider correct, and nothing else.";

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | '，' | '、' | ';' | '；' | '/' | '&' | '+' | '＋' | '和')
}

/// Letters following the final answer marker, or `None` when there is no
/// marker or no letter after it.
pub fn extract_answer(text: &str) -> Option<BTreeSet<char>> {
    let last = MARKER.find_iter(text).last()?;
    let rest = &text[last.end()..];
    let mut letters = BTreeSet::new();
    let mut chars = rest.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if is_separator(c) {
            continue;
        }
        if c.is_ascii_uppercase() {
            // A letter glued to lowercase text is the start of a word ("Because"), not an option.
            if chars.peek().is_some_and(|&(_, n)| n.is_ascii_lowercase()) {
                break;
            }
            letters.insert(c);
            continue;
        }
        if rest[i..].starts_with("and ") {
            chars.nth(2);
            continue;
        }
        break;
    }
    (!letters.is_empty()).then_some(letters)
}
