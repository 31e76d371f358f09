//! Script-aware text helpers shared by ingestion, comprehension and memory.
//!
//! Token counts here are an approximation: every CJK ideograph (and kana or
//! hangul syllable) counts as one token, and every maximal run of other
//! non-whitespace characters counts as one token. The measure is additive over
//! whitespace-joined pieces, which keeps context budgeting exact.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Zh,
    Other,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
            Language::Other => "other",
        }
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Han ideographs only.
pub fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

/// Characters that are counted one token each.
pub fn is_cjk_unit(c: char) -> bool {
    is_han(c)
        || matches!(c as u32,
            0x3040..=0x30FF   // kana
            | 0xAC00..=0xD7AF // hangul syllables
            | 0x3000..=0x303F // CJK punctuation
            | 0xFF00..=0xFFEF) // full-width forms
}

pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_whitespace() {
            in_word = false;
        } else if is_cjk_unit(c) {
            count += 1;
            in_word = false;
        } else if !in_word {
            count += 1;
            in_word = true;
        }
    }
    count
}

/// Longest prefix of `text` whose token count does not exceed `budget`.
pub fn truncate_to_tokens(text: &str, budget: usize) -> &str {
    let mut count = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            in_word = false;
            continue;
        }
        let starts_token = is_cjk_unit(c) || !in_word;
        if starts_token {
            if count == budget {
                return text[..i].trim_end();
            }
            count += 1;
        }
        in_word = !is_cjk_unit(c);
    }
    text
}

/// Share of Han characters among alphabetic characters decides `zh` (at least
/// 30%); otherwise a Latin majority decides `en`.
pub fn detect_language(text: &str) -> Language {
    let mut letters = 0usize;
    let mut han = 0usize;
    let mut latin = 0usize;
    for c in text.chars() {
        if !c.is_alphabetic() {
            continue;
        }
        letters += 1;
        if is_han(c) {
            han += 1;
        } else if c.is_ascii_alphabetic() || matches!(c as u32, 0x00C0..=0x024F) {
            latin += 1;
        }
    }
    if letters == 0 {
        return Language::Other;
    }
    if han * 10 >= letters * 3 {
        Language::Zh
    } else if latin * 2 >= letters {
        Language::En
    } else {
        Language::Other
    }
}

const TERMINALS: &[char] = &['.', '!', '?', '。', '！', '？', '…', ';', '；', ':', '：'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '”', '’', '）', '」', '』', '】'];

/// True when the text ends a sentence, ignoring trailing closing quotes and brackets.
pub fn ends_with_terminal(text: &str) -> bool {
    let trimmed = text.trim_end().trim_end_matches(CLOSERS);
    trimmed.ends_with(TERMINALS)
}

/// Splits text into sentences, keeping each terminator (and any closing quote
/// that follows it) with its sentence.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !TERMINALS.contains(&c) || c == ':' || c == '：' {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, next)) = chars.peek() {
            if CLOSERS.contains(&next) || TERMINALS.contains(&next) {
                end = j + next.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        // A period between two non-space characters is not a boundary (3.5, e.g.).
        if c == '.' {
            if let Some(&(_, next)) = chars.peek() {
                if !next.is_whitespace() {
                    continue;
                }
            }
        }
        let piece = text[start..end].trim();
        if !piece.is_empty() {
            out.push(piece);
        }
        start = end;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_words_and_han() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("caries of the enamel"), 4);
        assert_eq!(count_tokens("龋齿"), 2);
        assert_eq!(count_tokens("tooth 46号牙"), 4);
        assert_eq!(count_tokens("  a\n\tb  "), 2);
    }

    #[test]
    fn truncation_respects_budget() {
        assert_eq!(truncate_to_tokens("one two three", 2), "one two");
        assert_eq!(truncate_to_tokens("龋齿病变", 3), "龋齿病");
        assert_eq!(truncate_to_tokens("one", 0), "");
        assert_eq!(truncate_to_tokens("short", 10), "short");
    }

    #[test]
    fn language_by_script_ratio() {
        assert_eq!(detect_language("帮我看看这张全景片"), Language::Zh);
        assert_eq!(detect_language("Is there caries on this tooth?"), Language::En);
        // 3 Han of 10 letters is exactly the threshold.
        assert_eq!(detect_language("abcdefg 龋齿病"), Language::Zh);
        assert_eq!(detect_language("abcdefgh 龋齿"), Language::En);
        assert_eq!(detect_language("12345 !!"), Language::Other);
        assert_eq!(detect_language("Привет мир"), Language::Other);
    }

    #[test]
    fn terminal_detection() {
        assert!(ends_with_terminal("fluoride varnish."));
        assert!(ends_with_terminal("是这样的。"));
        assert!(ends_with_terminal("he said \"stop.\""));
        assert!(!ends_with_terminal("treated with"));
        assert!(!ends_with_terminal("see (Table 2)"));
    }

    #[test]
    fn sentence_split_keeps_terminators() {
        assert_eq!(split_sentences("First one. Second 3.5 mm! Third"), vec!["First one.", "Second 3.5 mm!", "Third"]);
        assert_eq!(split_sentences("龋病。牙周病！"), vec!["龋病。", "牙周病！"]);
    }

    proptest! {
        #[test]
        fn token_count_is_additive(a in "[a-z 龋齿]{0,20}", b in "[a-z 龋齿]{0,20}") {
            let joined = format!("{a}\n{b}");
            prop_assert_eq!(count_tokens(&joined), count_tokens(&a) + count_tokens(&b));
        }

        #[test]
        fn truncation_never_exceeds(s in "[a-z 龋齿]{0,40}", budget in 0usize..12) {
            prop_assert!(count_tokens(truncate_to_tokens(&s, budget)) <= budget);
        }
    }
}
