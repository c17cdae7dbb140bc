//! Deterministic tokenization and sentence segmentation.
//!
//! A token is a maximal run of alphanumerics/underscore or a single
//! punctuation character; whitespace separates tokens and is discarded.
//! Lemmas are lowercase token strings.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte offset of the token start in the source string.
    pub offset: u32,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut word_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() || ch == '_' {
            if word_start.is_none() {
                word_start = Some(i);
            }
        } else {
            if let Some(start) = word_start.take() {
                tokens.push(Token { text: text[start..i].to_string(), offset: start as u32 });
            }
            if !ch.is_whitespace() {
                tokens.push(Token { text: ch.to_string(), offset: i as u32 });
            }
        }
    }
    if let Some(start) = word_start {
        tokens.push(Token { text: text[start..].to_string(), offset: start as u32 });
    }
    tokens
}

/// Split a paragraph into sentence strings with their byte offsets.
///
/// A boundary is sentence-final punctuation (`.`, `!`, `?`) followed by
/// whitespace and an uppercase letter; otherwise the paragraph is a single
/// sentence.
pub fn segment_sentences(text: &str) -> Vec<(u32, &str)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        let ch = bytes[i] as char;
        if ch == '.' || ch == '!' || ch == '?' {
            // Look ahead: whitespace run then an uppercase letter.
            let mut j = i + 1;
            let mut saw_space = false;
            while j < bytes.len() && text[j..].starts_with(|c: char| c.is_whitespace()) {
                saw_space = true;
                j += text[j..].chars().next().map_or(1, |c| c.len_utf8());
            }
            if saw_space && text[j..].starts_with(|c: char| c.is_uppercase()) {
                spans.push((start, i + 1));
                start = j;
                i = j;
                continue;
            }
        }
        i += text[i..].chars().next().map_or(1, |c| c.len_utf8());
    }
    if start < bytes.len() {
        spans.push((start, bytes.len()));
    }
    spans
        .into_iter()
        .map(|(s, e)| (s as u32, text[s..e].trim_end()))
        .filter(|(_, t)| !t.trim().is_empty())
        .collect()
}

/// Collapse whitespace runs in extracted markup text to single spaces.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_space = true;
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !last_space {
                out.push(' ');
                last_space = true;
            }
        } else {
            out.push(ch);
            last_space = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizes_words_and_punctuation() {
        let toks = tokenize("SMBT3904 / MMBT3904, rated.");
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["SMBT3904", "/", "MMBT3904", ",", "rated", "."]);
        let offsets: Vec<u32> = toks.iter().map(|t| t.offset).collect();
        assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tokenize_keeps_underscores_and_digits_together() {
        let toks = tokenize("part_no 42mA");
        let texts: Vec<&str> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["part_no", "42mA"]);
    }

    #[test]
    fn segments_on_terminal_punctuation_before_uppercase() {
        let sents = segment_sentences("This is one. And two. but not three.");
        let texts: Vec<&str> = sents.iter().map(|(_, t)| *t).collect();
        assert_eq!(texts, vec!["This is one.", "And two. but not three."]);
    }

    #[test]
    fn single_sentence_without_boundary() {
        assert_eq!(segment_sentences("no split here").len(), 1);
        assert_eq!(segment_sentences("ver 1.2 of Part").len(), 1);
    }

    #[test]
    fn empty_text_yields_nothing() {
        assert!(segment_sentences("   ").is_empty());
        assert!(tokenize("").is_empty());
    }
}
