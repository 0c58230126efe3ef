//! Preparation-time tokenization.
//!
//! These tokenizers are only used for budgeting and choosing split points.
//! Scoring always uses the backend's own token accounting.

use serde::{Deserialize, Serialize};

/// A tokenizer whose tokens concatenate back to the source text.
pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;

    /// Splits `text` into tokens. Concatenating the result must reproduce
    /// `text` exactly.
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Ordered tokens of one text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        Self { tokens }
    }

    pub fn from_text(tokenizer: &dyn Tokenizer, text: &str) -> Self {
        Self::new(tokenizer.tokenize(text))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self) -> usize {
        self.tokens.len()
    }

    pub fn detokenize(&self) -> String {
        self.tokens.concat()
    }
}

/// Whitespace-plus-punctuation word tokenizer.
///
/// A token is a maximal run of alphanumeric characters (apostrophes inside
/// a word are kept) or a single punctuation character. Whitespace is
/// attached to the following token; trailing whitespace is attached to the
/// last token. Token counts are therefore additive across any cut made
/// right after a whitespace run.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl WordTokenizer {
    pub const ID: &'static str = "word-punct-v1";
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

impl Tokenizer for WordTokenizer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        let mut tokens: Vec<String> = Vec::new();
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut i = 0;
        let mut pending_start: Option<usize> = None;

        while i < chars.len() {
            let (start, c) = chars[i];
            if c.is_whitespace() {
                pending_start.get_or_insert(start);
                i += 1;
                continue;
            }
            let token_start = pending_start.take().unwrap_or(start);
            let mut j = i + 1;
            if is_word_char(c) {
                while j < chars.len() {
                    let next = chars[j].1;
                    if is_word_char(next) {
                        j += 1;
                    } else if next == '\'' && j + 1 < chars.len() && is_word_char(chars[j + 1].1) {
                        j += 2;
                    } else {
                        break;
                    }
                }
            }
            let end = chars.get(j).map_or(text.len(), |&(b, _)| b);
            tokens.push(text[token_start..end].to_string());
            i = j;
        }

        // whitespace-only text has no token to attach trailing space to
        if let (Some(ws), Some(last)) = (pending_start, tokens.last_mut()) {
            last.push_str(&text[ws..]);
        }
        tokens
    }
}
