//! Lowercasing, tokenization and wildcarding.
//!
//! Tokens are maximal runs of alphanumeric characters (plus `#`, so that
//! digit wildcards survive a second pass). Every other non-whitespace
//! character becomes a token of its own. The literal boundary markers `<s>`
//! and `</s>` are recognized as single tokens and dropped by [`normalize`]
//! before it affixes its own, which makes normalization idempotent.

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const LONGWORD: &str = "longword";

/// Tokens longer than this many characters become [`LONGWORD`].
pub const MAX_TOKEN_CHARS: usize = 16;
/// Digit runs at least this long have every digit replaced by `#`.
pub const MIN_WILDCARD_DIGITS: usize = 5;
pub const DIGIT_WILDCARD: char = '#';

/// A normalized, boundary-delimited token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NormalizedText {
    tokens: Vec<String>,
}

impl NormalizedText {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token count including the two boundary tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the boundary tokens are always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens between the boundary markers.
    pub fn content(&self) -> &[String] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    pub fn content_len(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn join(&self) -> String {
        self.tokens.join(" ")
    }

    /// Cuts the sequence to at most `max_tokens` tokens, keeping `</s>` last.
    pub fn truncated(mut self, max_tokens: usize) -> Self {
        let max_tokens = max_tokens.max(2);
        if self.tokens.len() > max_tokens {
            self.tokens.truncate(max_tokens - 1);
            self.tokens.push(EOS.to_string());
        }
        self
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == DIGIT_WILDCARD
}

/// Whitespace split with punctuation detached into single-character tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '<' {
            let marker = [BOS, EOS].into_iter().find(|m| rest.starts_with(m));
            if let Some(marker) = marker {
                flush(&mut current, &mut tokens);
                tokens.push(marker.to_string());
                rest = &rest[marker.len()..];
                continue;
            }
        }
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_word_char(c) {
            current.push(c);
        } else {
            flush(&mut current, &mut tokens);
            tokens.push(c.to_string());
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut current, &mut tokens);
    tokens
}

fn flush(current: &mut String, tokens: &mut Vec<String>) {
    if !current.is_empty() {
        tokens.push(std::mem::take(current));
    }
}

fn wildcard_digits(token: &str) -> String {
    let chars: Vec<char> = token.chars().collect();
    let mut out = String::with_capacity(token.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let run = i - start;
            if run >= MIN_WILDCARD_DIGITS {
                out.extend(std::iter::repeat(DIGIT_WILDCARD).take(run));
            } else {
                out.extend(&chars[start..i]);
            }
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

fn normalize_token(token: &str) -> String {
    let token = wildcard_digits(token);
    if token.chars().count() > MAX_TOKEN_CHARS {
        LONGWORD.to_string()
    } else {
        token
    }
}

/// Lowercases, tokenizes, wildcards long numbers and long words, and affixes
/// sentence boundary tokens.
pub fn normalize(raw: &str) -> NormalizedText {
    let lower = raw.to_lowercase();
    let mut tokens = vec![BOS.to_string()];
    tokens.extend(
        tokenize(&lower)
            .into_iter()
            .filter(|t| t != BOS && t != EOS)
            .map(|t| normalize_token(&t)),
    );
    tokens.push(EOS.to_string());
    NormalizedText { tokens }
}
