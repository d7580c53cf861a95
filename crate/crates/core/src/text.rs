//! Whitespace + punctuation tokenization shared by the decoder vocabulary
//! and the caption metrics.
//!
//! ASCII punctuation becomes a token of its own, except hyphens and
//! apostrophes between two alphanumerics ("45-50", "dog's"), which stay
//! inside the word.

fn is_joiner(c: char) -> bool {
    c == '-' || c == '\''
}

/// Splits `text` into word and punctuation tokens, preserving case.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let inner = is_joiner(c)
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if c.is_ascii_punctuation() && !inner {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Lowercased tokens, as used by every metric.
pub fn metric_tokens(text: &str) -> Vec<String> {
    split_tokens(&text.to_lowercase())
}

fn attaches_left(tok: &str) -> bool {
    matches!(tok, "." | "," | ";" | ":" | "!" | "?" | ")" | "]" | "}" | "%")
}

fn attaches_right(tok: &str) -> bool {
    matches!(tok, "(" | "[" | "{")
}

/// Inverse of [`split_tokens`] for conventionally spaced text.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue = true;
    for tok in tokens {
        let tok = tok.as_ref();
        if !glue && !attaches_left(tok) {
            out.push(' ');
        }
        out.push_str(tok);
        glue = attaches_right(tok);
    }
    out
}
