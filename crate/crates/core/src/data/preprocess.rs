//! Lowercasing, punctuation normalization and rule-based tokenization.
//!
//! Rules, applied in order:
//!
//! | input                                   | output            |
//! |-----------------------------------------|-------------------|
//! | `“ ” „ ‟ « » ″ 〝 〞 ＂`                 | `"`               |
//! | `‘ ’ ‚ ‛ ` ´ ′`                         | `'`               |
//! | `‐ ‑ ‒ – — ― −`                         | `-`               |
//! | `…`                                     | `...`             |
//! | any Unicode whitespace                  | single space      |
//! | uppercase                               | lowercase         |
//!
//! Tokenization then splits on whitespace and detaches every character of
//! [`DETACHED`] as its own token. `'` and `-` stay attached only when both
//! neighbours are alphanumeric (`man's`, `t-shirt`); otherwise they are
//! detached too.

const DETACHED: &[char] = &[
    '.', ',', '!', '?', ';', ':', '"', '(', ')', '[', ']', '{', '}', '/', '\\', '|', '&', '*', '+',
    '=', '<', '>', '#', '$', '%', '@', '~', '^',
];

fn normalize_char(c: char, out: &mut String) {
    match c {
        '“' | '”' | '„' | '‟' | '«' | '»' | '″' | '〝' | '〞' | '＂' => {
            out.push('"')
        }
        '‘' | '’' | '‚' | '‛' | '`' | '´' | '′' => out.push('\''),
        '‐' | '‑' | '‒' | '–' | '—' | '―' | '−' => out.push('-'),
        '…' => out.push_str("..."),
        c if c.is_whitespace() => out.push(' '),
        c => out.extend(c.to_lowercase()),
    }
}

fn tokenize_word(word: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = word.chars().collect();
    let mut buf = String::new();
    let flush = |buf: &mut String, out: &mut Vec<String>| {
        if !buf.is_empty() {
            out.push(std::mem::take(buf));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        let joiner = c == '\'' || c == '-';
        let inner = joiner
            && i > 0
            && chars[i - 1].is_alphanumeric()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric());
        if DETACHED.contains(&c) || (joiner && !inner) {
            flush(&mut buf, out);
            out.push(c.to_string());
        } else {
            buf.push(c);
        }
    }
    flush(&mut buf, out);
}

/// Normalizes and tokenizes one raw sentence. Returns `None` when nothing is
/// left.
pub fn preprocess(raw: &str) -> Option<Vec<String>> {
    let mut norm = String::with_capacity(raw.len());
    for c in raw.chars() {
        normalize_char(c, &mut norm);
    }
    let mut tokens = Vec::new();
    for word in norm.split_whitespace() {
        tokenize_word(word, &mut tokens);
    }
    (!tokens.is_empty()).then_some(tokens)
}

/// [`preprocess`] joined back with single spaces (empty when nothing is left).
pub fn preprocess_line(raw: &str) -> String {
    preprocess(raw).map(|t| t.join(" ")).unwrap_or_default()
}
