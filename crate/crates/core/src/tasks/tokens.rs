use std::fmt;

use serde::Serialize;

pub const START: &str = "<START>";
pub const EOS: &str = "<EOS>";
pub const STATE_SEP: &str = "#";
pub const PLACEHOLDER: &str = "_";

/// A sequence of atomic tokens. Rendering concatenates them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Tokens(pub Vec<String>);

impl Tokens {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    /// One token per character.
    pub fn chars(s: &str) -> Self {
        Self(s.chars().map(String::from).collect())
    }

    pub fn push(&mut self, tok: impl Into<String>) {
        self.0.push(tok.into());
    }

    pub fn push_chars(&mut self, s: &str) {
        self.0.extend(s.chars().map(String::from));
    }

    pub fn extend(&mut self, other: &Tokens) {
        self.0.extend(other.0.iter().cloned());
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn render(&self) -> String {
        self.0.concat()
    }

    pub fn contains(&self, tok: &str) -> bool {
        self.0.iter().any(|t| t == tok)
    }

    /// Joins token groups with a separator token (nothing when `sep` is empty).
    pub fn join(parts: &[Tokens], sep: &str) -> Tokens {
        let mut out = Tokens::new();
        for (i, p) in parts.iter().enumerate() {
            if i > 0 && !sep.is_empty() {
                out.push(sep);
            }
            out.extend(p);
        }
        out
    }
}

impl fmt::Display for Tokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            f.write_str(t)?;
        }
        Ok(())
    }
}

impl From<Vec<String>> for Tokens {
    fn from(v: Vec<String>) -> Self {
        Self(v)
    }
}

/// Splits graph text into tokens: `<...>` specials, node names like `v12`
/// or `a_3`, and single characters otherwise.
pub fn tokenize_graph(s: &str) -> Tokens {
    let b = s.as_bytes();
    let mut out = Tokens::new();
    let mut i = 0;
    let digits_from = |j: usize| b[j..].iter().take_while(|c| c.is_ascii_digit()).count();
    while i < b.len() {
        if b[i] == b'<' {
            if let Some(end) = s[i..].find('>').filter(|&e| e > 1 && s[i + 1..i + e].bytes().all(|c| c.is_ascii_uppercase())) {
                out.push(&s[i..=i + end]);
                i += end + 1;
                continue;
            }
        }
        if b[i] == b'v' && i + 1 < b.len() && b[i + 1].is_ascii_digit() {
            let n = digits_from(i + 1);
            out.push(&s[i..i + 1 + n]);
            i += 1 + n;
            continue;
        }
        if b[i].is_ascii_lowercase() && i + 2 < b.len() && b[i + 1] == b'_' && b[i + 2].is_ascii_digit() {
            let n = digits_from(i + 2);
            out.push(&s[i..i + 2 + n]);
            i += 2 + n;
            continue;
        }
        let ch = s[i..].chars().next().expect("in bounds");
        out.push(ch.to_string());
        i += ch.len_utf8();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_tokenizer_keeps_names_atomic() {
        let t = tokenize_graph("v12>v3;a_0?b_10?c_0<EOS>");
        assert_eq!(t.0, ["v12", ">", "v3", ";", "a_0", "?", "b_10", "?", "c_0", "<EOS>"]);
        assert_eq!(tokenize_graph("a>x;").len(), 4);
    }
}
