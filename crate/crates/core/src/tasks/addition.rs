use rand::seq::index::sample;
use rand::Rng;
use serde_json::json;

use super::tokens::{Tokens, PLACEHOLDER};
use super::{Sample, TaskError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdditionFormat {
    /// Digits scattered over a `2·d_amb+1` slot window.
    Spaces,
    /// Operands right-aligned behind random filler and a `$` marker.
    Shift,
}

impl AdditionFormat {
    pub fn name(self) -> &'static str {
        match self {
            AdditionFormat::Spaces => "spaces",
            AdditionFormat::Shift => "shift",
        }
    }
}

pub const OPERAND_FILLER: &str = "abcdefghijklmnopqrstuvwxyz";
pub const BUFFER_FILLER: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

pub(crate) fn filler<R: Rng + ?Sized>(alphabet: &str, len: usize, rng: &mut R) -> String {
    let chars: Vec<char> = alphabet.chars().collect();
    (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect()
}

/// Random number with exactly `len` digits (`0..=9` when `len` is 1).
pub fn random_digits<R: Rng + ?Sized>(len: usize, rng: &mut R) -> String {
    (0..len)
        .map(|i| {
            let lo = if i == 0 && len > 1 { 1 } else { 0 };
            char::from(b'0' + rng.gen_range(lo..10u8))
        })
        .collect()
}

/// Schoolbook sum of two decimal strings.
pub fn add_decimal(x: &str, y: &str) -> String {
    let (a, b) = (x.as_bytes(), y.as_bytes());
    let mut out = Vec::with_capacity(a.len().max(b.len()) + 1);
    let mut carry = 0;
    for i in 0..a.len().max(b.len()) {
        let da = if i < a.len() { a[a.len() - 1 - i] - b'0' } else { 0 };
        let db = if i < b.len() { b[b.len() - 1 - i] - b'0' } else { 0 };
        let s = da + db + carry;
        out.push(b'0' + s % 10);
        carry = s / 10;
    }
    if carry > 0 {
        out.push(b'1');
    }
    while out.len() > 1 && *out.last().expect("nonempty") == b'0' {
        out.pop();
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

fn valid_number(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit()) && (s.len() == 1 || !s.starts_with('0'))
}

/// Builds an addition question for explicit operands.
pub fn addition_question<R: Rng + ?Sized>(
    x: &str,
    y: &str,
    d_amb: usize,
    format: AdditionFormat,
    rng: &mut R,
) -> Result<Sample, TaskError> {
    if !valid_number(x) || !valid_number(y) {
        return Err(TaskError::Invalid(format!("operands {x:?}, {y:?}")));
    }
    if x.len() > d_amb || y.len() > d_amb {
        return Err(TaskError::Invalid(format!("operands longer than d_amb={d_amb}")));
    }
    let question = match format {
        AdditionFormat::Spaces => {
            let body: Vec<String> = x.chars().chain(['+']).chain(y.chars()).map(String::from).collect();
            let width = 2 * d_amb + 1;
            let mut at = sample(rng, width, body.len()).into_vec();
            at.sort_unstable();
            let mut slots = vec![PLACEHOLDER.to_string(); width];
            for (p, t) in at.into_iter().zip(body) {
                slots[p] = t;
            }
            slots.push("=".into());
            Tokens(slots)
        }
        AdditionFormat::Shift => {
            let mut t = Tokens::new();
            t.push_chars(&filler(OPERAND_FILLER, d_amb - x.len(), rng));
            t.push("$");
            t.push_chars(x);
            t.push("+");
            t.push_chars(&filler(OPERAND_FILLER, d_amb - y.len(), rng));
            t.push("$");
            t.push_chars(y);
            t.push("=");
            t
        }
    };
    let mut meta = serde_json::Map::new();
    meta.insert("format".into(), json!(format.name()));
    meta.insert("d_amb".into(), json!(d_amb));
    meta.insert("x_digits".into(), json!(x.len()));
    meta.insert("y_digits".into(), json!(y.len()));
    Ok(Sample {
        task: format!("addition_{}", format.name()),
        question,
        prelude: Tokens::new(),
        states: Vec::new(),
        answer: Tokens::chars(&add_decimal(x, y)),
        meta,
    })
}

pub fn gen_addition<R: Rng + ?Sized>(
    n_digits_x: usize,
    n_digits_y: usize,
    d_amb: usize,
    format: AdditionFormat,
    rng: &mut R,
) -> Result<Sample, TaskError> {
    if n_digits_x == 0 || n_digits_y == 0 || n_digits_x > d_amb || n_digits_y > d_amb {
        return Err(TaskError::Invalid(format!("{n_digits_x}+{n_digits_y} digits with d_amb={d_amb}")));
    }
    let x = random_digits(n_digits_x, rng);
    let y = random_digits(n_digits_y, rng);
    addition_question(&x, &y, d_amb, format, rng)
}

/// Recovers `(x, y)` from either question format.
pub fn addition_operands(question: &Tokens) -> Result<(String, String), TaskError> {
    let text = question.render();
    let bad = || TaskError::Malformed(format!("addition question {text:?}"));
    let body = text.strip_suffix('=').ok_or_else(bad)?;
    let (l, r) = body.split_once('+').ok_or_else(bad)?;
    let digits = |s: &str| -> Result<String, TaskError> {
        let tail = match s.rfind('$') {
            Some(i) => &s[i + 1..],
            None => s,
        };
        let d: String = tail.chars().filter(|c| c.is_ascii_digit()).collect();
        if d.is_empty() {
            Err(bad())
        } else {
            Ok(d)
        }
    };
    Ok((digits(l)?, digits(r)?))
}

/// Integer-addition oracle.
pub fn addition_oracle(question: &Tokens) -> Result<String, TaskError> {
    let (x, y) = addition_operands(question)?;
    Ok(add_decimal(&x, &y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_addition() {
        assert_eq!(add_decimal("94", "31"), "125");
        assert_eq!(add_decimal("0", "0"), "0");
        assert_eq!(add_decimal("999", "1"), "1000");
    }

    #[test]
    fn operands_from_both_formats() {
        assert_eq!(addition_operands(&Tokens::chars("94_+_3__1=")).unwrap(), ("94".into(), "31".into()));
        assert_eq!(addition_operands(&Tokens::chars("fs$46+ih$98=")).unwrap(), ("46".into(), "98".into()));
    }
}
