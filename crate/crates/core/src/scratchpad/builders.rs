use rand::Rng;

use crate::tasks::{filler, question_bits, GraphInstance, Tokens, BUFFER_FILLER, PLACEHOLDER};

use super::ScratchpadError;

/// Follows the unique successor from the source until the target (bit 1)
/// or the source again (bit 0). Returns the visited vertices and the bit.
fn walk(g: &GraphInstance) -> Result<(Vec<usize>, u8), ScratchpadError> {
    let adj = g.successors();
    let (s, t) = (g.source(), g.target());
    let mut path = vec![s];
    let mut cur = s;
    for _ in 0..=g.nodes.len() {
        let next = match adj[cur].as_slice() {
            [v] => *v,
            other => {
                return Err(ScratchpadError::Malformed(format!(
                    "vertex {} has out-degree {}",
                    g.nodes[cur],
                    other.len()
                )))
            }
        };
        path.push(next);
        if next == t {
            return Ok((path, 1));
        }
        if next == s {
            return Ok((path, 0));
        }
        cur = next;
    }
    Err(ScratchpadError::Malformed("walk did not terminate".into()))
}

/// One state per visited vertex; the last also carries `;bit`.
pub fn inductive_cycle_states(g: &GraphInstance) -> Result<Vec<Tokens>, ScratchpadError> {
    let (path, bit) = walk(g)?;
    let mut states: Vec<Tokens> = path.iter().map(|&v| Tokens(vec![g.nodes[v].clone()])).collect();
    let last = states.last_mut().expect("path is nonempty");
    last.push(";");
    last.push(if bit == 1 { "1" } else { "0" });
    Ok(states)
}

/// The walk written as `v0>v1>...>vk;b`.
pub fn dfs_scratchpad(g: &GraphInstance) -> Result<Tokens, ScratchpadError> {
    Ok(Tokens::join(&inductive_cycle_states(g)?, ">"))
}

/// State `i` is the parity of the first `i` bits.
pub fn cumulative_parity_states(bits: &[u8], k: usize) -> Result<Vec<Tokens>, ScratchpadError> {
    if k == 0 || k > bits.len() {
        return Err(ScratchpadError::Malformed(format!("prefix length {k} for {} bits", bits.len())));
    }
    let mut acc = 0;
    Ok(bits[..k]
        .iter()
        .map(|&b| {
            acc ^= b;
            Tokens::chars(if acc == 1 { "1" } else { "0" })
        })
        .collect())
}

/// `[p]v,c` per bit (slot, value, running parity), then `[d_amb]_,c`.
pub fn parity_inductive_states(question: &Tokens, d_amb: usize) -> Result<Vec<Tokens>, ScratchpadError> {
    if question.len() != d_amb + 1 {
        return Err(ScratchpadError::Malformed(format!("parity question of {} tokens for d_amb={d_amb}", question.len())));
    }
    let bits = question_bits(question)?;
    let mut acc = 0;
    let state = |p: usize, v: &str, c: u8| {
        let mut t = Tokens::chars(&format!("[{p}]"));
        t.push(v);
        t.push(",");
        t.push(if c == 1 { "1" } else { "0" });
        t
    };
    let mut out: Vec<Tokens> = bits
        .iter()
        .map(|&(p, b)| {
            acc ^= b;
            state(p, if b == 1 { "1" } else { "0" }, acc)
        })
        .collect();
    out.push(state(d_amb, PLACEHOLDER, acc));
    Ok(out)
}

fn pointer(p: Option<usize>, plus: usize, x_side: bool) -> String {
    match (p, x_side) {
        (Some(i), _) => format!("{i:02}"),
        (None, true) => "-1".into(),
        (None, false) => format!("{plus:02}"),
    }
}

/// Spaces-format trace with an explicit answer buffer (`$` then filler,
/// `d_amb + 2` characters). Returns `(prelude, states)`.
pub fn addition_states_spaces_with_buffer(
    question: &Tokens,
    d_amb: usize,
    buffer: &str,
) -> Result<(Tokens, Vec<Tokens>), ScratchpadError> {
    let toks: Vec<&str> = question.iter().collect();
    let bad = |m: &str| ScratchpadError::Malformed(format!("spaces question {:?}: {m}", question.render()));
    if toks.len() != 2 * d_amb + 2 || toks.last() != Some(&"=") {
        return Err(bad("expected 2*d_amb+1 slots then '='"));
    }
    if buffer.chars().count() != d_amb + 2 || !buffer.starts_with('$') {
        return Err(bad("buffer must be '$' plus d_amb+1 filler characters"));
    }
    let window = &toks[..toks.len() - 1];
    let plus = window.iter().position(|&t| t == "+").ok_or_else(|| bad("missing '+'"))?;
    let digit_slots = |range: std::ops::Range<usize>| -> Vec<usize> {
        range.filter(|&i| window[i].len() == 1 && window[i].as_bytes()[0].is_ascii_digit()).collect()
    };
    let xs = digit_slots(0..plus);
    let ys = digit_slots(plus + 1..window.len());
    if xs.is_empty() || ys.is_empty() {
        return Err(bad("empty operand"));
    }
    let digit = |slot: usize| window[slot].as_bytes()[0] - b'0';
    let mut ans: Vec<char> = buffer.chars().collect();
    let mut carry = 0u8;
    let mut states = Vec::new();
    let mut i = 0;
    while i < xs.len().max(ys.len()) || carry == 1 {
        let px = xs.len().checked_sub(i + 1).map(|k| xs[k]);
        let py = ys.len().checked_sub(i + 1).map(|k| ys[k]);
        let s = px.map_or(0, digit) + py.map_or(0, digit) + carry;
        carry = s / 10;
        ans.insert(0, char::from(b'0' + s % 10));
        let dropped = ans.pop();
        if dropped == Some('$') {
            return Err(ScratchpadError::Malformed("answer buffer underflow".into()));
        }
        let mut st = String::new();
        st.push_str(&format!("[{}]", pointer(px, plus, true)));
        st.push_str(px.map_or(PLACEHOLDER, |p| window[p]));
        st.push_str(&format!("[{}]", pointer(py, plus, false)));
        st.push_str(py.map_or(PLACEHOLDER, |p| window[p]));
        st.push_str(&format!("c{carry}r"));
        st.extend(ans.iter());
        states.push(Tokens::chars(&st));
        i += 1;
    }
    Ok((Tokens::chars(buffer), states))
}

/// As [`addition_states_spaces_with_buffer`] with a random buffer.
pub fn addition_states_spaces<R: Rng + ?Sized>(
    question: &Tokens,
    d_amb: usize,
    rng: &mut R,
) -> Result<(Tokens, Vec<Tokens>), ScratchpadError> {
    let buffer = format!("${}", filler(BUFFER_FILLER, d_amb + 1, rng));
    addition_states_spaces_with_buffer(question, d_amb, &buffer)
}

/// Shift-format trace. `ans0` is `$` plus `d_amb` filler characters. The
/// returned prelude `ans0|0` completes the question into state 0; finished
/// operands stop rotating and contribute 0.
pub fn addition_states_shift_with_buffer(
    question: &Tokens,
    d_amb: usize,
    ans0: &str,
) -> Result<(Tokens, Vec<Tokens>), ScratchpadError> {
    let text = question.render();
    let bad = |m: &str| ScratchpadError::Malformed(format!("shift question {text:?}: {m}"));
    let body = text.strip_suffix('=').ok_or_else(|| bad("missing '='"))?;
    let (x0, y0) = body.split_once('+').ok_or_else(|| bad("missing '+'"))?;
    for op in [x0, y0] {
        if op.chars().count() != d_amb + 1 || op.matches('$').count() != 1 {
            return Err(bad("operands must be d_amb+1 characters with one '$'"));
        }
    }
    if ans0.chars().count() != d_amb + 1 || !ans0.starts_with('$') {
        return Err(bad("ans0 must be '$' plus d_amb filler characters"));
    }
    let mut x: Vec<char> = x0.chars().collect();
    let mut y: Vec<char> = y0.chars().collect();
    let mut ans: Vec<char> = ans0.chars().collect();
    let mut carry = 0u32;
    let mut states = Vec::new();
    let step = |op: &mut Vec<char>| -> u32 {
        if op.last() == Some(&'$') {
            return 0;
        }
        op.rotate_right(1);
        op[0].to_digit(10).unwrap_or(0)
    };
    while x.last() != Some(&'$') || y.last() != Some(&'$') {
        let s = step(&mut x) + step(&mut y) + carry;
        carry = s / 10;
        ans.insert(0, char::from_digit(s % 10, 10).expect("digit"));
        if ans.pop() == Some('$') {
            return Err(ScratchpadError::Malformed("answer buffer underflow".into()));
        }
        let st: String = x.iter().chain(['+'].iter()).chain(y.iter()).chain(['='].iter()).chain(ans.iter()).collect();
        states.push(Tokens::chars(&format!("{st}|{carry}")));
    }
    let mut last: String = ans.iter().collect();
    if carry == 1 {
        last.insert(0, '1');
    }
    states.push(Tokens::chars(&last));
    Ok((Tokens::chars(&format!("{ans0}|0")), states))
}

pub fn addition_states_shift<R: Rng + ?Sized>(
    question: &Tokens,
    d_amb: usize,
    rng: &mut R,
) -> Result<(Tokens, Vec<Tokens>), ScratchpadError> {
    let ans0 = format!("${}", filler(BUFFER_FILLER, d_amb, rng));
    addition_states_shift_with_buffer(question, d_amb, &ans0)
}
