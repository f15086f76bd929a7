use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{BlockSpan, CodecError, Encoded, Layout, Span};
use crate::rng::Rng;

/// Recover prefix and block spans from token text. Blocks open at `STATE`;
/// the state field ends after `[/PROP]` when present, else after the first
/// `SEP`. A trailing block may be incomplete.
pub fn parse_layout<S: AsRef<str>>(tokens: &[S]) -> Result<Layout, CodecError> {
    let search = tokens
        .iter()
        .position(|t| t.as_ref() == "[SEARCH]")
        .ok_or_else(|| CodecError::Malformed("no [SEARCH] marker".into()))?;
    let prefix = Span { start: 0, end: search + 1 };
    let mut starts = Vec::new();
    for (i, t) in tokens.iter().enumerate().skip(prefix.end) {
        if t.as_ref() == "STATE" {
            starts.push(i);
        }
    }
    if prefix.end < tokens.len() && starts.first() != Some(&prefix.end) {
        return Err(CodecError::Malformed(format!("block without STATE at token {}", prefix.end)));
    }
    let mut blocks = Vec::with_capacity(starts.len());
    for (k, &start) in starts.iter().enumerate() {
        let end = starts.get(k + 1).copied().unwrap_or(tokens.len());
        let body = &tokens[start..end];
        let state_end = match body.iter().position(|t| t.as_ref() == "[PROP]") {
            Some(_) => body.iter().position(|t| t.as_ref() == "[/PROP]").map_or(end, |p| start + p + 1),
            None => body.iter().position(|t| t.as_ref() == "SEP").map_or(end, |p| start + p + 1),
        };
        blocks.push(BlockSpan { start, state_end, end });
    }
    Ok(Layout { prefix, blocks })
}

fn check_block(trace: &Encoded, t: usize) -> Result<(), CodecError> {
    let len = trace.layout.blocks.len();
    if t == 0 || t > len {
        return Err(CodecError::IndexOutOfRange { index: t, len });
    }
    Ok(())
}

fn relayout(mut out: Encoded) -> Encoded {
    out.layout = parse_layout(&out.tokens).expect("spliced from a valid trace");
    out
}

/// Prefix plus the state field of block `t` (1-based), with no history and
/// no action.
pub fn state_rebuild(trace: &Encoded, t: usize) -> Result<Encoded, CodecError> {
    check_block(trace, t)?;
    let b = trace.layout.blocks[t - 1];
    let mut out = Encoded::default();
    out.extend_from(trace, 0..trace.layout.prefix.end);
    out.extend_from(trace, b.start..b.state_end);
    Ok(relayout(out))
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum HistoryMode {
    /// Drop each earlier block independently with probability `p`.
    Dropout(f64),
    /// Keep only the `k` most recent earlier blocks.
    Window(usize),
    /// Drop every earlier block.
    Null,
}

/// Training sequence for block `t` (1-based): the prefix, the earlier
/// blocks the mode keeps, and block `t` in full.
pub fn apply_history_reduction(trace: &Encoded, t: usize, mode: HistoryMode, rng: &mut Rng) -> Result<Encoded, CodecError> {
    check_block(trace, t)?;
    let keep: Vec<bool> = match mode {
        HistoryMode::Dropout(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(CodecError::InvalidParams("dropout probability must lie in [0, 1]"));
            }
            (1..t).map(|_| rng.gen::<f64>() >= p).collect()
        }
        HistoryMode::Window(k) => (1..t).map(|j| j + k >= t).collect(),
        HistoryMode::Null => alloc::vec![false; t - 1],
    };
    let mut out = Encoded::default();
    out.extend_from(trace, 0..trace.layout.prefix.end);
    for (j, b) in trace.layout.blocks[..t].iter().enumerate() {
        if j + 1 == t || keep[j] {
            out.extend_from(trace, b.start..b.end);
        }
    }
    Ok(relayout(out))
}
