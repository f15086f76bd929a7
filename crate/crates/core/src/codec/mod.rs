//! Token serialization of search episodes: a problem prefix followed by one
//! decision block per step, plus layout recovery and history reductions.

mod build;
pub mod doc;
mod layout;
mod vocab;

use alloc::string::String;
use alloc::vec::Vec;

pub use build::{
    block_tokens, canonical_key, encode_prefix, encode_trace, problem_doc, state_doc, state_tokens, trace_doc, tree_doc, tree_state,
    BlockTokens, StateKey,
};
pub use doc::{decode, write_doc, ActionDoc, BlockDoc, Culprit, ProblemDoc, StateDoc, Terminal, TraceDoc};
pub use layout::{apply_history_reduction, parse_layout, state_rebuild, HistoryMode};
pub use vocab::{UnknownToken, Vocab, VocabSpec, SPECIALS};

use crate::search::ValueSet;

/// Serialization of the state field for SAT and coloring traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TraceFormat {
    /// Every variable with its T/F/U value (SAT) or open nodes with domain sizes (coloring).
    #[default]
    Enriched,
    /// Open variables or nodes only, value fields replaced by `?`.
    Stripped,
    /// The simplified formula, first 25 open clauses (SAT only).
    ResidualCnf,
}

/// Annotation level of tree-traversal state blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TreeFormat {
    /// Current node only.
    #[default]
    Simple,
    /// Current node and its parent.
    Mid,
    /// Current node and every node visited so far.
    Verbose,
}

/// Who writes a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Role {
    Prefix,
    State,
    /// Emitted by the policy or verifier.
    Action,
    /// Written by the search infrastructure after or between action tokens.
    Infra,
    End,
}

/// Which tokens contribute to the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum LossMask {
    #[default]
    ActionOnly,
    /// Every token inside decision blocks.
    Blocks,
}

impl LossMask {
    pub fn includes(self, role: Role) -> bool {
        match self {
            LossMask::ActionOnly => role == Role::Action,
            LossMask::Blocks => role != Role::Prefix,
        }
    }
}

pub const RESIDUAL_CLAUSES: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }
}

/// A decision block: `[start, state_end)` is the state field written by the
/// infrastructure, `[state_end, end)` the action and outcome.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockSpan {
    pub start: usize,
    pub state_end: usize,
    pub end: usize,
}

impl BlockSpan {
    pub fn span(&self) -> Span {
        Span { start: self.start, end: self.end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Layout {
    pub prefix: Span,
    pub blocks: Vec<BlockSpan>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.blocks.last().map_or(self.prefix.end, |b| b.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Block index containing token `i`, `None` for prefix tokens.
    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.start <= i && i < b.end)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Encoded {
    pub tokens: Vec<String>,
    pub roles: Vec<Role>,
    pub layout: Layout,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn ids(&self, vocab: &Vocab) -> Result<Vec<u32>, UnknownToken> {
        vocab.encode(&self.tokens)
    }

    pub fn loss_mask(&self, policy: LossMask) -> Vec<bool> {
        self.roles.iter().map(|&r| policy.includes(r)).collect()
    }

    /// Copy of the token range with roles, not re-laid-out.
    pub(crate) fn extend_from(&mut self, other: &Encoded, range: core::ops::Range<usize>) {
        self.tokens.extend_from_slice(&other.tokens[range.clone()]);
        self.roles.extend_from_slice(&other.roles[range]);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error(transparent)]
    UnknownToken(#[from] UnknownToken),
    #[error("malformed trace: {0}")]
    Malformed(String),
    #[error("format not supported for this domain: {0}")]
    Unsupported(&'static str),
    #[error("block {index} out of range (trace has {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
}

/// `M` followed by one availability bit per color, color 0 first.
pub fn mask_token(available: ValueSet, colors: usize) -> String {
    let mut s = String::with_capacity(colors + 1);
    s.push('M');
    for c in 0..colors {
        s.push(if available.contains(c as u8) { '1' } else { '0' });
    }
    s
}
