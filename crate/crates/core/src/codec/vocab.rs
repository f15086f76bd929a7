use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Token-to-id map; ids follow first-registration order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Vocab {
    tokens: Vec<String>,
    #[cfg_attr(feature = "serde", serde(skip))]
    index: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("token {0:?} is not in the vocabulary")]
pub struct UnknownToken(pub String);

/// Tokens every vocabulary starts with, in id order.
pub const SPECIALS: &[&str] = &[
    "[PAD]", "[BOS]", "[EOS]", "[CLAUSES]", "[GRAPH]", "[TREE]", "[INPUT]", "[SEARCH]", "STATE", "SEP", "[PROP]", "[/PROP]", ":", "T",
    "F", "U", "?", "SAT_OK", "UNIT", "CONFLICT", "BJ", "OK", "SOLVED", "FAILED", "NONE", "UP", "P", "V", "NUM", "+", "*", "(", ")",
    "EXPR", "TERM", "FACTOR", "EXPR_TAIL", "TERM_TAIL",
];

/// Sizes of the indexed token families to pre-register.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VocabSpec {
    pub vars: usize,
    pub clauses: usize,
    pub nodes: usize,
    pub colors: usize,
    pub levels: usize,
    pub positions: usize,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.register(&t);
        }
        v
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
    }

    pub fn register(&mut self, tok: &str) -> u32 {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn standard(spec: VocabSpec) -> Self {
        let mut v = Self::new();
        for s in SPECIALS {
            v.register(s);
        }
        for i in 0..spec.vars {
            v.register(&format!("v{i}"));
            v.register(&format!("+v{i}"));
            v.register(&format!("-v{i}"));
        }
        for j in 0..spec.clauses.max(spec.colors) {
            v.register(&format!("C{j}"));
        }
        if spec.colors > 0 {
            v.register(&format!("C{}", spec.colors));
        }
        for l in 0..=spec.levels {
            v.register(&format!("L{l}"));
        }
        for i in 0..spec.nodes {
            v.register(&format!("N{i}"));
        }
        if spec.colors > 0 {
            for d in 0..=spec.colors {
                v.register(&format!("DS{d}"));
            }
            for m in 0..(1u64 << spec.colors) {
                v.register(&super::mask_token(crate::search::ValueSet(m), spec.colors));
            }
        }
        for p in 0..spec.positions {
            v.register(&format!("@{p}"));
            v.register(&format!("K{}", p));
        }
        for a in 0..3 {
            v.register(&format!("ALT{a}"));
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, tok: &str) -> Option<u32> {
        self.index.get(tok).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, toks: &[S]) -> Result<Vec<u32>, UnknownToken> {
        toks.iter().map(|t| self.id(t.as_ref()).ok_or_else(|| UnknownToken(t.as_ref().to_string()))).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i as usize].clone()).collect()
    }
}
