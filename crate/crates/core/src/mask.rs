//! Attention layouts, boolean masks for each mask kind, and position indices.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::codec::{Layout, Span};

/// Region spans over the full model input: slot registers first, then the
/// problem prefix, then decision blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionLayout {
    pub slots: usize,
    pub prefix: Span,
    pub blocks: Vec<Span>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Slot,
    Prefix,
    Block(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("invalid layout: {0}")]
    InvalidLayout(&'static str),
}

impl AttentionLayout {
    /// Shift a token layout right by `slots` register positions.
    pub fn new(slots: usize, layout: &Layout) -> Self {
        let sh = |s: Span| Span { start: s.start + slots, end: s.end + slots };
        Self { slots, prefix: sh(layout.prefix), blocks: layout.blocks.iter().map(|b| sh(b.span())).collect() }
    }

    /// Layout from region lengths, for fixtures.
    pub fn from_lengths(slots: usize, prefix: usize, blocks: &[usize]) -> Self {
        let mut at = slots + prefix;
        let blocks = blocks
            .iter()
            .map(|&len| {
                let s = Span { start: at, end: at + len };
                at += len;
                s
            })
            .collect();
        Self { slots, prefix: Span { start: slots, end: slots + prefix }, blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.last().map_or(self.prefix.end, |b| b.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), MaskError> {
        if self.prefix.start != self.slots || self.prefix.end < self.prefix.start {
            return Err(MaskError::InvalidLayout("prefix must directly follow the slots"));
        }
        let mut at = self.prefix.end;
        for b in &self.blocks {
            if b.start != at || b.end <= b.start {
                return Err(MaskError::InvalidLayout("blocks must be non-empty and contiguous"));
            }
            at = b.end;
        }
        Ok(())
    }

    pub fn regions(&self) -> Vec<Region> {
        let mut out = Vec::with_capacity(self.len());
        out.extend(core::iter::repeat(Region::Slot).take(self.slots));
        out.extend(core::iter::repeat(Region::Prefix).take(self.prefix.len()));
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(core::iter::repeat(Region::Block(i)).take(b.len()));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum MaskKind {
    #[default]
    Causal,
    /// Blocks see slots, the prefix, and their own block causally.
    SsaSelective,
    /// Selective without block-to-prefix access.
    SsaBlanket,
    /// Blocks see slots, the prefix, and the last `W` block tokens.
    SwaPrefix(usize),
    /// Blocks see only their own block causally.
    CurrentBlockOnly,
    /// Blocks see slots and earlier blocks, but not the prefix.
    ReverseSelective,
    /// Random entries within the causal triangle, as many as the selective mask has.
    RandomMatched { seed: u64 },
}

/// Dense query-by-key mask; `true` means the query may attend to the key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub n: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.data[q * self.n + k]
    }

    pub fn density(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Allowed key indices per query, ascending.
    pub fn key_lists(&self) -> Vec<Vec<u32>> {
        (0..self.n).map(|q| (0..self.n).filter(|&k| self.allowed(q, k)).map(|k| k as u32).collect()).collect()
    }

    /// One row per query, `0`/`1` separated by commas.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.n * self.n * 2);
        for q in 0..self.n {
            for k in 0..self.n {
                if k > 0 {
                    s.push(',');
                }
                s.push(if self.allowed(q, k) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }
}

fn selective_like(r: &[Region], q: usize, k: usize, block_rule: impl Fn(usize, Region) -> bool) -> bool {
    match r[q] {
        Region::Slot => matches!(r[k], Region::Slot | Region::Prefix),
        Region::Prefix => r[k] == Region::Slot || (r[k] == Region::Prefix && k <= q),
        Region::Block(i) => k == q || block_rule(i, r[k]),
    }
}

pub fn build_mask(layout: &AttentionLayout, kind: MaskKind) -> Result<Mask, MaskError> {
    layout.validate()?;
    let n = layout.len();
    let r = layout.regions();
    let mut data = alloc::vec![false; n * n];
    let rule = |q: usize, k: usize| -> bool {
        let own = |i: usize, reg: Region| reg == Region::Block(i) && k <= q;
        match kind {
            MaskKind::Causal => k <= q,
            MaskKind::SsaSelective => {
                selective_like(&r, q, k, |i, reg| matches!(reg, Region::Slot | Region::Prefix) || own(i, reg))
            }
            MaskKind::SsaBlanket => selective_like(&r, q, k, |i, reg| reg == Region::Slot || own(i, reg)),
            MaskKind::SwaPrefix(w) => selective_like(&r, q, k, |_, reg| match reg {
                Region::Slot | Region::Prefix => true,
                Region::Block(_) => k <= q && q - k < w,
            }),
            MaskKind::CurrentBlockOnly => selective_like(&r, q, k, own),
            MaskKind::ReverseSelective => selective_like(&r, q, k, |i, reg| match reg {
                Region::Slot => true,
                Region::Prefix => false,
                Region::Block(j) => j < i || own(i, reg),
            }),
            MaskKind::RandomMatched { .. } => unreachable!(),
        }
    };
    if let MaskKind::RandomMatched { seed } = kind {
        let target = build_mask(layout, MaskKind::SsaSelective)?.density();
        for q in 0..n {
            data[q * n + q] = true;
        }
        let mut pool: Vec<usize> = (0..n).flat_map(|q| (0..q).map(move |k| q * n + k)).collect();
        if target > n + pool.len() {
            // The selective mask lets slots read ahead; widen to the full square.
            pool = (0..n * n).filter(|&i| i / n != i % n).collect();
        }
        pool.shuffle(&mut crate::rng::child_rng(seed, crate::rng::tag::MASK, 0));
        for &i in &pool[..target.saturating_sub(n)] {
            data[i] = true;
        }
        return Ok(Mask { n, data });
    }
    for q in 0..n {
        for k in 0..n {
            data[q * n + k] = rule(q, k);
        }
    }
    Ok(Mask { n, data })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PositionScheme {
    #[default]
    Absolute,
    /// Every block restarts at the index just past the prefix.
    BlockRelative,
}

pub fn positions(layout: &AttentionLayout, scheme: PositionScheme) -> Vec<u32> {
    let n = layout.len();
    match scheme {
        PositionScheme::Absolute => (0..n as u32).collect(),
        PositionScheme::BlockRelative => {
            let mut out: Vec<u32> = (0..layout.prefix.end as u32).collect();
            for b in &layout.blocks {
                out.extend((0..b.len() as u32).map(|j| layout.prefix.end as u32 + j));
            }
            out
        }
    }
}
