//! Rooted trees, their text form, and reference traversals.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::Rng;

/// Node `0` is the root. `label[i]` is the identifier shown in traces;
/// `children[i]` is the stored child order used by depth-first traversal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Tree {
    pub children: Vec<Vec<u32>>,
    pub label: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Move {
    Visit(u32),
    Up,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TreeTextError {
    #[error("unexpected token {0:?}")]
    Token(String),
    #[error("unbalanced parentheses")]
    Unbalanced,
    #[error("duplicate label N{0}")]
    Duplicate(u32),
}

impl Tree {
    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn parent(&self) -> Vec<Option<u32>> {
        let mut p = alloc::vec![None; self.len()];
        for (i, cs) in self.children.iter().enumerate() {
            for &c in cs {
                p[c as usize] = Some(i as u32);
            }
        }
        p
    }

    /// Random tree: nodes are expanded breadth-first, each receiving a number
    /// of children drawn from `branching`, until `n` nodes exist.
    pub fn random(n: usize, branching: &[usize], rng: &mut Rng) -> Self {
        assert!(n >= 1 && !branching.is_empty());
        let mut children: Vec<Vec<u32>> = alloc::vec![Vec::new()];
        let mut queue = VecDeque::from([0u32]);
        while children.len() < n {
            let u = queue.pop_front().expect("frontier never empties before n nodes");
            let b = branching[rng.gen_range(0..branching.len())].min(n - children.len());
            for _ in 0..b {
                let c = children.len() as u32;
                children.push(Vec::new());
                children[u as usize].push(c);
                queue.push_back(c);
            }
        }
        let label = (0..n as u32).collect();
        Self { children, label }
    }

    /// Root with `k` leaf children in index order.
    pub fn star(k: usize) -> Self {
        let mut children = alloc::vec![Vec::new(); k + 1];
        children[0] = (1..=k as u32).collect();
        Self { children, label: (0..=k as u32).collect() }
    }

    /// Replace labels with distinct draws from `0..pool` and shuffle the
    /// stored child order.
    pub fn relabel(mut self, pool: u32, rng: &mut Rng) -> Self {
        assert!(pool as usize >= self.len());
        let mut ids: Vec<u32> = (0..pool).collect();
        ids.shuffle(rng);
        self.label = ids[..self.len()].to_vec();
        for cs in &mut self.children {
            cs.shuffle(rng);
        }
        self
    }

    /// `N<root> ( child child ... )` with nested groups for internal nodes.
    pub fn to_text(&self) -> String {
        fn go(t: &Tree, u: u32, out: &mut Vec<String>) {
            out.push(format!("N{}", t.label[u as usize]));
            let cs = &t.children[u as usize];
            if !cs.is_empty() {
                out.push("(".into());
                for &c in cs {
                    go(t, c, out);
                }
                out.push(")".into());
            }
        }
        let mut out = Vec::new();
        go(self, 0, &mut out);
        out.join(" ")
    }

    pub fn from_text(text: &str) -> Result<Self, TreeTextError> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let mut t = Tree { children: Vec::new(), label: Vec::new() };
        let mut stack: Vec<u32> = Vec::new();
        let mut last: Option<u32> = None;
        for tok in toks {
            match tok {
                "(" => stack.push(last.ok_or(TreeTextError::Unbalanced)?),
                ")" => {
                    stack.pop().ok_or(TreeTextError::Unbalanced)?;
                    last = None;
                }
                _ => {
                    let id: u32 = tok.strip_prefix('N').and_then(|s| s.parse().ok()).ok_or_else(|| TreeTextError::Token(tok.into()))?;
                    if t.label.contains(&id) {
                        return Err(TreeTextError::Duplicate(id));
                    }
                    let node = t.label.len() as u32;
                    if node > 0 && stack.is_empty() {
                        return Err(TreeTextError::Unbalanced);
                    }
                    t.label.push(id);
                    t.children.push(Vec::new());
                    if let Some(&p) = stack.last() {
                        t.children[p as usize].push(node);
                    }
                    last = Some(node);
                }
            }
        }
        if !stack.is_empty() || t.label.is_empty() {
            return Err(TreeTextError::Unbalanced);
        }
        Ok(t)
    }

    pub fn dfs_order(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![0u32];
        while let Some(u) = stack.pop() {
            out.push(u);
            stack.extend(self.children[u as usize].iter().rev());
        }
        out
    }

    pub fn bfs_order(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut q = VecDeque::from([0u32]);
        while let Some(u) = q.pop_front() {
            out.push(u);
            q.extend(self.children[u as usize].iter().copied());
        }
        out
    }

    /// Depth-first walk with explicit returns: every visit of a non-root node
    /// is eventually matched by an `Up`, and the walk ends with an `Up` from
    /// the root once all its children are done.
    pub fn dfs_moves(&self) -> Vec<Move> {
        fn go(t: &Tree, u: u32, out: &mut Vec<Move>) {
            for &c in &t.children[u as usize] {
                out.push(Move::Visit(c));
                go(t, c, out);
                out.push(Move::Up);
            }
        }
        let mut out = Vec::new();
        go(self, 0, &mut out);
        out.push(Move::Up);
        out
    }
}
