use alloc::vec::Vec;

pub type Var = u32;
pub type Val = u8;

/// Set of values for one variable, stored as a bitmask (values 0..64).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValueSet(pub u64);

impl ValueSet {
    pub const EMPTY: Self = Self(0);

    pub fn full(k: usize) -> Self {
        if k >= 64 {
            Self(u64::MAX)
        } else {
            Self((1u64 << k) - 1)
        }
    }

    pub fn single(v: Val) -> Self {
        Self(1u64 << v)
    }

    pub fn contains(self, v: Val) -> bool {
        v < 64 && (self.0 >> v) & 1 == 1
    }

    pub fn insert(&mut self, v: Val) {
        self.0 |= 1u64 << v;
    }

    pub fn remove(&mut self, v: Val) {
        self.0 &= !(1u64 << v);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn first(self) -> Option<Val> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as Val)
    }

    pub fn minus(self, other: Self) -> Self {
        Self(self.0 & !other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Val> {
        let mut bits = self.0;
        core::iter::from_fn(move || {
            if bits == 0 {
                return None;
            }
            let v = bits.trailing_zeros();
            bits &= bits - 1;
            Some(v as Val)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrailEntry {
    pub var: Var,
    pub value: Val,
    pub level: u32,
    pub forced: bool,
    /// Constraint that forced the value; `None` for decisions.
    pub reason: Option<u32>,
}

/// Decision frame for one level: the branched variable, the values already
/// attempted there, and the levels blamed by earlier failures at this level.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Frame {
    pub var: Var,
    pub tried: ValueSet,
    pub blame: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Conflict {
    /// Falsified clause, wiped-out node, or failed parse point.
    pub id: u32,
    /// Assigned variables whose values make the constraint fail.
    pub vars: Vec<Var>,
    /// Decision levels reached by following reasons back from `vars`, ascending.
    pub levels: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SearchState {
    pub assignment: Vec<Option<Val>>,
    pub domains: Vec<ValueSet>,
    pub trail: Vec<TrailEntry>,
    /// `frames[l - 1]` belongs to decision level `l`.
    pub frames: Vec<Frame>,
    pub conflict: Option<Conflict>,
    pub level: u32,
}

impl SearchState {
    pub fn empty(num_vars: usize) -> Self {
        Self {
            assignment: alloc::vec![None; num_vars],
            domains: alloc::vec![ValueSet::EMPTY; num_vars],
            trail: Vec::new(),
            frames: Vec::new(),
            conflict: None,
            level: 0,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.assignment.len()
    }

    /// Values already attempted at a decision level.
    pub fn tried(&self, level: u32) -> ValueSet {
        if level == 0 {
            return ValueSet::EMPTY;
        }
        self.frames.get(level as usize - 1).map(|f| f.tried).unwrap_or_default()
    }

    pub fn decision_var(&self, level: u32) -> Option<Var> {
        if level == 0 {
            return None;
        }
        self.frames.get(level as usize - 1).map(|f| f.var)
    }

    pub fn num_assigned(&self) -> usize {
        self.assignment.iter().filter(|a| a.is_some()).count()
    }

    pub fn has_conflict(&self) -> bool {
        self.conflict.is_some()
    }

    pub fn entry(&self, var: Var) -> Option<&TrailEntry> {
        self.trail.iter().find(|e| e.var == var)
    }

    /// Assignment restricted to trail entries below `level`.
    pub fn assignment_below(&self, level: u32) -> Vec<Option<Val>> {
        let mut a = alloc::vec![None; self.num_vars()];
        for e in self.trail.iter().filter(|e| e.level < level) {
            a[e.var as usize] = Some(e.value);
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_set_ops() {
        let mut s = ValueSet::full(4);
        assert_eq!(s.len(), 4);
        s.remove(0);
        assert_eq!(s.first(), Some(1));
        assert_eq!(s.iter().collect::<Vec<_>>(), alloc::vec![1, 2, 3]);
        assert!(s.minus(ValueSet::single(1)).contains(2));
        assert!(ValueSet::EMPTY.is_empty());
        assert_eq!(ValueSet::full(64).len(), 64);
    }
}
