use std::collections::{BTreeMap, BTreeSet};

/// Size of the context id space.
pub const CID_SPACE: u32 = 1 << 24;

/// Per-rank context id bookkeeping. Ids held by an allocation still in
/// progress are reserved so that concurrent allocations at the same rank
/// never settle on the same id.
#[derive(Clone, Debug, Default)]
pub(crate) struct CidTable {
    used: BTreeSet<u32>,
    reserved: BTreeMap<u32, u64>,
}

impl CidTable {
    pub fn new() -> Self {
        Self::default()
    }

    #[cfg(test)]
    pub fn is_used(&self, c: u32) -> bool {
        self.used.contains(&c)
    }

    pub fn mark_used(&mut self, c: u32) {
        self.used.insert(c);
    }

    fn free_for(&self, c: u32, owner: Option<u64>) -> bool {
        !self.used.contains(&c)
            && match self.reserved.get(&c) {
                None => true,
                Some(o) => Some(*o) == owner,
            }
    }

    /// Lowest `c >= floor` with `[c, c + block)` free.
    pub fn lowest_free(&self, floor: u32, block: u32) -> Option<u32> {
        let mut c = floor;
        'outer: while c.checked_add(block)? <= CID_SPACE {
            for i in 0..block {
                if !self.free_for(c + i, None) {
                    c = c + i + 1;
                    continue 'outer;
                }
            }
            return Some(c);
        }
        None
    }

    /// Reserves `[start, start + block)` for `owner` if every id is free or
    /// already held by `owner`.
    pub fn try_reserve(&mut self, start: u32, block: u32, owner: u64) -> bool {
        let Some(end) = start.checked_add(block).filter(|&e| e <= CID_SPACE) else {
            return false;
        };
        if !(start..end).all(|c| self.free_for(c, Some(owner))) {
            return false;
        }
        for c in start..end {
            self.reserved.insert(c, owner);
        }
        true
    }

    pub fn release(&mut self, owner: u64) {
        self.reserved.retain(|_, o| *o != owner);
    }

    pub fn commit(&mut self, start: u32, block: u32, owner: u64) {
        self.release(owner);
        for c in start..start + block {
            self.used.insert(c);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowest_free_skips_used_and_reserved() {
        let mut t = CidTable::new();
        t.mark_used(0);
        t.mark_used(2);
        assert_eq!(t.lowest_free(0, 1), Some(1));
        assert_eq!(t.lowest_free(0, 2), Some(3));
        assert!(t.try_reserve(1, 1, 7));
        assert_eq!(t.lowest_free(0, 1), Some(3));
        assert!(t.try_reserve(1, 1, 7));
        assert!(!t.try_reserve(1, 1, 8));
        t.release(7);
        assert_eq!(t.lowest_free(0, 1), Some(1));
        t.commit(1, 1, 9);
        assert!(t.is_used(1));
    }

    #[test]
    fn exhaustion() {
        let t = CidTable::new();
        assert_eq!(t.lowest_free(CID_SPACE - 1, 1), Some(CID_SPACE - 1));
        assert_eq!(t.lowest_free(CID_SPACE - 1, 2), None);
        assert_eq!(t.lowest_free(CID_SPACE, 1), None);
    }
}
