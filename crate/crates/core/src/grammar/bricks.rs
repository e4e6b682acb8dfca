use serde::{Deserialize, Serialize};

use super::SymbolId;

/// Dense integer id of a `(symbol, pose)` brick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BrickId(pub u32);

impl BrickId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A brick as symbol plus flat pose index within the symbol's pose space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Brick {
    pub symbol: SymbolId,
    pub pose: u32,
}

/// Bijection between bricks and ids. Each symbol owns a contiguous id range,
/// in symbol order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BrickTable {
    // offsets[a]..offsets[a + 1] are the ids of symbol a
    offsets: Vec<u32>,
}

impl BrickTable {
    pub fn new(pose_counts: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0u32];
        let mut total: u64 = 0;
        for n in pose_counts {
            total += n as u64;
            assert!(total <= u32::MAX as u64, "brick count overflows u32");
            offsets.push(total as u32);
        }
        BrickTable { offsets }
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn id(&self, symbol: SymbolId, pose: u32) -> BrickId {
        debug_assert!(pose < self.offsets[symbol.index() + 1] - self.offsets[symbol.index()]);
        BrickId(self.offsets[symbol.index()] + pose)
    }

    pub fn brick(&self, id: BrickId) -> Brick {
        // partition_point gives the first symbol whose range starts past id
        let a = self.offsets.partition_point(|&o| o <= id.0) - 1;
        Brick { symbol: SymbolId(a as u32), pose: id.0 - self.offsets[a] }
    }

    pub fn range(&self, symbol: SymbolId) -> std::ops::Range<u32> {
        self.offsets[symbol.index()]..self.offsets[symbol.index() + 1]
    }

    pub fn symbol_of(&self, id: BrickId) -> SymbolId {
        self.brick(id).symbol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn id_round_trip(counts in proptest::collection::vec(1usize..50, 1..6)) {
            let table = BrickTable::new(counts.iter().copied());
            prop_assert_eq!(table.len(), counts.iter().sum::<usize>());
            for id in 0..table.len() as u32 {
                let b = table.brick(BrickId(id));
                prop_assert_eq!(table.id(b.symbol, b.pose), BrickId(id));
            }
        }
    }

    #[test]
    fn ranges_are_contiguous() {
        let table = BrickTable::new([3, 0, 2]);
        assert_eq!(table.range(SymbolId(0)), 0..3);
        assert_eq!(table.range(SymbolId(1)), 3..3);
        assert_eq!(table.range(SymbolId(2)), 3..5);
        assert_eq!(table.brick(BrickId(3)).symbol, SymbolId(2));
    }
}
