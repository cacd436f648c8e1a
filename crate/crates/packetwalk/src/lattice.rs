//! Occupancy tracking for packet traces on the square lattice.
//!
//! Each cell carries a one-byte bitmask of the packets that have visited
//! it, so intersection of all packets is detected online: the visit that
//! fills the mask is the first moment every packet has touched the cell.

use std::collections::{HashMap, HashSet};

/// A lattice site.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const ORIGIN: Cell = Cell { x: 0, y: 0 };

    pub fn new(x: i32, y: i32) -> Cell {
        Cell { x, y }
    }

    /// Chebyshev distance from the origin: the radius of the smallest
    /// centered box whose boundary contains this cell.
    #[inline]
    pub fn box_radius(self) -> i32 {
        self.x.abs().max(self.y.abs())
    }

    #[inline]
    pub fn offset(self, dx: i32, dy: i32) -> Cell {
        Cell {
            x: self.x + dx,
            y: self.y + dy,
        }
    }
}

/// Journal position to which grid state can be rolled back.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Watermark(usize);

enum MaskStore {
    /// Flat array over the box of the given half-extent; one byte per cell.
    Dense { side: usize, masks: Vec<u8> },
    /// Hash map holding only visited cells, for boxes whose dense
    /// footprint would exceed the memory budget.
    Sparse { masks: HashMap<Cell, u8> },
}

impl MaskStore {
    #[inline]
    fn get(&self, cell: Cell, half_extent: i32) -> u8 {
        match self {
            MaskStore::Dense { side, masks } => {
                masks[dense_index(cell, half_extent, *side)]
            }
            MaskStore::Sparse { masks } => masks.get(&cell).copied().unwrap_or(0),
        }
    }

    #[inline]
    fn set(&mut self, cell: Cell, half_extent: i32, mask: u8) {
        match self {
            MaskStore::Dense { side, masks } => {
                masks[dense_index(cell, half_extent, *side)] = mask;
            }
            MaskStore::Sparse { masks } => {
                if mask == 0 {
                    masks.remove(&cell);
                } else {
                    masks.insert(cell, mask);
                }
            }
        }
    }
}

#[inline]
fn dense_index(cell: Cell, half_extent: i32, side: usize) -> usize {
    debug_assert!(cell.x.abs() <= half_extent && cell.y.abs() <= half_extent);
    let row = (cell.y + half_extent) as usize;
    let col = (cell.x + half_extent) as usize;
    row * side + col
}

/// Per-cell visit masks with an undo journal.
///
/// The journal records every mask transition, so state can be rolled back
/// to any watermark in time proportional to the cells touched since then,
/// never to the grid size. That keeps per-sample cleanup cheap on large
/// boxes and lets trial runs restore a frozen master state exactly.
pub struct OccupancyGrid {
    half_extent: i32,
    packet_count: usize,
    full_mask: u8,
    store: MaskStore,
    journal: Vec<(Cell, u8)>,
}

impl OccupancyGrid {
    /// Bytes a dense grid of the given half-extent would allocate.
    pub fn dense_bytes(half_extent: i32) -> u128 {
        let side = 2 * half_extent as u128 + 1;
        side * side
    }

    /// Dense grid covering |x|, |y| <= half_extent.
    pub fn dense(half_extent: i32, packet_count: usize) -> OccupancyGrid {
        assert!(half_extent >= 1);
        let side = 2 * half_extent as usize + 1;
        OccupancyGrid {
            half_extent,
            packet_count: checked_packet_count(packet_count),
            full_mask: full_mask(packet_count),
            store: MaskStore::Dense {
                side,
                masks: vec![0; side * side],
            },
            journal: Vec::new(),
        }
    }

    /// Sparse grid covering the same box without the dense allocation.
    pub fn sparse(half_extent: i32, packet_count: usize) -> OccupancyGrid {
        assert!(half_extent >= 1);
        OccupancyGrid {
            half_extent,
            packet_count: checked_packet_count(packet_count),
            full_mask: full_mask(packet_count),
            store: MaskStore::Sparse {
                masks: HashMap::new(),
            },
            journal: Vec::new(),
        }
    }

    pub fn half_extent(&self) -> i32 {
        self.half_extent
    }

    pub fn packet_count(&self) -> usize {
        self.packet_count
    }

    /// Marks `cell` as visited by `packet`. Returns true when the visit
    /// completes the cell, i.e. every packet has now touched it.
    #[inline]
    pub fn record_visit(&mut self, cell: Cell, packet: usize) -> bool {
        debug_assert!(packet < self.packet_count);
        assert!(
            cell.box_radius() <= self.half_extent,
            "cell ({}, {}) outside grid of half-extent {}",
            cell.x,
            cell.y,
            self.half_extent
        );
        let old = self.store.get(cell, self.half_extent);
        let new = old | (1 << packet);
        if new != old {
            self.journal.push((cell, old));
            self.store.set(cell, self.half_extent, new);
        }
        new == self.full_mask
    }

    /// Current visit mask of a cell.
    pub fn mask_at(&self, cell: Cell) -> u8 {
        assert!(cell.box_radius() <= self.half_extent);
        self.store.get(cell, self.half_extent)
    }

    /// Position to which [`undo_to`](Self::undo_to) can later roll back.
    pub fn watermark(&self) -> Watermark {
        Watermark(self.journal.len())
    }

    /// Rolls every mask transition after `mark` back, newest first.
    pub fn undo_to(&mut self, mark: Watermark) {
        assert!(mark.0 <= self.journal.len(), "watermark from a later state");
        while self.journal.len() > mark.0 {
            let (cell, old) = self.journal.pop().expect("journal length checked");
            self.store.set(cell, self.half_extent, old);
        }
    }

    /// Clears every visit, returning the grid to the all-zero state.
    pub fn reset(&mut self) {
        self.undo_to(Watermark(0));
    }

    /// The visited cells with their current masks, sorted by coordinates.
    ///
    /// Walks the journal rather than the store, so the cost scales with
    /// the cells touched, not the grid area.
    pub fn visited_masks(&self) -> Vec<(Cell, u8)> {
        let mut cells: Vec<Cell> = self
            .journal
            .iter()
            .map(|&(cell, _)| cell)
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        cells.sort();
        cells
            .into_iter()
            .filter_map(|cell| {
                let mask = self.store.get(cell, self.half_extent);
                (mask != 0).then_some((cell, mask))
            })
            .collect()
    }

    /// Installs frozen visit masks into a clean grid. The loads are
    /// journaled, so a later reset or rollback removes them.
    pub fn load_masks(&mut self, masks: &[(Cell, u8)]) {
        for &(cell, mask) in masks {
            assert!(cell.box_radius() <= self.half_extent);
            assert!(mask != 0 && mask & !self.full_mask == 0, "mask {mask:#x}");
            let old = self.store.get(cell, self.half_extent);
            debug_assert_eq!(old, 0, "loading into a non-clean grid");
            self.journal.push((cell, old));
            self.store.set(cell, self.half_extent, mask);
        }
    }
}

fn checked_packet_count(packet_count: usize) -> usize {
    assert!(
        (1..=8).contains(&packet_count),
        "one-byte masks support 1 to 8 packets, got {packet_count}"
    );
    packet_count
}

fn full_mask(packet_count: usize) -> u8 {
    if packet_count == 8 {
        u8::MAX
    } else {
        (1u8 << packet_count) - 1
    }
}

/// True when some cell belongs to every packet's visited set.
///
/// Reference implementation against which the online detection in
/// [`OccupancyGrid::record_visit`] is tested.
pub fn intersection_nonempty(per_packet: &[HashSet<Cell>]) -> bool {
    let Some(smallest) = per_packet.iter().min_by_key(|set| set.len()) else {
        return false;
    };
    smallest
        .iter()
        .any(|cell| per_packet.iter().all(|set| set.contains(cell)))
}
