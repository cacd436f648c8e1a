//! Walker packets and their level-by-level advancement.
//!
//! A sample consists of `n_1 + ... + n_p` independent simple random walks
//! grouped into `p` packets. The sample survives a level as long as no
//! lattice cell has been visited by all `p` packets.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::lattice::{Cell, OccupancyGrid};
use crate::rng::{DirectionRule, RngStream};

/// Packet sizes, kept sorted ascending so equivalent layouts compare and
/// hash identically regardless of the order they were written in.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct PacketSpec {
    counts: Vec<u32>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PacketSpecError {
    #[error("need at least two packets")]
    TooFewPackets,
    #[error("every packet needs at least one walker")]
    EmptyPacket,
    #[error("one-byte cell masks support at most {} packets", PacketSpec::MAX_PACKETS)]
    TooManyPackets,
    #[error("packet sizes must be comma-separated positive integers, e.g. \"1,1,2\"")]
    Malformed,
}

impl PacketSpec {
    /// Limit imposed by the one-byte visit masks in the occupancy grid.
    pub const MAX_PACKETS: usize = 8;

    pub fn new(mut counts: Vec<u32>) -> Result<PacketSpec, PacketSpecError> {
        if counts.len() < 2 {
            return Err(PacketSpecError::TooFewPackets);
        }
        if counts.len() > Self::MAX_PACKETS {
            return Err(PacketSpecError::TooManyPackets);
        }
        if counts.contains(&0) {
            return Err(PacketSpecError::EmptyPacket);
        }
        counts.sort_unstable();
        Ok(PacketSpec { counts })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn packet_count(&self) -> usize {
        self.counts.len()
    }

    pub fn walker_count(&self) -> usize {
        self.counts.iter().map(|&n| n as usize).sum()
    }
}

impl FromStr for PacketSpec {
    type Err = PacketSpecError;

    fn from_str(s: &str) -> Result<PacketSpec, PacketSpecError> {
        let counts = s
            .split(',')
            .map(|tok| tok.trim().parse::<u32>())
            .collect::<Result<Vec<u32>, _>>()
            .map_err(|_| PacketSpecError::Malformed)?;
        PacketSpec::new(counts)
    }
}

impl fmt::Display for PacketSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, n) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, ")")
    }
}

/// Conventions that robustness runs vary.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct WalkRules {
    /// Bit window of the generator word that selects step directions.
    pub direction_rule: DirectionRule,
    /// Also record the cell a walker stands on when its level run starts.
    /// Off by default: only cells entered by stepping are recorded, and
    /// boundary cells are never recorded.
    pub record_start_cell: bool,
}

/// Positions of every walker plus the packet each belongs to. Walkers are
/// ordered packet by packet and always advance in that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkerEnsemble {
    positions: Vec<Cell>,
    packet_of: Vec<u8>,
}

impl WalkerEnsemble {
    /// Builds an ensemble from explicit positions, e.g. a frozen master
    /// state. Positions must be ordered packet by packet as produced by
    /// [`scatter_from_origin`].
    pub fn from_positions(spec: &PacketSpec, positions: Vec<Cell>) -> WalkerEnsemble {
        assert_eq!(positions.len(), spec.walker_count());
        WalkerEnsemble {
            positions,
            packet_of: packet_assignment(spec),
        }
    }

    pub fn positions(&self) -> &[Cell] {
        &self.positions
    }

    pub fn walker_count(&self) -> usize {
        self.positions.len()
    }

    pub fn packet_of(&self, walker: usize) -> usize {
        self.packet_of[walker] as usize
    }
}

fn packet_assignment(spec: &PacketSpec) -> Vec<u8> {
    let mut packet_of = Vec::with_capacity(spec.walker_count());
    for (packet, &n) in spec.counts().iter().enumerate() {
        for _ in 0..n {
            packet_of.push(packet as u8);
        }
    }
    packet_of
}

/// Walks every walker independently from the origin until it first stands
/// on the boundary of the radius-`l0` box. Nothing is recorded: the
/// scatter only provides boundary starting points whose distribution is
/// the walk's harmonic measure seen from the origin.
pub fn scatter_from_origin(
    spec: &PacketSpec,
    l0: i32,
    stream: &mut RngStream,
    rules: WalkRules,
) -> WalkerEnsemble {
    assert!(l0 >= 1);
    let packet_of = packet_assignment(spec);
    let positions = packet_of
        .iter()
        .map(|_| {
            let mut cell = Cell::ORIGIN;
            while cell.box_radius() < l0 {
                let (dx, dy) = stream.step_direction(rules.direction_rule).delta();
                cell = cell.offset(dx, dy);
            }
            cell
        })
        .collect();
    WalkerEnsemble {
        positions,
        packet_of,
    }
}

/// Advances one walker until it first stands on the boundary of the
/// radius-`l` box, recording every interior cell it steps on. Returns the
/// boundary cell reached, or None as soon as a visit completes a
/// full-packet intersection.
pub fn advance_walker(
    position: Cell,
    packet: usize,
    l: i32,
    grid: &mut OccupancyGrid,
    stream: &mut RngStream,
    rules: WalkRules,
) -> Option<Cell> {
    debug_assert!(position.box_radius() < l);
    let mut cell = position;
    if rules.record_start_cell && grid.record_visit(cell, packet) {
        return None;
    }
    loop {
        let (dx, dy) = stream.step_direction(rules.direction_rule).delta();
        cell = cell.offset(dx, dy);
        if cell.box_radius() == l {
            return Some(cell);
        }
        if grid.record_visit(cell, packet) {
            return None;
        }
    }
}

/// Verdict of one level run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelOutcome {
    /// Every walker reached the boundary with no full-packet intersection.
    Survived,
    /// Some visit completed an intersection; the run stopped there.
    Intersected,
}

/// Runs each walker in turn out to the radius-`l` boundary. Stops at the
/// first completed intersection, leaving later walkers where they were.
pub fn advance_level(
    ensemble: &mut WalkerEnsemble,
    l: i32,
    grid: &mut OccupancyGrid,
    stream: &mut RngStream,
    rules: WalkRules,
) -> LevelOutcome {
    for walker in 0..ensemble.walker_count() {
        let packet = ensemble.packet_of(walker);
        match advance_walker(ensemble.positions[walker], packet, l, grid, stream, rules) {
            Some(cell) => ensemble.positions[walker] = cell,
            None => return LevelOutcome::Intersected,
        }
    }
    LevelOutcome::Survived
}
