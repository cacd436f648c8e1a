//! Deterministic pseudo-random streams driving the walk simulation.
//!
//! Every sample in a campaign owns a private stream spawned from the
//! campaign seed and the sample index, so results do not depend on how
//! samples are scheduled across worker threads.

use serde::{Deserialize, Serialize};

/// Multiplier of the 64-bit linear congruential generator.
pub const LCG_MULTIPLIER: u64 = 6364136223846793005;
/// Increment of the 64-bit linear congruential generator.
pub const LCG_INCREMENT: u64 = 1;

/// Odd constant mixed into the base seed when spawning numbered
/// substreams, so nearby indices land on distant starting states.
const STREAM_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
/// Steps a freshly spawned stream is advanced before first use.
const SPAWN_WARMUP: u32 = 8;

/// One lattice step on Z^2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// (+1, 0)
    East,
    /// (-1, 0)
    West,
    /// (0, +1)
    North,
    /// (0, -1)
    South,
}

impl Direction {
    /// Maps a two-bit index to a direction: 0 east, 1 west, 2 north, 3 south.
    #[inline]
    pub fn from_index(index: u8) -> Direction {
        match index & 3 {
            0 => Direction::East,
            1 => Direction::West,
            2 => Direction::North,
            _ => Direction::South,
        }
    }

    /// The (dx, dy) of this step.
    #[inline]
    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::East => (1, 0),
            Direction::West => (-1, 0),
            Direction::North => (0, 1),
            Direction::South => (0, -1),
        }
    }
}

/// Which two bits of the raw generator word select a step direction.
///
/// Low LCG bits have short periods, so directions are read from near the
/// top of the word. Campaigns can be repeated under the alternative
/// window to check that results do not depend on the choice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionRule {
    /// Bits 63..62.
    #[default]
    TopBits,
    /// Bits 59..58.
    MidBits,
}

impl DirectionRule {
    #[inline]
    pub(crate) fn index(self, raw: u64) -> u8 {
        match self {
            DirectionRule::TopBits => (raw >> 62) as u8,
            DirectionRule::MidBits => ((raw >> 58) & 3) as u8,
        }
    }
}

/// A 64-bit linear congruential stream:
///
/// ```text
/// state' = state * LCG_MULTIPLIER + LCG_INCREMENT   (mod 2^64)
/// ```
///
/// The increment is odd and the multiplier is 1 mod 4, so every starting
/// state yields the full period of 2^64.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    /// Starts a stream at an explicit state. Campaign code should prefer
    /// [`spawn_stream`].
    pub fn from_state(state: u64) -> RngStream {
        RngStream { state }
    }

    /// Current state, usable to reproduce the stream exactly.
    pub fn state(self) -> u64 {
        self.state
    }

    /// Advances one step and returns the new state word.
    #[inline]
    pub fn next_raw(&mut self) -> u64 {
        self.state = self
            .state
            .wrapping_mul(LCG_MULTIPLIER)
            .wrapping_add(LCG_INCREMENT);
        self.state
    }

    /// Uniform draw in [0, 1) from the top 53 bits of the next word.
    #[inline]
    pub fn unit_uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / 9007199254740992.0; // 2^-53
        (self.next_raw() >> 11) as f64 * SCALE
    }

    /// Draws one of the four axis directions from the next word.
    #[inline]
    pub fn step_direction(&mut self, rule: DirectionRule) -> Direction {
        Direction::from_index(rule.index(self.next_raw()))
    }
}

/// Creates the `index`-th substream of a campaign seeded with `base_seed`.
///
/// The index is XOR-folded into the seed as a multiple of an odd salt, so
/// distinct indices give distinct starting states under any base seed;
/// warm-up steps then separate states whose mix differs in few bits.
pub fn spawn_stream(base_seed: u64, index: u64) -> RngStream {
    let mut stream = RngStream::from_state(base_seed ^ index.wrapping_mul(STREAM_SALT));
    for _ in 0..SPAWN_WARMUP {
        stream.next_raw();
    }
    stream
}

/// The state reached by `spawn_stream(base_seed, index)`, used as a fresh
/// base seed for a nested family of substreams.
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    spawn_stream(base_seed, index).state()
}
