//! Nested-box schedules and survival campaigns.
//!
//! A campaign releases many independent samples. Each sample scatters its
//! walkers to the boundary of the base box, then advances them boundary to
//! boundary through a growing schedule of boxes until some cell has been
//! visited by every packet. The per-level survivor counts are the raw
//! material for the exponent estimators.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lattice::OccupancyGrid;
use crate::rng::spawn_stream;
use crate::walkers::{
    advance_level, scatter_from_origin, LevelOutcome, PacketSpec, WalkRules,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("growth ratio must exceed 1")]
    GrowthNotAboveOne,
    #[error("growth ratio must be a positive decimal like \"1.1\" or a fraction like \"11/10\"")]
    MalformedGrowth,
    #[error("need 2 <= base radius < top radius, got {l0} and {lmax}")]
    InvalidBounds { l0: u32, lmax: u32 },
    #[error("levels must be strictly increasing positive radii")]
    NotIncreasing,
    #[error("need at least two levels")]
    TooFewLevels,
    #[error("radius {0} does not fit a 32-bit signed coordinate")]
    RadiusTooLarge(u64),
}

/// Exact rational growth factor for the box schedule. Kept as integers so
/// the generated radii are reproducible: no rounding is involved beyond
/// one floor per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GrowthRatio {
    numerator: u64,
    denominator: u64,
}

impl GrowthRatio {
    pub fn new(numerator: u64, denominator: u64) -> Result<GrowthRatio, ScheduleError> {
        if denominator == 0 || numerator <= denominator {
            return Err(ScheduleError::GrowthNotAboveOne);
        }
        let g = gcd(numerator, denominator);
        Ok(GrowthRatio {
            numerator: numerator / g,
            denominator: denominator / g,
        })
    }

    /// Parses "1.1", "11/10", or "2".
    pub fn parse(text: &str) -> Result<GrowthRatio, ScheduleError> {
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let numerator: u64 = num.trim().parse().map_err(|_| ScheduleError::MalformedGrowth)?;
            let denominator: u64 = den.trim().parse().map_err(|_| ScheduleError::MalformedGrowth)?;
            return GrowthRatio::new(numerator, denominator);
        }
        let (integral, fraction) = match text.split_once('.') {
            Some((i, f)) => (i, f),
            None => (text, ""),
        };
        if integral.is_empty() && fraction.is_empty() {
            return Err(ScheduleError::MalformedGrowth);
        }
        if !integral.chars().all(|c| c.is_ascii_digit())
            || !fraction.chars().all(|c| c.is_ascii_digit())
            || fraction.len() > 18
        {
            return Err(ScheduleError::MalformedGrowth);
        }
        let whole: u64 = if integral.is_empty() {
            0
        } else {
            integral.parse().map_err(|_| ScheduleError::MalformedGrowth)?
        };
        let denominator = 10u64.pow(fraction.len() as u32);
        let frac: u64 = if fraction.is_empty() {
            0
        } else {
            fraction.parse().map_err(|_| ScheduleError::MalformedGrowth)?
        };
        let numerator = whole
            .checked_mul(denominator)
            .and_then(|w| w.checked_add(frac))
            .ok_or(ScheduleError::MalformedGrowth)?;
        GrowthRatio::new(numerator, denominator)
    }

    /// The next radius: `max(floor(ratio * l), l + 1)`.
    fn next_radius(self, l: u64) -> Result<u64, ScheduleError> {
        let scaled = l
            .checked_mul(self.numerator)
            .ok_or(ScheduleError::RadiusTooLarge(l))?
            / self.denominator;
        Ok(scaled.max(l + 1))
    }
}

impl std::fmt::Display for GrowthRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Strictly increasing box radii `L_0 < L_1 < ... < L_K`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct BoxSchedule {
    levels: Vec<u32>,
}

impl BoxSchedule {
    /// Grows levels from `l0` by `growth`, clamping the last level to
    /// exactly `lmax`.
    pub fn build(l0: u32, growth: GrowthRatio, lmax: u32) -> Result<BoxSchedule, ScheduleError> {
        if l0 < 2 || lmax <= l0 {
            return Err(ScheduleError::InvalidBounds { l0, lmax });
        }
        if lmax > i32::MAX as u32 {
            return Err(ScheduleError::RadiusTooLarge(lmax as u64));
        }
        let mut levels = vec![l0];
        loop {
            let last = *levels.last().expect("nonempty") as u64;
            let next = growth.next_radius(last)?;
            if next >= lmax as u64 {
                levels.push(lmax);
                return Ok(BoxSchedule { levels });
            }
            levels.push(next as u32);
        }
    }

    /// Wraps explicit radii, e.g. from an ingested survivor table.
    pub fn from_levels(levels: Vec<u32>) -> Result<BoxSchedule, ScheduleError> {
        if levels.len() < 2 {
            return Err(ScheduleError::TooFewLevels);
        }
        if levels[0] == 0 || levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ScheduleError::NotIncreasing);
        }
        if *levels.last().expect("nonempty") > i32::MAX as u32 {
            return Err(ScheduleError::RadiusTooLarge(
                *levels.last().expect("nonempty") as u64,
            ));
        }
        Ok(BoxSchedule { levels })
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// Index of the outermost level, `K`.
    pub fn top_index(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn top_radius(&self) -> u32 {
        *self.levels.last().expect("nonempty")
    }

    /// Index of the level with exactly this radius, if present.
    pub fn index_of_radius(&self, radius: u32) -> Option<usize> {
        self.levels.binary_search(&radius).ok()
    }

    /// `q_l = L_l / L_{l+1}`, the radius ratio of transition `l`.
    pub fn radius_ratio(&self, l: usize) -> f64 {
        self.levels[l] as f64 / self.levels[l + 1] as f64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CountsError {
    #[error("need one count per level: {counts} counts for {levels} levels")]
    LengthMismatch { counts: usize, levels: usize },
    #[error("survivor counts must be non-increasing, but count {at} rises")]
    Increasing { at: usize },
}

/// Survivor counts over a schedule: `counts[k]` samples reached level `k`
/// alive, so the sequence is non-increasing and `counts[0]` is the number
/// of samples released.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SurvivalCounts {
    pub schedule: BoxSchedule,
    pub counts: Vec<u64>,
    /// Packet layout, when known. Ingested tables may omit it.
    pub packets: Option<PacketSpec>,
    /// Campaign seed, when the counts came from a local simulation.
    pub base_seed: Option<u64>,
}

impl SurvivalCounts {
    pub fn validate(&self) -> Result<(), CountsError> {
        if self.counts.len() != self.schedule.levels().len() {
            return Err(CountsError::LengthMismatch {
                counts: self.counts.len(),
                levels: self.schedule.levels().len(),
            });
        }
        if let Some(at) = self.counts.windows(2).position(|w| w[1] > w[0]) {
            return Err(CountsError::Increasing { at: at + 1 });
        }
        Ok(())
    }

    /// Hex SHA-256 over the levels and counts, identifying the estimator
    /// input exactly.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.schedule.levels().len() as u64).to_le_bytes());
        for (&level, &count) in self.schedule.levels().iter().zip(&self.counts) {
            hasher.update((level as u64).to_le_bytes());
            hasher.update(count.to_le_bytes());
        }
        to_hex(&hasher.finalize())
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        write!(s, "{b:02x}").expect("writing to a String cannot fail");
        s
    })
}

static SAMPLES_SIMULATED: AtomicU64 = AtomicU64::new(0);

/// Total samples simulated by this process. Lets tests confirm that pure
/// estimation paths never touch the simulator.
pub fn samples_simulated() -> u64 {
    SAMPLES_SIMULATED.load(Ordering::Relaxed)
}

/// Runs one sample through the schedule and returns the highest level
/// index it reached alive (0 means it died on the way to level 1). The
/// grid must be clean and is rolled back before returning.
pub fn run_sample(
    spec: &PacketSpec,
    schedule: &BoxSchedule,
    stream: &mut crate::rng::RngStream,
    grid: &mut OccupancyGrid,
    rules: WalkRules,
) -> usize {
    assert!(grid.half_extent() >= schedule.top_radius() as i32);
    assert_eq!(grid.packet_count(), spec.packet_count());
    SAMPLES_SIMULATED.fetch_add(1, Ordering::Relaxed);
    let mark = grid.watermark();
    let levels = schedule.levels();
    let mut ensemble = scatter_from_origin(spec, levels[0] as i32, stream, rules);
    let mut reached = 0;
    for (k, &l) in levels.iter().enumerate().skip(1) {
        match advance_level(&mut ensemble, l as i32, grid, stream, rules) {
            LevelOutcome::Survived => reached = k,
            LevelOutcome::Intersected => break,
        }
    }
    grid.undo_to(mark);
    reached
}

/// How sample grids are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Dense when it fits the budget, sparse otherwise.
    Auto,
    Dense,
    Sparse,
}

/// Grid storage choice plus the per-grid memory budget it must respect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MemoryPolicy {
    pub mode: GridMode,
    /// Budget in bytes for one worker's dense grid.
    pub budget_bytes: u64,
}

impl Default for MemoryPolicy {
    fn default() -> MemoryPolicy {
        MemoryPolicy {
            mode: GridMode::Auto,
            budget_bytes: 2 * 1024 * 1024 * 1024,
        }
    }
}

impl MemoryPolicy {
    /// Decides dense versus sparse for a grid of this half-extent.
    pub fn use_dense(&self, half_extent: i32) -> Result<bool, CampaignError> {
        let needed = OccupancyGrid::dense_bytes(half_extent);
        match self.mode {
            GridMode::Sparse => Ok(false),
            GridMode::Dense => {
                if needed > self.budget_bytes as u128 {
                    Err(CampaignError::GridBudget {
                        half_extent,
                        needed,
                        budget: self.budget_bytes,
                    })
                } else {
                    Ok(true)
                }
            }
            GridMode::Auto => Ok(needed <= self.budget_bytes as u128),
        }
    }

    pub(crate) fn make_grid(
        &self,
        half_extent: i32,
        packet_count: usize,
    ) -> Result<OccupancyGrid, CampaignError> {
        Ok(if self.use_dense(half_extent)? {
            OccupancyGrid::dense(half_extent, packet_count)
        } else {
            OccupancyGrid::sparse(half_extent, packet_count)
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(
        "dense grid of half-extent {half_extent} needs {needed} bytes, over the {budget}-byte budget; \
         use sparse or auto grid mode"
    )]
    GridBudget {
        half_extent: i32,
        needed: u128,
        budget: u64,
    },
    #[error("resume state does not match the campaign: {0}")]
    ResumeMismatch(String),
    #[error("observer failed: {0}")]
    Observer(#[from] std::io::Error),
    #[error("could not build the worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Campaign parameters beyond the packet layout and schedule.
#[derive(Clone, Debug, Serialize)]
pub struct CampaignOptions {
    pub sample_count: u64,
    pub base_seed: u64,
    pub workers: usize,
    pub rules: WalkRules,
    pub memory: MemoryPolicy,
    /// Samples between observer calls (checkpoint granularity).
    pub block_size: u64,
}

impl CampaignOptions {
    pub fn new(sample_count: u64, base_seed: u64) -> CampaignOptions {
        CampaignOptions {
            sample_count,
            base_seed,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            rules: WalkRules::default(),
            memory: MemoryPolicy::default(),
            block_size: 1_000_000,
        }
    }
}

/// Completed-sample snapshot, sufficient to continue a campaign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignProgress {
    pub completed: u64,
    /// Cumulative survivor counts over the samples completed so far.
    pub counts: Vec<u64>,
}

impl CampaignProgress {
    pub fn fresh(schedule: &BoxSchedule) -> CampaignProgress {
        CampaignProgress {
            completed: 0,
            counts: vec![0; schedule.levels().len()],
        }
    }
}

/// Runs a full campaign. Sample `i` draws from `spawn_stream(base_seed, i)`
/// and nothing else, so the counts are identical for any worker count.
pub fn run_campaign(
    spec: &PacketSpec,
    schedule: &BoxSchedule,
    options: &CampaignOptions,
) -> Result<SurvivalCounts, CampaignError> {
    run_campaign_from(
        spec,
        schedule,
        options,
        CampaignProgress::fresh(schedule),
        |_| Ok(()),
    )
}

/// Runs a campaign from an earlier progress snapshot, invoking `observer`
/// after every completed block (for checkpointing or progress display).
pub fn run_campaign_from(
    spec: &PacketSpec,
    schedule: &BoxSchedule,
    options: &CampaignOptions,
    start: CampaignProgress,
    mut observer: impl FnMut(&CampaignProgress) -> std::io::Result<()>,
) -> Result<SurvivalCounts, CampaignError> {
    let level_count = schedule.levels().len();
    if start.counts.len() != level_count {
        return Err(CampaignError::ResumeMismatch(format!(
            "{} counts for {} levels",
            start.counts.len(),
            level_count
        )));
    }
    if start.completed > options.sample_count {
        return Err(CampaignError::ResumeMismatch(format!(
            "{} samples completed, campaign wants {}",
            start.completed, options.sample_count
        )));
    }
    if start.counts.first().copied().unwrap_or(0) != start.completed {
        return Err(CampaignError::ResumeMismatch(
            "level-0 count must equal completed samples".to_string(),
        ));
    }

    let workers = options.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    let half_extent = schedule.top_radius() as i32;
    // Fail on an over-budget dense request before any work happens.
    options.memory.use_dense(half_extent)?;

    let block_size = options.block_size.max(1);
    let mut progress = start;
    while progress.completed < options.sample_count {
        let block_start = progress.completed;
        let block_end = (block_start + block_size).min(options.sample_count);
        let block_counts = pool.install(|| {
            simulate_block(
                spec,
                schedule,
                options,
                half_extent,
                block_start..block_end,
                workers,
            )
        })?;
        for (total, add) in progress.counts.iter_mut().zip(&block_counts) {
            *total += add;
        }
        progress.completed = block_end;
        observer(&progress)?;
    }

    Ok(SurvivalCounts {
        schedule: schedule.clone(),
        counts: progress.counts,
        packets: Some(spec.clone()),
        base_seed: Some(options.base_seed),
    })
}

/// Simulates samples `range` and returns their cumulative survivor counts.
/// The range is split into contiguous shards so each worker reuses one
/// grid; the counts do not depend on the split.
fn simulate_block(
    spec: &PacketSpec,
    schedule: &BoxSchedule,
    options: &CampaignOptions,
    half_extent: i32,
    range: std::ops::Range<u64>,
    workers: usize,
) -> Result<Vec<u64>, CampaignError> {
    use rayon::prelude::*;

    let level_count = schedule.levels().len();
    let shards = shard_range(range, workers * 4);
    shards
        .into_par_iter()
        .map(|shard| -> Result<Vec<u64>, CampaignError> {
            let mut grid = options.memory.make_grid(half_extent, spec.packet_count())?;
            let mut counts = vec![0u64; level_count];
            for i in shard {
                let mut stream = spawn_stream(options.base_seed, i);
                let reached = run_sample(spec, schedule, &mut stream, &mut grid, options.rules);
                for count in &mut counts[..=reached] {
                    *count += 1;
                }
            }
            Ok(counts)
        })
        .try_reduce(
            || vec![0u64; level_count],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                Ok(a)
            },
        )
}

/// Splits a range into at most `parts` contiguous near-equal chunks.
pub(crate) fn shard_range(range: std::ops::Range<u64>, parts: usize) -> Vec<std::ops::Range<u64>> {
    let len = range.end.saturating_sub(range.start);
    if len == 0 {
        return Vec::new();
    }
    let parts = (parts.max(1) as u64).min(len);
    let base = len / parts;
    let extra = len % parts;
    let mut shards = Vec::with_capacity(parts as usize);
    let mut start = range.start;
    for p in 0..parts {
        let size = base + u64::from(p < extra);
        shards.push(start..start + size);
        start += size;
    }
    debug_assert_eq!(start, range.end);
    shards
}
