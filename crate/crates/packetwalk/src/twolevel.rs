//! Two-level estimation for steep exponents.
//!
//! When survival beyond a large box is too rare for the nested-box scheme,
//! the campaign instead freezes `n` independent master samples at an inner
//! radius `l1` and, for each, measures the conditional survival fraction
//! over `m` fresh continuation trials out to `l2`. The exponent follows
//! from the mean fraction: `p = (l2 / l1)^-s` up to lattice corrections.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::estimators::{EstimateMethod, EstimateReport};
use crate::lattice::{Cell, OccupancyGrid};
use crate::multilevel::{shard_range, to_hex, CampaignError, MemoryPolicy};
use crate::rng::{derive_seed, spawn_stream, RngStream};
use crate::walkers::{advance_walker, scatter_from_origin, PacketSpec, WalkRules};

/// A sample frozen at the inner radius: where its walkers stand and every
/// cell its packets have visited.
#[derive(Clone, Debug, PartialEq)]
pub struct MasterSample {
    /// Campaign attempt that produced this master; also its stream index.
    pub attempt: u64,
    /// Walker positions on the inner boundary, packet by packet.
    pub positions: Vec<Cell>,
    /// Visited cells with their packet masks, sorted by coordinates.
    pub cells: Vec<(Cell, u8)>,
}

/// Scatters to `l0` and runs all walkers out to `l1` in one level. On
/// survival, returns the frozen state; on intersection, None. The grid
/// must be clean and is rolled back either way.
pub fn generate_master(
    spec: &PacketSpec,
    l0: i32,
    l1: i32,
    attempt: u64,
    stream: &mut RngStream,
    grid: &mut OccupancyGrid,
    rules: WalkRules,
) -> Option<MasterSample> {
    assert!(0 < l0 && l0 < l1 && l1 <= grid.half_extent());
    let mark = grid.watermark();
    let ensemble = scatter_from_origin(spec, l0, stream, rules);
    let mut positions = ensemble.positions().to_vec();
    for (walker, position) in positions.iter_mut().enumerate() {
        match advance_walker(
            *position,
            ensemble.packet_of(walker),
            l1,
            grid,
            stream,
            rules,
        ) {
            Some(cell) => *position = cell,
            None => {
                grid.undo_to(mark);
                return None;
            }
        }
    }
    let master = MasterSample {
        attempt,
        positions,
        cells: grid.visited_masks(),
    };
    grid.undo_to(mark);
    Some(master)
}

/// Runs `m` independent continuations of a master out to `l2` and counts
/// the survivors. Trial `t` draws from `spawn_stream(trial_seed, t + 1)`;
/// sub-index 0 is skipped because its stream would replay the master's own
/// draws. The grid must be clean and is rolled back before returning.
pub fn run_trials(
    master: &MasterSample,
    spec: &PacketSpec,
    m: u32,
    l2: i32,
    trial_seed: u64,
    grid: &mut OccupancyGrid,
    rules: WalkRules,
) -> u32 {
    assert!(l2 <= grid.half_extent());
    let base_mark = grid.watermark();
    grid.load_masks(&master.cells);
    let loaded = grid.watermark();
    let ensemble =
        crate::walkers::WalkerEnsemble::from_positions(spec, master.positions.clone());
    let mut survivors = 0;
    for t in 0..m {
        let mut stream = spawn_stream(trial_seed, t as u64 + 1);
        let mut alive = true;
        for (walker, &position) in master.positions.iter().enumerate() {
            if advance_walker(
                position,
                ensemble.packet_of(walker),
                l2,
                grid,
                &mut stream,
                rules,
            )
            .is_none()
            {
                alive = false;
                break;
            }
        }
        if alive {
            survivors += 1;
        }
        grid.undo_to(loaded);
    }
    grid.undo_to(base_mark);
    survivors
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TwoLevelError {
    #[error("need at least two masters to estimate the spread, got {0}")]
    TooFewMasters(usize),
    #[error("need at least one trial per master")]
    NoTrials,
    #[error("every trial died: the mean fraction is zero")]
    AllTrialsDead,
    #[error("outer/inner radius ratio must exceed 1, got {0}")]
    RatioOutOfRange(f64),
    #[error("moments must be finite, with mean in (0, 1] and sigma >= 0")]
    BadMoments,
    #[error("costs and moments must be positive and finite")]
    BadCostModel,
}

/// Mean and spread of the per-master survival fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FractionSummary {
    /// Mean fraction over masters.
    pub mean: f64,
    /// Standard deviation of that mean.
    pub sigma_mean: f64,
    pub master_count: u64,
    pub trials_per_master: u32,
}

impl FractionSummary {
    /// Moments of `x_i / m` over the masters.
    pub fn from_survivals(survivals: &[u32], m: u32) -> Result<FractionSummary, TwoLevelError> {
        if survivals.len() < 2 {
            return Err(TwoLevelError::TooFewMasters(survivals.len()));
        }
        if m == 0 {
            return Err(TwoLevelError::NoTrials);
        }
        let n = survivals.len() as f64;
        let fractions: Vec<f64> = survivals.iter().map(|&x| x as f64 / m as f64).collect();
        let mean = fractions.iter().sum::<f64>() / n;
        if mean == 0.0 {
            return Err(TwoLevelError::AllTrialsDead);
        }
        let spread: f64 = fractions.iter().map(|p| (p - mean) * (p - mean)).sum();
        let sigma_mean = (spread / (n * (n - 1.0))).sqrt();
        Ok(FractionSummary {
            mean,
            sigma_mean,
            master_count: survivals.len() as u64,
            trials_per_master: m,
        })
    }

    /// Wraps already-computed moments, e.g. a published summary.
    pub fn from_moments(
        mean: f64,
        sigma_mean: f64,
        master_count: u64,
        trials_per_master: u32,
    ) -> Result<FractionSummary, TwoLevelError> {
        if !(mean.is_finite() && sigma_mean.is_finite() && 0.0 < mean && mean <= 1.0)
            || sigma_mean < 0.0
        {
            return Err(TwoLevelError::BadMoments);
        }
        Ok(FractionSummary {
            mean,
            sigma_mean,
            master_count,
            trials_per_master,
        })
    }
}

/// Exponent from the mean conditional survival fraction between radii with
/// ratio `level_ratio = l2 / l1`:
///
/// ```text
/// exponent = -ln(mean) / ln(ratio),    sigma = sigma_mean / (ln(ratio) * mean)
/// ```
pub fn two_level_estimate(
    summary: &FractionSummary,
    level_ratio: f64,
) -> Result<EstimateReport, TwoLevelError> {
    if !(level_ratio.is_finite() && level_ratio > 1.0) {
        return Err(TwoLevelError::RatioOutOfRange(level_ratio));
    }
    if !(summary.mean.is_finite() && summary.mean > 0.0 && summary.mean <= 1.0) {
        return Err(TwoLevelError::BadMoments);
    }
    let log_ratio = level_ratio.ln();
    let exponent = -summary.mean.ln() / log_ratio;
    let sigma = summary.sigma_mean / (log_ratio * summary.mean);

    let mut hasher = Sha256::new();
    hasher.update(summary.mean.to_le_bytes());
    hasher.update(summary.sigma_mean.to_le_bytes());
    hasher.update(summary.master_count.to_le_bytes());
    hasher.update((summary.trials_per_master as u64).to_le_bytes());
    hasher.update(level_ratio.to_le_bytes());
    let digest = to_hex(&hasher.finalize());

    Ok(EstimateReport {
        method: EstimateMethod::TwoLevel,
        exponent,
        sigma,
        ci95: (exponent - 2.0 * sigma, exponent + 2.0 * sigma),
        kmin: 0,
        input_digest: digest,
    })
}

/// Trials per master that minimize estimator variance at fixed compute.
///
/// Generating a master costs `master_cost`, one trial costs `trial_cost`,
/// and the fractions have variance `fraction_variance` across masters and
/// mean `fraction_mean`. The variance of the final estimate per unit
/// budget is proportional to
///
/// ```text
/// f(m) = (master_cost + m * trial_cost) * (fraction_variance + fraction_mean / m)
/// ```
///
/// which is convex in `m`; the integer minimizer is one of the two
/// integers around the real stationary point `sqrt(c1 e / (c2 v))`.
pub fn optimal_trial_count(
    master_cost: f64,
    trial_cost: f64,
    fraction_variance: f64,
    fraction_mean: f64,
) -> Result<u64, TwoLevelError> {
    let inputs = [master_cost, trial_cost, fraction_variance, fraction_mean];
    if inputs.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(TwoLevelError::BadCostModel);
    }
    let objective = |m: f64| (master_cost + m * trial_cost) * (fraction_variance + fraction_mean / m);
    let stationary = (master_cost * fraction_mean / (trial_cost * fraction_variance)).sqrt();
    let below = stationary.floor().max(1.0);
    let above = below + 1.0;
    Ok(if objective(below) <= objective(above) {
        below as u64
    } else {
        above as u64
    })
}

/// One bin of a fraction histogram over [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

/// Equal-width histogram of the per-master fractions; the last bin is
/// closed at 1.
pub fn fraction_histogram(survivals: &[u32], m: u32, bins: usize) -> Vec<HistogramBin> {
    assert!(bins > 0 && m > 0);
    let mut counts = vec![0u64; bins];
    for &x in survivals {
        let fraction = x as f64 / m as f64;
        let bin = ((fraction * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect()
}

/// Two-level campaign parameters.
#[derive(Clone, Debug, Serialize)]
pub struct TwoLevelOptions {
    pub l0: u32,
    pub l1: u32,
    pub l2: u32,
    /// Masters to accept before stopping.
    pub master_count: u64,
    pub trials_per_master: u32,
    pub base_seed: u64,
    pub workers: usize,
    pub rules: WalkRules,
    pub memory: MemoryPolicy,
}

/// Raw outcome of a two-level campaign.
#[derive(Clone, Debug, Serialize)]
pub struct TwoLevelOutcome {
    /// Survivor count `x_i` per accepted master, in attempt order.
    pub survivals: Vec<u32>,
    pub trials_per_master: u32,
    /// Master attempts consumed, including rejected ones.
    pub attempts: u64,
    /// Attempts whose master died before the inner radius.
    pub dead_attempts: u64,
}

/// Runs a two-level campaign: master attempt `i` draws from
/// `spawn_stream(base_seed, i)` and its trials from substreams of
/// `derive_seed(base_seed, i)`, so the outcome is identical for any worker
/// count. Attempts are consumed in index order until enough masters
/// survive.
pub fn run_twolevel_campaign(
    spec: &PacketSpec,
    options: &TwoLevelOptions,
) -> Result<TwoLevelOutcome, CampaignError> {
    use rayon::prelude::*;

    assert!(options.l0 >= 2 && options.l0 < options.l1 && options.l1 < options.l2);
    assert!(options.master_count >= 1 && options.trials_per_master >= 1);
    let workers = options.workers.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    // Fail fast if a dense request cannot fit: trial grids are the larger.
    options.memory.use_dense(options.l2 as i32)?;

    let block = (workers as u64 * 16).max(256);
    let mut outcome = TwoLevelOutcome {
        survivals: Vec::with_capacity(options.master_count as usize),
        trials_per_master: options.trials_per_master,
        attempts: 0,
        dead_attempts: 0,
    };
    let mut next_attempt = 0u64;

    while (outcome.survivals.len() as u64) < options.master_count {
        let range = next_attempt..next_attempt + block;
        next_attempt = range.end;

        // Phase 1: generate this block of master attempts in parallel.
        // Collecting shard results keeps them in attempt order.
        let shards: Vec<Vec<Option<MasterSample>>> = pool.install(|| {
            shard_range(range.clone(), workers * 4)
                .into_par_iter()
                .map(|shard| -> Result<Vec<Option<MasterSample>>, CampaignError> {
                    let mut grid = options
                        .memory
                        .make_grid(options.l1 as i32, spec.packet_count())?;
                    shard
                        .map(|attempt| {
                            let mut stream = spawn_stream(options.base_seed, attempt);
                            Ok(generate_master(
                                spec,
                                options.l0 as i32,
                                options.l1 as i32,
                                attempt,
                                &mut stream,
                                &mut grid,
                                options.rules,
                            ))
                        })
                        .collect()
                })
                .collect::<Result<_, _>>()
        })?;

        // Consume attempts in order until the quota is met.
        let mut accepted: Vec<MasterSample> = Vec::new();
        for master in shards.into_iter().flatten() {
            outcome.attempts += 1;
            match master {
                Some(master) => {
                    accepted.push(master);
                    if outcome.survivals.len() + accepted.len() == options.master_count as usize {
                        break;
                    }
                }
                None => outcome.dead_attempts += 1,
            }
        }

        // Phase 2: run the accepted masters' trials in parallel.
        let survivals: Vec<u32> = pool.install(|| {
            accepted
                .par_iter()
                .map(|master| -> Result<u32, CampaignError> {
                    let mut grid = options
                        .memory
                        .make_grid(options.l2 as i32, spec.packet_count())?;
                    Ok(run_trials(
                        master,
                        spec,
                        options.trials_per_master,
                        options.l2 as i32,
                        derive_seed(options.base_seed, master.attempt),
                        &mut grid,
                        options.rules,
                    ))
                })
                .collect::<Result<Vec<u32>, CampaignError>>()
        })?;
        outcome.survivals.extend(survivals);
    }

    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_matches_closed_form() {
        let summary = FractionSummary::from_moments(0.25, 0.01, 100, 50).unwrap();
        let report = two_level_estimate(&summary, 2.0).unwrap();
        assert!((report.exponent - 2.0).abs() < 1e-12);
        assert!((report.sigma - 0.01 / (std::f64::consts::LN_2 * 0.25)).abs() < 1e-12);
        assert_eq!(report.method, EstimateMethod::TwoLevel);
    }

    #[test]
    fn equal_fractions_have_zero_spread() {
        let summary = FractionSummary::from_survivals(&[25, 25, 25, 25], 100).unwrap();
        assert_eq!(summary.mean, 0.25);
        assert_eq!(summary.sigma_mean, 0.0);
        let report = two_level_estimate(&summary, 2.0).unwrap();
        assert_eq!(report.sigma, 0.0);
        assert_eq!(report.ci95, (report.exponent, report.exponent));
    }

    #[test]
    fn summary_moments_match_hand_computation() {
        let summary = FractionSummary::from_survivals(&[10, 20, 30], 100).unwrap();
        assert!((summary.mean - 0.2).abs() < 1e-15);
        // Sample variance of {0.1, 0.2, 0.3} is 0.01; sigma_mean^2 = 0.01 / 3.
        assert!((summary.sigma_mean - (0.01f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_rejects_degenerate_input() {
        assert_eq!(
            FractionSummary::from_survivals(&[5], 10),
            Err(TwoLevelError::TooFewMasters(1))
        );
        assert_eq!(
            FractionSummary::from_survivals(&[1, 2], 0),
            Err(TwoLevelError::NoTrials)
        );
        assert_eq!(
            FractionSummary::from_survivals(&[0, 0], 10),
            Err(TwoLevelError::AllTrialsDead)
        );
        assert_eq!(
            FractionSummary::from_moments(0.0, 0.1, 1, 1),
            Err(TwoLevelError::BadMoments)
        );
        let summary = FractionSummary::from_moments(0.5, 0.1, 2, 1).unwrap();
        assert_eq!(
            two_level_estimate(&summary, 1.0),
            Err(TwoLevelError::RatioOutOfRange(1.0))
        );
    }

    #[test]
    fn optimal_trials_reproduce_the_paper_scale_example() {
        // Master generation 10^4 times costlier than a trial, variance a
        // hundredth of the mean: the optimum is 1000 trials.
        let m = optimal_trial_count(1e4, 1.0, 1e-2, 1.0).unwrap();
        assert_eq!(m, 1000);
    }

    #[test]
    fn optimal_trials_validates_inputs() {
        assert_eq!(
            optimal_trial_count(0.0, 1.0, 1.0, 1.0),
            Err(TwoLevelError::BadCostModel)
        );
        assert_eq!(
            optimal_trial_count(1.0, 1.0, f64::NAN, 1.0),
            Err(TwoLevelError::BadCostModel)
        );
    }

    #[test]
    fn crafted_master_survives_exactly_when_the_first_step_escapes() {
        // Packet layout (1,1). The packet-0 walker stands at (2, 0), one
        // step from the radius-3 boundary, and its three interior
        // neighbors carry packet-1 marks, so any first step but East
        // completes an intersection. The packet-1 walker at (-2, 0) can
        // never intersect because no cell carries a packet-0 mark.
        // Survival is therefore exactly "the trial's first draw is East".
        let spec = PacketSpec::new(vec![1, 1]).unwrap();
        let master = MasterSample {
            attempt: 0,
            positions: vec![Cell::new(2, 0), Cell::new(-2, 0)],
            cells: vec![
                (Cell::new(1, 0), 0b10),
                (Cell::new(2, -1), 0b10),
                (Cell::new(2, 1), 0b10),
            ],
        };
        let rules = WalkRules::default();
        let mut grid = OccupancyGrid::dense(3, 2);
        let m = 4000u32;
        let trial_seed = 0xFEED;
        let survivors = run_trials(&master, &spec, m, 3, trial_seed, &mut grid, rules);

        let east_first = (0..m)
            .filter(|&t| {
                let mut probe = spawn_stream(trial_seed, t as u64 + 1);
                probe.step_direction(rules.direction_rule) == crate::rng::Direction::East
            })
            .count() as u32;
        assert_eq!(survivors, east_first);
        // Binomial(4000, 1/4) stays well inside 1000 +- 100 (> 3 sigma).
        assert!((survivors as i64 - 1000).abs() < 100, "survivors = {survivors}");
        // The grid came back clean.
        assert!(grid.visited_masks().is_empty());
    }

    #[test]
    fn master_generation_freezes_boundary_positions_and_interior_cells() {
        let spec = PacketSpec::new(vec![1, 2]).unwrap();
        let rules = WalkRules::default();
        let mut grid = OccupancyGrid::dense(8, 2);
        let mut produced = 0;
        for attempt in 0..200u64 {
            let mut stream = spawn_stream(7, attempt);
            if let Some(master) =
                generate_master(&spec, 2, 8, attempt, &mut stream, &mut grid, rules)
            {
                produced += 1;
                assert_eq!(master.attempt, attempt);
                assert_eq!(master.positions.len(), 3);
                for cell in &master.positions {
                    assert_eq!(cell.box_radius(), 8);
                }
                for &(cell, mask) in &master.cells {
                    assert!(cell.box_radius() < 8, "recorded boundary cell {cell:?}");
                    assert!(mask != 0 && mask < 0b100);
                }
                let mut sorted = master.cells.clone();
                sorted.sort();
                assert_eq!(sorted, master.cells);
            }
            assert!(
                grid.visited_masks().is_empty(),
                "grid not rolled back after attempt {attempt}"
            );
        }
        assert!(produced > 0, "no master survived out of 200 attempts");
    }

    #[test]
    fn trial_runs_are_reproducible_and_leave_the_grid_clean() {
        let spec = PacketSpec::new(vec![1, 1]).unwrap();
        let rules = WalkRules::default();
        let mut grid = OccupancyGrid::dense(10, 2);
        let master = (0..50)
            .find_map(|attempt| {
                let mut stream = spawn_stream(3, attempt);
                generate_master(&spec, 2, 5, attempt, &mut stream, &mut grid, rules)
            })
            .expect("no master survived out of 50 attempts");
        let first = run_trials(&master, &spec, 64, 10, 0xABCD, &mut grid, rules);
        let second = run_trials(&master, &spec, 64, 10, 0xABCD, &mut grid, rules);
        assert_eq!(first, second);
        assert!(first <= 64);
        assert!(grid.visited_masks().is_empty());
    }

    #[test]
    fn campaign_outcome_is_invariant_to_worker_count() {
        let spec = PacketSpec::new(vec![1, 1]).unwrap();
        let base = TwoLevelOptions {
            l0: 2,
            l1: 6,
            l2: 12,
            master_count: 40,
            trials_per_master: 20,
            base_seed: 99,
            workers: 1,
            rules: WalkRules::default(),
            memory: MemoryPolicy::default(),
        };
        let solo = run_twolevel_campaign(&spec, &base).unwrap();
        let mut wide = base.clone();
        wide.workers = 3;
        let crowd = run_twolevel_campaign(&spec, &wide).unwrap();
        assert_eq!(solo.survivals, crowd.survivals);
        assert_eq!(solo.attempts, crowd.attempts);
        assert_eq!(solo.dead_attempts, crowd.dead_attempts);
        assert_eq!(solo.survivals.len() as u64, base.master_count);
        let summary =
            FractionSummary::from_survivals(&solo.survivals, base.trials_per_master).unwrap();
        assert!(0.0 < summary.mean && summary.mean < 1.0);
    }

    #[test]
    fn histogram_bins_cover_unit_interval() {
        let bins = fraction_histogram(&[0, 25, 50, 99, 100], 100, 4);
        assert_eq!(bins.len(), 4);
        let counts: Vec<u64> = bins.iter().map(|b| b.count).collect();
        // 0.00 -> bin 0, 0.25 -> bin 1, 0.50 -> bin 2, and both 0.99 and
        // the closed right endpoint 1.0 -> bin 3.
        assert_eq!(counts, vec![1, 1, 1, 2]);
        assert_eq!(bins[3].lower, 0.75);
        assert_eq!(bins[3].upper, 1.0);
    }
}
