//! Exponent estimation from survivor counts.
//!
//! Conditional on reaching level `l`, a sample survives the transition to
//! level `l+1` with probability `q_l^s` where `q_l = L_l / L_{l+1}` and
//! `s` is the exponent. The per-transition survivals are conditionally
//! independent, giving the log-likelihood
//!
//! ```text
//! L(s) = sum_l [ n_{l+1} * s * ln q_l  +  (n_l - n_{l+1}) * ln(1 - q_l^s) ]
//! ```
//!
//! over transitions at or above a cutoff level `kmin` that excludes the
//! small boxes where the power law has not set in yet.

use serde::Serialize;

use crate::multilevel::SurvivalCounts;

/// How an estimate was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    MaximumLikelihood,
    Regression,
    TwoLevel,
}

/// A point estimate with its uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport {
    pub method: EstimateMethod,
    pub exponent: f64,
    /// Asymptotic standard deviation of the estimate.
    pub sigma: f64,
    /// `exponent ± 2 sigma`.
    pub ci95: (f64, f64),
    /// First fitted level index (0 when no cutoff applies).
    pub kmin: usize,
    /// Hex SHA-256 of the estimator input.
    pub input_digest: String,
}

impl EstimateReport {
    fn new(
        method: EstimateMethod,
        exponent: f64,
        sigma: f64,
        kmin: usize,
        input_digest: String,
    ) -> EstimateReport {
        EstimateReport {
            method,
            exponent,
            sigma,
            ci95: (exponent - 2.0 * sigma, exponent + 2.0 * sigma),
            kmin,
            input_digest,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EstimateError {
    #[error("exponent must be positive and finite, got {0}")]
    NonPositiveExponent(f64),
    #[error("cutoff index {kmin} out of range: need kmin <= {max}")]
    CutoffOutOfRange { kmin: usize, max: usize },
    #[error("no deaths above the cutoff: the likelihood has no interior maximum")]
    NoDeaths,
    #[error("no survivors past the cutoff level: the likelihood has no interior maximum")]
    AllDeadImmediately,
    #[error("need at least {needed} levels with survivors at or above the cutoff, found {found}")]
    TooFewLevels { needed: usize, found: usize },
    #[error("likelihood maximization did not converge")]
    NoConvergence,
}

/// Per-transition terms of the likelihood above the cutoff.
struct FitData {
    /// `ln q_l`, negative.
    log_q: Vec<f64>,
    /// `n_{l+1}` as f64.
    survivors: Vec<f64>,
    /// `n_l - n_{l+1}` as f64.
    deaths: Vec<f64>,
}

impl FitData {
    fn new(counts: &SurvivalCounts, kmin: usize) -> Result<FitData, EstimateError> {
        let levels = counts.schedule.levels();
        debug_assert_eq!(levels.len(), counts.counts.len());
        if kmin + 1 >= levels.len() {
            return Err(EstimateError::CutoffOutOfRange {
                kmin,
                max: levels.len().saturating_sub(2),
            });
        }
        let n = &counts.counts[kmin..];
        if n.windows(2).all(|w| w[0] == w[1]) {
            return Err(EstimateError::NoDeaths);
        }
        if n[1] == 0 {
            return Err(EstimateError::AllDeadImmediately);
        }
        let transitions = n.len() - 1;
        let mut data = FitData {
            log_q: Vec::with_capacity(transitions),
            survivors: Vec::with_capacity(transitions),
            deaths: Vec::with_capacity(transitions),
        };
        for l in 0..transitions {
            data.log_q.push(counts.schedule.radius_ratio(kmin + l).ln());
            data.survivors.push(n[l + 1] as f64);
            data.deaths.push((n[l] - n[l + 1]) as f64);
        }
        Ok(data)
    }

    /// `ln(1 - q^s)` computed as `ln(-expm1(s ln q))` to keep precision
    /// when `q^s` is close to 1.
    fn value(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for l in 0..self.log_q.len() {
            let lq = self.log_q[l];
            total += self.survivors[l] * s * lq;
            if self.deaths[l] > 0.0 {
                total += self.deaths[l] * (-f64::exp_m1(s * lq)).ln();
            }
        }
        total
    }

    fn derivative(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for l in 0..self.log_q.len() {
            let lq = self.log_q[l];
            total += self.survivors[l] * lq;
            if self.deaths[l] > 0.0 {
                let qs = (s * lq).exp();
                total -= self.deaths[l] * lq * qs / (-f64::exp_m1(s * lq));
            }
        }
        total
    }

    fn second_derivative(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for l in 0..self.log_q.len() {
            if self.deaths[l] > 0.0 {
                let lq = self.log_q[l];
                let qs = (s * lq).exp();
                let one_minus = -f64::exp_m1(s * lq);
                total -= self.deaths[l] * lq * lq * qs / (one_minus * one_minus);
            }
        }
        total
    }
}

fn check_exponent(exponent: f64) -> Result<(), EstimateError> {
    if !(exponent.is_finite() && exponent > 0.0) {
        return Err(EstimateError::NonPositiveExponent(exponent));
    }
    Ok(())
}

/// Log-likelihood of the exponent, up to the constant binomial terms.
pub fn log_likelihood(
    counts: &SurvivalCounts,
    kmin: usize,
    exponent: f64,
) -> Result<f64, EstimateError> {
    check_exponent(exponent)?;
    Ok(FitData::new(counts, kmin)?.value(exponent))
}

/// First derivative of the log-likelihood in the exponent.
pub fn log_likelihood_prime(
    counts: &SurvivalCounts,
    kmin: usize,
    exponent: f64,
) -> Result<f64, EstimateError> {
    check_exponent(exponent)?;
    Ok(FitData::new(counts, kmin)?.derivative(exponent))
}

/// Second derivative of the log-likelihood in the exponent. Strictly
/// negative wherever some transition has deaths, so the likelihood is
/// strictly concave.
pub fn log_likelihood_double_prime(
    counts: &SurvivalCounts,
    kmin: usize,
    exponent: f64,
) -> Result<f64, EstimateError> {
    check_exponent(exponent)?;
    Ok(FitData::new(counts, kmin)?.second_derivative(exponent))
}

const SOLVE_TOLERANCE: f64 = 1e-12;
const SOLVE_MAX_ITER: usize = 100;

/// Maximum-likelihood estimate of the exponent with its asymptotic
/// standard deviation `1 / sqrt(-L''(s))`.
///
/// Newton iteration from the two-point estimate between the cutoff level
/// and the outermost level with survivors, guarded by a maintained
/// bracket: any Newton step that leaves the bracket is replaced by a
/// bisection step. With deaths present and survivors past the first
/// transition, `L'` starts positive and eventually goes negative, so an
/// interior maximum exists.
pub fn mle(counts: &SurvivalCounts, kmin: usize) -> Result<EstimateReport, EstimateError> {
    let data = FitData::new(counts, kmin)?;

    // Bracket the root of L'. At tiny s the death terms blow up
    // positively; grow the upper end until L' is negative there.
    let mut lo = 1e-6;
    let mut hi = 64.0;
    let mut tries = 0;
    while data.derivative(hi) >= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 14 {
            return Err(EstimateError::NoConvergence);
        }
    }

    let mut s = initial_guess(counts, kmin).clamp(lo, hi);
    let mut converged = false;
    for _ in 0..SOLVE_MAX_ITER {
        let d1 = data.derivative(s);
        if d1 > 0.0 {
            lo = lo.max(s);
        } else {
            hi = hi.min(s);
        }
        let d2 = data.second_derivative(s);
        let mut next = s - d1 / d2;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let step = (next - s).abs();
        s = next;
        if step < SOLVE_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(EstimateError::NoConvergence);
    }

    // The loop can stop on a bisection step, which only brackets the root
    // to the step tolerance. Newton contracts quadratically this close,
    // so two polish steps pin the stationary point down to rounding.
    for _ in 0..2 {
        let d1 = data.derivative(s);
        let d2 = data.second_derivative(s);
        let next = s - d1 / d2;
        if next.is_finite() && next > 0.0 {
            s = next;
        }
    }

    let d2 = data.second_derivative(s);
    debug_assert!(d2 < 0.0);
    let sigma = (-1.0 / d2).sqrt();
    Ok(EstimateReport::new(
        EstimateMethod::MaximumLikelihood,
        s,
        sigma,
        kmin,
        counts.digest(),
    ))
}

/// Two-point slope between the cutoff level and the outermost level that
/// still has survivors.
fn initial_guess(counts: &SurvivalCounts, kmin: usize) -> f64 {
    let levels = counts.schedule.levels();
    let n = &counts.counts;
    let end = (kmin..n.len()).rev().find(|&k| n[k] > 0).unwrap_or(kmin);
    if end <= kmin {
        return 1.0;
    }
    let guess = (n[kmin] as f64 / n[end] as f64).ln()
        / (levels[end] as f64 / levels[kmin] as f64).ln();
    if guess.is_finite() && guess > 0.0 {
        guess
    } else {
        1.0
    }
}

/// Least-squares slope of `ln N_k` against `ln L_k` over levels at or
/// above the cutoff with survivors; the exponent estimate is minus the
/// slope. A diagnostic companion to [`mle`]: the points are cumulative
/// counts of the same samples, so the residuals are strongly correlated
/// and the reported sigma is optimistic.
pub fn regression_estimate(
    counts: &SurvivalCounts,
    kmin: usize,
) -> Result<EstimateReport, EstimateError> {
    let levels = counts.schedule.levels();
    if kmin + 1 >= levels.len() {
        return Err(EstimateError::CutoffOutOfRange {
            kmin,
            max: levels.len().saturating_sub(2),
        });
    }
    let points: Vec<(f64, f64)> = (kmin..levels.len())
        .filter(|&k| counts.counts[k] > 0)
        .map(|k| ((levels[k] as f64).ln(), (counts.counts[k] as f64).ln()))
        .collect();
    if points.len() < 2 {
        return Err(EstimateError::TooFewLevels {
            needed: 2,
            found: points.len(),
        });
    }

    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let sigma = if points.len() == 2 {
        0.0
    } else {
        let residual: f64 = points
            .iter()
            .map(|p| (p.1 - mean_y - slope * (p.0 - mean_x)).powi(2))
            .sum();
        (residual / (n - 2.0) / sxx).sqrt()
    };
    Ok(EstimateReport::new(
        EstimateMethod::Regression,
        -slope,
        sigma,
        kmin,
        counts.digest(),
    ))
}

/// One row of a cutoff scan.
#[derive(Clone, Debug, Serialize)]
pub struct KminScanRow {
    pub kmin: usize,
    /// Radius of the cutoff level.
    pub level: u32,
    /// `(exponent, 2 sigma)` when the fit succeeded.
    pub estimate: Option<(f64, f64)>,
}

/// Maximum-likelihood estimates for every admissible cutoff, the standard
/// diagnostic for choosing where the power law has set in.
pub fn kmin_scan(counts: &SurvivalCounts) -> Vec<KminScanRow> {
    let levels = counts.schedule.levels();
    (0..levels.len().saturating_sub(1))
        .map(|kmin| KminScanRow {
            kmin,
            level: levels[kmin],
            estimate: mle(counts, kmin)
                .ok()
                .map(|report| (report.exponent, 2.0 * report.sigma)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilevel::BoxSchedule;

    fn make_counts(levels: Vec<u32>, counts: Vec<u64>) -> SurvivalCounts {
        SurvivalCounts {
            schedule: BoxSchedule::from_levels(levels).unwrap(),
            counts,
            packets: None,
            base_seed: None,
        }
    }

    // One transition with q = 1/2, 100 samples, 25 survivors.
    fn half_ratio_counts() -> SurvivalCounts {
        make_counts(vec![100, 200], vec![100, 25])
    }

    #[test]
    fn log_likelihood_matches_hand_value() {
        // 25 * 2 * ln(1/2) + 75 * ln(1 - (1/2)^2)
        let value = log_likelihood(&half_ratio_counts(), 0, 2.0).unwrap();
        assert!((value - (-56.23351446188083)).abs() < 1e-12, "{value}");
    }

    #[test]
    fn log_likelihood_rejects_bad_exponent() {
        let counts = half_ratio_counts();
        assert_eq!(
            log_likelihood(&counts, 0, 0.0),
            Err(EstimateError::NonPositiveExponent(0.0))
        );
        assert_eq!(
            log_likelihood(&counts, 0, -1.0),
            Err(EstimateError::NonPositiveExponent(-1.0))
        );
        assert!(log_likelihood(&counts, 0, f64::NAN).is_err());
    }

    #[test]
    fn all_survivors_make_likelihood_linear_and_decreasing() {
        let counts = make_counts(vec![30, 33, 36], vec![50, 50, 50]);
        // No deaths: the fit has no interior maximum and is rejected.
        assert_eq!(log_likelihood(&counts, 0, 1.0), Err(EstimateError::NoDeaths));
    }

    #[test]
    fn derivative_root_sits_at_two_for_half_ratio() {
        let counts = half_ratio_counts();
        let at_root = log_likelihood_prime(&counts, 0, 2.0).unwrap();
        assert!(at_root.abs() < 1e-12, "{at_root}");
        assert!(log_likelihood_prime(&counts, 0, 1.5).unwrap() > 0.0);
        assert!(log_likelihood_prime(&counts, 0, 2.5).unwrap() < 0.0);
    }

    #[test]
    fn second_derivative_matches_hand_value_and_is_negative() {
        let counts = half_ratio_counts();
        let value = log_likelihood_double_prime(&counts, 0, 2.0).unwrap();
        assert!((value - (-16.015100463940044)).abs() < 1e-12, "{value}");
        for s in [0.1, 1.0, 3.0, 10.0] {
            assert!(log_likelihood_double_prime(&counts, 0, s).unwrap() < 0.0);
        }
    }

    #[test]
    fn concavity_between_random_points() {
        let mut stream = crate::rng::RngStream::from_state(5150);
        for _ in 0..100 {
            let n0 = 100 + stream.next_raw() % 10_000;
            let n1 = 1 + stream.next_raw() % (n0 / 2);
            let n2 = stream.next_raw() % (n1 + 1);
            let counts = make_counts(vec![30, 60, 120], vec![n0, n1, n2]);
            let a = 0.2 + 3.0 * stream.unit_uniform();
            let b = 0.2 + 3.0 * stream.unit_uniform();
            let mid = 0.5 * (a + b);
            let la = log_likelihood(&counts, 0, a).unwrap();
            let lb = log_likelihood(&counts, 0, b).unwrap();
            let lmid = log_likelihood(&counts, 0, mid).unwrap();
            assert!(lmid >= 0.5 * (la + lb) - 1e-9);
        }
    }

    #[test]
    fn mle_recovers_single_transition_closed_form() {
        let report = mle(&half_ratio_counts(), 0).unwrap();
        assert!((report.exponent - 2.0).abs() < 1e-9, "{}", report.exponent);
        let sigma_expected = (1.0f64 / 16.015100463940044).sqrt();
        assert!((report.sigma - sigma_expected).abs() < 1e-12);
        assert_eq!(report.kmin, 0);
        assert_eq!(report.method, EstimateMethod::MaximumLikelihood);
        assert_eq!(report.ci95.0, report.exponent - 2.0 * report.sigma);
        assert_eq!(report.ci95.1, report.exponent + 2.0 * report.sigma);
        assert_eq!(report.input_digest, half_ratio_counts().digest());
    }

    #[test]
    fn mle_handles_extinct_tail() {
        // Survivors vanish at the last level; the maximum is still interior.
        let counts = make_counts(vec![100, 200, 400], vec![100, 50, 0]);
        let report = mle(&counts, 0).unwrap();
        let at_root = log_likelihood_prime(&counts, 0, report.exponent).unwrap();
        assert!(at_root.abs() < 1e-9);
    }

    #[test]
    fn mle_error_cases() {
        let no_deaths = make_counts(vec![30, 33, 36], vec![70, 70, 70]);
        assert_eq!(mle(&no_deaths, 0), Err(EstimateError::NoDeaths));

        let all_dead = make_counts(vec![30, 33, 36], vec![70, 0, 0]);
        assert_eq!(mle(&all_dead, 0), Err(EstimateError::AllDeadImmediately));

        let counts = half_ratio_counts();
        assert_eq!(
            mle(&counts, 1),
            Err(EstimateError::CutoffOutOfRange { kmin: 1, max: 0 })
        );
    }

    #[test]
    fn mle_is_bit_deterministic() {
        let counts = make_counts(
            vec![30, 33, 36, 39, 42],
            vec![10_000, 7_000, 5_200, 4_100, 3_300],
        );
        let a = mle(&counts, 0).unwrap();
        let b = mle(&counts, 0).unwrap();
        assert_eq!(a.exponent.to_bits(), b.exponent.to_bits());
        assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
        assert_eq!(a, b);
    }

    #[test]
    fn rescaling_counts_leaves_exponent_and_shrinks_sigma() {
        let base = make_counts(vec![30, 60, 120, 240], vec![1_000, 300, 95, 30]);
        let scaled = make_counts(vec![30, 60, 120, 240], vec![100_000, 30_000, 9_500, 3_000]);
        let a = mle(&base, 0).unwrap();
        let b = mle(&scaled, 0).unwrap();
        assert!((a.exponent - b.exponent).abs() < 1e-9);
        assert!((a.sigma / b.sigma - 10.0).abs() < 1e-6);
    }

    #[test]
    fn regression_recovers_exact_power_law() {
        // N_k proportional to L_k^-1.5 exactly in log space.
        let levels = vec![16u32, 64, 256, 1024];
        let counts: Vec<u64> = levels
            .iter()
            .map(|&l| (1e12 / (l as f64).powf(1.5)).round() as u64)
            .collect();
        let counts = make_counts(levels, counts);
        let report = regression_estimate(&counts, 0).unwrap();
        assert!((report.exponent - 1.5).abs() < 1e-6, "{}", report.exponent);
        assert!(report.sigma < 1e-6);
        assert_eq!(report.method, EstimateMethod::Regression);
    }

    #[test]
    fn regression_skips_zero_counts_and_needs_two_points() {
        let counts = make_counts(vec![30, 60, 120], vec![100, 10, 0]);
        assert!(regression_estimate(&counts, 0).is_ok());
        let starved = make_counts(vec![30, 60, 120], vec![100, 0, 0]);
        assert_eq!(
            regression_estimate(&starved, 0),
            Err(EstimateError::TooFewLevels {
                needed: 2,
                found: 1
            })
        );
    }

    #[test]
    fn kmin_scan_covers_all_cutoffs() {
        let counts = make_counts(vec![30, 60, 120, 240], vec![1_000, 300, 95, 30]);
        let rows = kmin_scan(&counts);
        assert_eq!(rows.len(), 3);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.kmin, k);
            assert_eq!(row.level, counts.schedule.levels()[k]);
            assert!(row.estimate.is_some());
        }
        // A tail with no deaths produces a row without an estimate.
        let flat_tail = make_counts(vec![30, 60, 120], vec![100, 40, 40]);
        let rows = kmin_scan(&flat_tail);
        assert!(rows[0].estimate.is_some());
        assert!(rows[1].estimate.is_none());
    }
}
