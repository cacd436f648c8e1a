//! Report assembly: the JSON run report and the plot-ready TSV side
//! files. Rendering is pure string building, so identical inputs always
//! produce identical bytes.

use serde::Serialize;

use crate::estimators::{EstimateError, EstimateReport, KminScanRow};
use crate::reference::ReferenceSummary;
use crate::twolevel::{FractionSummary, HistogramBin, TwoLevelError, TwoLevelOutcome};
use crate::walkers::WalkRules;

/// Build provenance stamped into every report.
#[derive(Clone, Debug, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
    pub git: &'static str,
}

pub fn tool_info() -> ToolInfo {
    ToolInfo {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        git: env!("PACKETWALK_GIT_DESCRIBE"),
    }
}

/// A fit that either produced an estimate or explains why it could not.
#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum FitOutcome {
    Estimate(EstimateReport),
    Failed { error: String },
}

impl FitOutcome {
    pub fn from_mle(result: Result<EstimateReport, EstimateError>) -> FitOutcome {
        match result {
            Ok(report) => FitOutcome::Estimate(report),
            Err(error) => FitOutcome::Failed {
                error: error.to_string(),
            },
        }
    }

    pub fn from_two_level(result: Result<EstimateReport, TwoLevelError>) -> FitOutcome {
        match result {
            Ok(report) => FitOutcome::Estimate(report),
            Err(error) => FitOutcome::Failed {
                error: error.to_string(),
            },
        }
    }

    pub fn estimate(&self) -> Option<&EstimateReport> {
        match self {
            FitOutcome::Estimate(report) => Some(report),
            FitOutcome::Failed { .. } => None,
        }
    }
}

/// The fit cutoff, echoed both ways.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct KminEcho {
    pub index: usize,
    pub radius: u32,
}

/// Configuration echo: the values the run actually used.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ConfigEcho {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l0: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lmax: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l1: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masters: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counts_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rules: Option<WalkRules>,
}

/// Report for the nested-box scheme and for replayed tables.
#[derive(Debug, Serialize)]
pub struct CountsReport {
    pub tool: ToolInfo,
    pub scheme: &'static str,
    /// Packet layout in display form, e.g. "(1,1,2)".
    pub packets: String,
    /// Base seed exactly as given on the command line; absent on replay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<String>,
    pub config: ConfigEcho,
    pub levels: Vec<u32>,
    pub counts: Vec<u64>,
    pub kmin: KminEcho,
    pub mle: FitOutcome,
    pub regression: FitOutcome,
    pub reference: ReferenceSummary,
}

/// Report for the two-level scheme.
#[derive(Debug, Serialize)]
pub struct TwoLevelReport {
    pub tool: ToolInfo,
    pub scheme: &'static str,
    pub packets: String,
    pub seed: String,
    pub config: ConfigEcho,
    /// Master attempts consumed, including rejected ones.
    pub attempts: u64,
    pub dead_attempts: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction: Option<FractionSummary>,
    pub estimate: FitOutcome,
    pub reference: ReferenceSummary,
}

/// Pretty JSON with a trailing newline.
pub fn render_json<T: Serialize>(report: &T) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    text
}

/// `kmin<TAB>L<TAB>exponent<TAB>two_sigma`, one row per admissible cutoff;
/// failed fits render as `nan`.
pub fn render_kmin_scan(rows: &[KminScanRow]) -> String {
    let mut out = String::from("# kmin\tL\texponent\ttwo_sigma\n");
    for row in rows {
        match row.estimate {
            Some((exponent, two_sigma)) => out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                row.kmin, row.level, exponent, two_sigma
            )),
            None => out.push_str(&format!("{}\t{}\tnan\tnan\n", row.kmin, row.level)),
        }
    }
    out
}

/// `master_index<TAB>x<TAB>m`, one row per accepted master.
pub fn render_fractions(outcome: &TwoLevelOutcome) -> String {
    let mut out = String::from("# master\tsurvivals\ttrials\n");
    for (index, &survivals) in outcome.survivals.iter().enumerate() {
        out.push_str(&format!(
            "{index}\t{survivals}\t{}\n",
            outcome.trials_per_master
        ));
    }
    out
}

/// `lower<TAB>upper<TAB>count`, one row per bin over [0, 1].
pub fn render_histogram(bins: &[HistogramBin]) -> String {
    let mut out = String::from("# lower\tupper\tcount\n");
    for bin in bins {
        out.push_str(&format!("{}\t{}\t{}\n", bin.lower, bin.upper, bin.count));
    }
    out
}

/// One deterministic headline for stdout.
pub fn headline(packets: &str, scheme: &str, fit: &FitOutcome, kmin: Option<KminEcho>) -> String {
    match fit {
        FitOutcome::Estimate(report) => {
            let cutoff = kmin
                .map(|k| format!(", kmin index {} (L={})", k.index, k.radius))
                .unwrap_or_default();
            format!(
                "{packets} {scheme}: exponent {} +- {} (2 sigma){cutoff}",
                report.exponent,
                2.0 * report.sigma
            )
        }
        FitOutcome::Failed { error } => {
            format!("{packets} {scheme}: no estimate ({error})")
        }
    }
}
