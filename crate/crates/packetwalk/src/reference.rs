//! Reference targets for measured exponents: exact values where a closed
//! form is known, rigorous bracketing intervals, and the conjectured
//! packet-reduction rule the estimates are compared against.

use serde::Serialize;

use crate::walkers::PacketSpec;

/// A closed-form exponent value with its formula spelled out.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactValue {
    pub value: f64,
    pub formula: &'static str,
}

impl ExactValue {
    fn new(value: f64, formula: &'static str) -> ExactValue {
        ExactValue { value, formula }
    }
}

/// The exact exponent for this packet layout, when one is known.
///
/// Beyond the four classical two-packet values, every layout of the form
/// `(1, 2, n3, ..., np)` with all trailing packets of size at least two
/// has exponent exactly 2. Packet counts are sorted ascending, so the
/// trailing condition holds whenever the first two packets are 1 and 2.
pub fn exact_value(spec: &PacketSpec) -> Option<ExactValue> {
    let sqrt73 = 73.0_f64.sqrt();
    match spec.counts() {
        [1, 1] => Some(ExactValue::new(5.0 / 4.0, "5/4")),
        [2, 2] => Some(ExactValue::new(35.0 / 12.0, "35/12")),
        [1, 3] => Some(ExactValue::new((13.0 + sqrt73) / 8.0, "(13 + sqrt(73))/8")),
        [2, 3] => Some(ExactValue::new(
            (47.0 + 5.0 * sqrt73) / 24.0,
            "(47 + 5*sqrt(73))/24",
        )),
        [1, 2, ..] => Some(ExactValue::new(2.0, "2")),
        _ => None,
    }
}

/// A rigorous bracket for the exponent; a known exact value appears as a
/// degenerate interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RigorousInterval {
    pub lower: f64,
    pub upper: f64,
    pub lower_formula: &'static str,
    pub upper_formula: &'static str,
}

impl RigorousInterval {
    fn new(
        lower: f64,
        upper: f64,
        lower_formula: &'static str,
        upper_formula: &'static str,
    ) -> RigorousInterval {
        RigorousInterval {
            lower,
            upper,
            lower_formula,
            upper_formula,
        }
    }

    fn point(value: f64, formula: &'static str) -> RigorousInterval {
        RigorousInterval::new(value, value, formula, formula)
    }

    pub fn is_exact(&self) -> bool {
        self.lower == self.upper
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// The published rigorous bracket for this packet layout, if one exists.
/// Entries are kept exactly as printed; notably the (2,3,3) upper bound
/// reads 35/12 even though the corresponding point estimate exceeds it.
pub fn rigorous_interval(spec: &PacketSpec) -> Option<RigorousInterval> {
    let sqrt73 = 73.0_f64.sqrt();
    let five_quarters = 5.0 / 4.0;
    let thirtyfive_twelfths = 35.0 / 12.0;
    Some(match spec.counts() {
        [1, 1] => RigorousInterval::point(five_quarters, "5/4"),
        [2, 2] => RigorousInterval::point(thirtyfive_twelfths, "35/12"),
        [1, 1, 1] => RigorousInterval::new(0.5, five_quarters, "1/2", "5/4"),
        [1, 1, 2] => RigorousInterval::new(1.0, five_quarters, "1", "5/4"),
        [1, 1, 1, 1] => RigorousInterval::new(0.25, five_quarters, "1/4", "5/4"),
        [1, 1, 1, 2] => RigorousInterval::new(0.5, five_quarters, "1/2", "5/4"),
        [1, 1, 1, 1, 1] => RigorousInterval::new(0.125, five_quarters, "1/8", "5/4"),
        [1, 3, 3] => RigorousInterval::new(
            2.0,
            (13.0 + sqrt73) / 8.0,
            "2",
            "(13 + sqrt(73))/8",
        ),
        [2, 2, 2] => RigorousInterval::new(2.0, thirtyfive_twelfths, "2", "35/12"),
        [2, 2, 3] => RigorousInterval::new(2.0, thirtyfive_twelfths, "2", "35/12"),
        [2, 3, 3] => RigorousInterval::new(2.0, thirtyfive_twelfths, "2", "35/12"),
        [2, 2, 2, 2] => RigorousInterval::new(2.0, thirtyfive_twelfths, "2", "35/12"),
        _ => return None,
    })
}

/// Applies the conjectured reduction rule to a packet layout.
///
/// With counts `n_1 <= ... <= n_p`, let `k` be the smallest index in
/// `2..=p-1` whose successor is strictly larger (`n_{k+1} > n_k`), or `p`
/// when no such index exists. The conjecture asserts the exponent equals
/// that of the truncated layout `(n_1, ..., n_k)`.
pub fn conjectured_reduction(spec: &PacketSpec) -> PacketSpec {
    let counts = spec.counts();
    let p = counts.len();
    let k = (2..p)
        .find(|&k| counts[k] > counts[k - 1])
        .unwrap_or(p);
    PacketSpec::new(counts[..k].to_vec()).expect("a prefix of a valid layout is valid")
}

/// One published comparison between a measured layout and the smaller
/// layout its estimate was checked against.
#[derive(Clone, Debug, Serialize)]
pub struct ReductionCheck {
    pub packets: PacketSpec,
    /// What the reduction rule, read literally, produces.
    pub literal: PacketSpec,
    /// The layout the published comparison actually used.
    pub published: PacketSpec,
    /// Whether the literal rule reproduces the published pairing.
    pub agrees: bool,
}

/// The five published reduction comparisons. For (1,3,3) and (2,3,3) the
/// rule read literally leaves the layout unreduced, because the counts
/// never strictly increase past the second packet, yet the published
/// comparisons pair them with (1,3) and (2,3). Those rows carry
/// `agrees: false` so reports can flag the discrepancy.
pub fn published_reduction_checks() -> Vec<ReductionCheck> {
    let check = |packets: &[u32], published: &[u32]| {
        let packets = PacketSpec::new(packets.to_vec()).expect("valid layout");
        let published = PacketSpec::new(published.to_vec()).expect("valid layout");
        let literal = conjectured_reduction(&packets);
        let agrees = literal == published;
        ReductionCheck {
            packets,
            literal,
            published,
            agrees,
        }
    };
    vec![
        check(&[1, 1, 2], &[1, 1]),
        check(&[1, 1, 1, 2], &[1, 1, 1]),
        check(&[1, 3, 3], &[1, 3]),
        check(&[2, 2, 3], &[2, 2]),
        check(&[2, 3, 3], &[2, 3]),
    ]
}

/// Everything a report should say about reference targets for a layout.
#[derive(Clone, Debug, Serialize)]
pub struct ReferenceSummary {
    pub exact: Option<ExactValue>,
    pub rigorous: Option<RigorousInterval>,
    /// Result of the reduction rule read literally.
    pub reduction: PacketSpec,
    /// Set when a published comparison used a different reduction than
    /// the literal rule produces.
    pub reduction_conflict: Option<String>,
}

/// Builds the reference block for a report on this layout.
pub fn reference_summary(spec: &PacketSpec) -> ReferenceSummary {
    let reduction = conjectured_reduction(spec);
    let reduction_conflict = published_reduction_checks()
        .into_iter()
        .find(|check| &check.packets == spec && !check.agrees)
        .map(|check| {
            format!(
                "reduction rule read literally keeps {} unreduced, but the published \
                 comparison pairs it with {}",
                check.packets, check.published
            )
        });
    ReferenceSummary {
        exact: exact_value(spec),
        rigorous: rigorous_interval(spec),
        reduction,
        reduction_conflict,
    }
}
