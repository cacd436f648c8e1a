//! Reading and writing survivor-count tables.
//!
//! The on-disk format is two whitespace-separated numeric columns, radius
//! then survivor count, one level per row. Blank lines and lines starting
//! with `#` are ignored, so emitted tables may carry comment headers.

use std::path::Path;

use crate::multilevel::{BoxSchedule, SurvivalCounts};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("could not read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected two numeric columns (radius and count), got {text:?}")]
    Malformed { line: usize, text: String },
    #[error("line {line}: radius {radius} does not increase over the previous row")]
    RadiusNotIncreasing { line: usize, radius: u64 },
    #[error("line {line}: radius {radius} does not fit a 32-bit signed coordinate")]
    RadiusTooLarge { line: usize, radius: u64 },
    #[error("line {line}: survivor count {count} rises above the previous row")]
    CountRises { line: usize, count: u64 },
    #[error("no data rows found")]
    Empty,
    #[error("only one data row found; need at least two levels")]
    SingleRow,
}

/// Parses a survivor-count table. Rows must have strictly increasing radii
/// and non-increasing counts; violations are reported with their 1-based
/// line number.
pub fn ingest_counts_table(text: &str) -> Result<SurvivalCounts, IngestError> {
    let mut levels: Vec<u32> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        let mut fields = row.split_whitespace();
        let (radius, count) = match (fields.next(), fields.next(), fields.next()) {
            (Some(l), Some(n), None) => match (l.parse::<u64>(), n.parse::<u64>()) {
                (Ok(l), Ok(n)) => (l, n),
                _ => {
                    return Err(IngestError::Malformed {
                        line,
                        text: row.to_string(),
                    })
                }
            },
            _ => {
                return Err(IngestError::Malformed {
                    line,
                    text: row.to_string(),
                })
            }
        };
        if radius > i32::MAX as u64 {
            return Err(IngestError::RadiusTooLarge { line, radius });
        }
        if levels.last().is_some_and(|&prev| radius <= prev as u64) || radius == 0 {
            return Err(IngestError::RadiusNotIncreasing { line, radius });
        }
        if counts.last().is_some_and(|&prev| count > prev) {
            return Err(IngestError::CountRises { line, count });
        }
        levels.push(radius as u32);
        counts.push(count);
    }
    match levels.len() {
        0 => Err(IngestError::Empty),
        1 => Err(IngestError::SingleRow),
        _ => {
            let schedule = BoxSchedule::from_levels(levels)
                .expect("per-row checks guarantee a valid schedule");
            let table = SurvivalCounts {
                schedule,
                counts,
                packets: None,
                base_seed: None,
            };
            table
                .validate()
                .expect("per-row checks guarantee valid counts");
            Ok(table)
        }
    }
}

pub fn read_counts_file(path: &Path) -> Result<SurvivalCounts, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_counts_table(&text)
}

/// Renders a table in the same format `ingest_counts_table` reads.
pub fn emit_counts_tsv(table: &SurvivalCounts) -> String {
    let mut out = String::new();
    for (&level, &count) in table.schedule.levels().iter().zip(&table.counts) {
        out.push_str(&format!("{level}\t{count}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_plain_rows_with_comments_and_blanks() {
        let table = ingest_counts_table("# radius count\n\n30\t1000\n33 900\n  36\t 810 \n")
            .unwrap();
        assert_eq!(table.schedule.levels(), &[30, 33, 36]);
        assert_eq!(table.counts, vec![1000, 900, 810]);
        assert!(table.packets.is_none());
    }

    #[test]
    fn round_trips_through_emit() {
        let table = ingest_counts_table("30\t1000\n33\t900\n36\t810\n").unwrap();
        let emitted = emit_counts_tsv(&table);
        assert_eq!(emitted, "30\t1000\n33\t900\n36\t810\n");
        let again = ingest_counts_table(&emitted).unwrap();
        assert_eq!(again, table);
    }

    #[test]
    fn names_the_offending_line() {
        let err = ingest_counts_table("30\t1000\n29\t900\n").unwrap_err();
        assert!(matches!(
            err,
            IngestError::RadiusNotIncreasing { line: 2, radius: 29 }
        ));

        let err = ingest_counts_table("30\t1000\n33\t1100\n").unwrap_err();
        assert!(matches!(err, IngestError::CountRises { line: 2, count: 1100 }));

        let err = ingest_counts_table("# header\n30\tmany\n").unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 2, .. }));

        let err = ingest_counts_table("30\t1000\t7\n").unwrap_err();
        assert!(matches!(err, IngestError::Malformed { line: 1, .. }));
    }

    #[test]
    fn rejects_empty_and_single_row_tables() {
        assert!(matches!(
            ingest_counts_table("# header only\n"),
            Err(IngestError::Empty)
        ));
        assert!(matches!(
            ingest_counts_table("30\t1000\n"),
            Err(IngestError::SingleRow)
        ));
    }

    #[test]
    fn rejects_oversized_radii() {
        let text = format!("{}\t10\n{}\t9\n", 1u64 << 40, (1u64 << 40) + 1);
        assert!(matches!(
            ingest_counts_table(&text),
            Err(IngestError::RadiusTooLarge { line: 1, .. })
        ));
    }
}
