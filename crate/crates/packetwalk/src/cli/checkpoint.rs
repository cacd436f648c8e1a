//! Campaign checkpoints: periodic snapshots that let a long run resume
//! after interruption and still produce counts bit-identical to an
//! uninterrupted run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::multilevel::{to_hex, BoxSchedule, CampaignOptions, CampaignProgress};
use crate::walkers::{PacketSpec, WalkRules};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("could not read checkpoint {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("checkpoint {path} is not valid JSON: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("checkpoint {path} failed its integrity check; refusing to resume")]
    Corrupt { path: String },
    #[error(
        "checkpoint {path} belongs to a different campaign \
         (identity {found}, this campaign is {expected})"
    )]
    WrongCampaign {
        path: String,
        found: String,
        expected: String,
    },
}

/// Everything that determines a campaign's counts, hashed so a checkpoint
/// can only resume the campaign that wrote it. Worker count and memory
/// policy are deliberately excluded: the counts are invariant to both.
#[derive(Serialize)]
struct CampaignIdentity<'a> {
    packets: &'a [u32],
    levels: &'a [u32],
    sample_count: u64,
    base_seed: u64,
    rules: WalkRules,
}

pub fn campaign_identity(
    spec: &PacketSpec,
    schedule: &BoxSchedule,
    options: &CampaignOptions,
) -> String {
    let identity = CampaignIdentity {
        packets: spec.counts(),
        levels: schedule.levels(),
        sample_count: options.sample_count,
        base_seed: options.base_seed,
        rules: options.rules,
    };
    let canonical = serde_json::to_vec(&identity).expect("identity fields serialize");
    to_hex(&Sha256::digest(&canonical))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    identity: String,
    progress: CampaignProgress,
    checksum: String,
}

fn payload_checksum(identity: &str, progress: &CampaignProgress) -> String {
    let mut hasher = Sha256::new();
    hasher.update(identity.as_bytes());
    hasher.update(progress.completed.to_le_bytes());
    hasher.update((progress.counts.len() as u64).to_le_bytes());
    for &count in &progress.counts {
        hasher.update(count.to_le_bytes());
    }
    to_hex(&hasher.finalize())
}

/// Writes a checkpoint atomically: a temporary file is renamed over the
/// target, so the checkpoint on disk is always complete.
pub fn save_checkpoint(
    path: &Path,
    identity: &str,
    progress: &CampaignProgress,
) -> std::io::Result<()> {
    let file = CheckpointFile {
        identity: identity.to_string(),
        progress: progress.clone(),
        checksum: payload_checksum(identity, progress),
    };
    let json = serde_json::to_string_pretty(&file).expect("checkpoint fields serialize");
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)
}

/// Loads a checkpoint, verifying its checksum and that it belongs to the
/// campaign identified by `expected_identity`.
pub fn load_checkpoint(
    path: &Path,
    expected_identity: &str,
) -> Result<CampaignProgress, CheckpointError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: name.clone(),
        source,
    })?;
    let file: CheckpointFile =
        serde_json::from_str(&text).map_err(|source| CheckpointError::Parse {
            path: name.clone(),
            source,
        })?;
    if payload_checksum(&file.identity, &file.progress) != file.checksum {
        return Err(CheckpointError::Corrupt { path: name });
    }
    if file.identity != expected_identity {
        return Err(CheckpointError::WrongCampaign {
            path: name,
            found: file.identity,
            expected: expected_identity.to_string(),
        });
    }
    Ok(file.progress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilevel::GrowthRatio;

    fn fixture() -> (PacketSpec, BoxSchedule, CampaignOptions) {
        let spec = PacketSpec::new(vec![1, 1]).unwrap();
        let schedule =
            BoxSchedule::build(30, GrowthRatio::new(11, 10).unwrap(), 100).unwrap();
        let options = CampaignOptions::new(1000, 7);
        (spec, schedule, options)
    }

    #[test]
    fn round_trips_through_disk() {
        let (spec, schedule, options) = fixture();
        let identity = campaign_identity(&spec, &schedule, &options);
        let progress = CampaignProgress {
            completed: 500,
            counts: vec![500, 320, 210, 140, 90, 60, 40, 25, 16, 10, 6, 4, 3],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&path, &identity, &progress).unwrap();
        let loaded = load_checkpoint(&path, &identity).unwrap();
        assert_eq!(loaded, progress);
        assert!(!path.with_extension("json.tmp").exists());
    }

    #[test]
    fn identity_ignores_worker_count_but_not_campaign_shape() {
        let (spec, schedule, options) = fixture();
        let identity = campaign_identity(&spec, &schedule, &options);

        let mut more_workers = options.clone();
        more_workers.workers = 16;
        assert_eq!(
            campaign_identity(&spec, &schedule, &more_workers),
            identity
        );

        let mut other_seed = options.clone();
        other_seed.base_seed = 8;
        assert_ne!(campaign_identity(&spec, &schedule, &other_seed), identity);

        let taller =
            BoxSchedule::build(30, GrowthRatio::new(11, 10).unwrap(), 200).unwrap();
        assert_ne!(campaign_identity(&spec, &taller, &options), identity);
    }

    #[test]
    fn refuses_corrupted_and_foreign_checkpoints() {
        let (spec, schedule, options) = fixture();
        let identity = campaign_identity(&spec, &schedule, &options);
        let progress = CampaignProgress {
            completed: 10,
            counts: vec![10; schedule.levels().len()],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        save_checkpoint(&path, &identity, &progress).unwrap();

        // Tamper with a count: the checksum no longer matches.
        let tampered = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("10", "11", 1);
        std::fs::write(&path, tampered).unwrap();
        assert!(matches!(
            load_checkpoint(&path, &identity),
            Err(CheckpointError::Corrupt { .. })
        ));

        // A valid checkpoint for another campaign is refused by identity.
        save_checkpoint(&path, &identity, &progress).unwrap();
        let mut altered = options.clone();
        altered.sample_count += 1;
        let other = campaign_identity(&spec, &schedule, &altered);
        assert!(matches!(
            load_checkpoint(&path, &other),
            Err(CheckpointError::WrongCampaign { .. })
        ));

        // Unreadable and unparsable files have their own errors.
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing.json"), &identity),
            Err(CheckpointError::Io { .. })
        ));
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(
            load_checkpoint(&path, &identity),
            Err(CheckpointError::Parse { .. })
        ));
    }
}
