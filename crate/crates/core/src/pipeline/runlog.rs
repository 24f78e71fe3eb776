use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{PipelineError, Stage};
use crate::fsutil::{file_digest, write_atomic};
use crate::jsonl::AppendLog;

pub const RUN_LOG_FILE: &str = "run_log.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

/// Machine-readable record of one stage run, appended to the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub status: StageStatus,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub config_digest: String,
    /// Empty for stages that always run.
    pub input_digest: String,
    pub seeds: BTreeMap<String, u64>,
    pub counts: Value,
    /// Output path relative to the run directory -> content digest.
    pub outputs: BTreeMap<String, String>,
}

fn state_path(out: &Path, stage: Stage) -> PathBuf {
    out.join("state").join(format!("{stage}.json"))
}

pub(super) fn load_state(out: &Path, stage: Stage) -> Result<Option<StageSummary>, PipelineError> {
    let path = state_path(out, stage);
    match std::fs::read(&path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes).ok()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(PipelineError::io(&path, e)),
    }
}

pub(super) fn save_state(out: &Path, summary: &StageSummary) -> Result<(), PipelineError> {
    let path = state_path(out, summary.stage);
    let bytes = serde_json::to_vec_pretty(summary).expect("serializable");
    write_atomic(&path, &bytes).map_err(|e| PipelineError::io(&path, e))
}

pub(super) fn outputs_intact(out: &Path, summary: &StageSummary) -> bool {
    summary
        .outputs
        .iter()
        .all(|(rel, digest)| file_digest(&out.join(rel)).is_ok_and(|d| &d == digest))
}

pub(super) fn digest_outputs(out: &Path, paths: &[PathBuf]) -> Result<BTreeMap<String, String>, PipelineError> {
    paths
        .iter()
        .map(|p| {
            let rel = p
                .strip_prefix(out)
                .unwrap_or(p)
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            let digest = file_digest(p).map_err(|e| PipelineError::io(p, e))?;
            Ok((rel, digest))
        })
        .collect()
}

pub(super) fn append(out: &Path, summary: &StageSummary) -> Result<(), PipelineError> {
    let path = out.join(RUN_LOG_FILE);
    let (mut log, _) = AppendLog::<StageSummary>::open(&path).map_err(|e| PipelineError::io(&path, e))?;
    log.append(summary).map_err(|e| PipelineError::io(&path, e))
}
