use std::collections::HashMap;
use std::path::Path;

use super::{GatewayError, GeneratedImpression};
use crate::jsonl::{self, AppendLog, LogError};

/// Append-only JSONL store of generation results, one line per
/// (report_id, model_label) cell. A torn final line left by a crash is
/// dropped on open; if a cell appears twice the first entry wins.
pub struct ResultsLedger {
    log: AppendLog<GeneratedImpression>,
    entries: Vec<GeneratedImpression>,
    index: HashMap<(String, String), usize>,
}

impl From<LogError> for GatewayError {
    fn from(err: LogError) -> Self {
        match err {
            LogError::Io(e) => GatewayError::Io(e),
            corrupt => GatewayError::Ledger(corrupt.to_string()),
        }
    }
}

fn first_per_cell(records: Vec<GeneratedImpression>) -> Vec<GeneratedImpression> {
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .filter(|e| seen.insert((e.report_id.clone(), e.model_label.clone())))
        .collect()
}

impl ResultsLedger {
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let (log, records) = AppendLog::open(path)?;
        let entries = first_per_cell(records);
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| ((e.report_id.clone(), e.model_label.clone()), i))
            .collect();
        Ok(Self { log, entries, index })
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }

    pub fn contains(&self, report_id: &str, model_label: &str) -> bool {
        self.get(report_id, model_label).is_some()
    }

    pub fn get(&self, report_id: &str, model_label: &str) -> Option<&GeneratedImpression> {
        self.index
            .get(&(report_id.to_string(), model_label.to_string()))
            .map(|i| &self.entries[*i])
    }

    pub fn entries(&self) -> &[GeneratedImpression] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends and syncs `entry`. Returns false, writing nothing, if the cell is already stored.
    pub fn append(&mut self, entry: GeneratedImpression) -> Result<bool, GatewayError> {
        let key = (entry.report_id.clone(), entry.model_label.clone());
        if self.index.contains_key(&key) {
            return Ok(false);
        }
        self.log.append(&entry)?;
        self.index.insert(key, self.entries.len());
        self.entries.push(entry);
        Ok(true)
    }
}

/// Reads a ledger file without opening it for writing.
pub fn read_ledger(path: &Path) -> Result<Vec<GeneratedImpression>, GatewayError> {
    Ok(first_per_cell(jsonl::read_all(path)?))
}
