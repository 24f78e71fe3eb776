//! Instruction-tuning records and the fine-tuning manifest.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;
use crate::preprocess::ReportPair;
use crate::split::{Split, SplitAssignment};

pub const DEFAULT_TEMPLATE_ID: &str = "findings-to-impression";
pub const DEFAULT_INSTRUCTION: &str = "Derive the impression from findings in the radiology report";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("report {0} has no split assignment")]
    Unassigned(String),
    #[error("unknown instruction template {0:?}")]
    UnknownTemplate(String),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing key {key:?}")]
    MissingKey { line: usize, key: String },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionTemplate {
    pub template_id: String,
    pub instruction_text: String,
}

impl Default for InstructionTemplate {
    fn default() -> Self {
        Self {
            template_id: DEFAULT_TEMPLATE_ID.into(),
            instruction_text: DEFAULT_INSTRUCTION.into(),
        }
    }
}

impl InstructionTemplate {
    pub fn new(template_id: impl Into<String>, instruction_text: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            instruction_text: instruction_text.into(),
        }
    }

    /// Looks up a shipped template. Only the findings-to-impression one exists.
    pub fn by_id(id: &str) -> Result<Self, DatasetError> {
        match id {
            DEFAULT_TEMPLATE_ID => Ok(Self::default()),
            other => Err(DatasetError::UnknownTemplate(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub report_id: String,
    pub source: String,
    pub split: Split,
    pub template_id: String,
}

/// Field order is the serialized key order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub meta: RecordMeta,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordSet {
    pub train: Vec<InstructionRecord>,
    pub val: Vec<InstructionRecord>,
    pub test: Vec<InstructionRecord>,
}

impl RecordSet {
    pub fn get(&self, split: Split) -> &[InstructionRecord] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn get_mut(&mut self, split: Split) -> &mut Vec<InstructionRecord> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &InstructionRecord> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// One record per pair, grouped by split and ordered by report id within each split.
pub fn build_records(
    pairs: &[ReportPair],
    assignment: &SplitAssignment,
    template: &InstructionTemplate,
) -> Result<RecordSet, DatasetError> {
    let mut set = RecordSet::default();
    for pair in pairs {
        let split = assignment
            .get(&pair.report_id)
            .ok_or_else(|| DatasetError::Unassigned(pair.report_id.clone()))?;
        set.get_mut(split).push(InstructionRecord {
            instruction: template.instruction_text.clone(),
            input: pair.findings.clone(),
            output: pair.impression.clone(),
            meta: RecordMeta {
                report_id: pair.report_id.clone(),
                source: pair.source.clone(),
                split,
                template_id: template.template_id.clone(),
            },
        });
    }
    for split in Split::ALL {
        set.get_mut(split).sort_by(|a, b| {
            (&a.meta.report_id, &a.meta.source).cmp(&(&b.meta.report_id, &b.meta.source))
        });
    }
    Ok(set)
}

pub fn write_records<'a, W, I>(mut out: W, records: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a InstructionRecord>,
{
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn serialize_records(records: &[InstructionRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to a Vec cannot fail");
    buf
}

const RECORD_KEYS: [&str; 4] = ["instruction", "input", "output", "meta"];
const META_KEYS: [&str; 4] = ["report_id", "source", "split", "template_id"];

pub fn parse_records(bytes: &[u8]) -> Result<Vec<InstructionRecord>, DatasetError> {
    let mut records = Vec::new();
    if bytes.is_empty() {
        return Ok(records);
    }
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    for (idx, raw) in body.split(|b| *b == b'\n').enumerate() {
        let line = idx + 1;
        let malformed = |message: String| DatasetError::Malformed { line, message };
        let text = std::str::from_utf8(raw).map_err(|e| malformed(format!("invalid UTF-8: {e}")))?;
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| malformed("expected a JSON object".into()))?;
        for key in RECORD_KEYS {
            if !obj.contains_key(key) {
                return Err(DatasetError::MissingKey { line, key: key.into() });
            }
        }
        if let Some(meta) = obj["meta"].as_object() {
            for key in META_KEYS {
                if !meta.contains_key(key) {
                    return Err(DatasetError::MissingKey {
                        line,
                        key: format!("meta.{key}"),
                    });
                }
            }
        }
        let record: InstructionRecord =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        if record.input.is_empty() || record.output.is_empty() {
            return Err(malformed("input and output must be non-empty".into()));
        }
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub fn as_str(self) -> &'static str {
        match self {
            Projection::Query => "query",
            Projection::Key => "key",
            Projection::Value => "value",
            Projection::Output => "output",
        }
    }
}

impl FromStr for Projection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" => Ok(Projection::Query),
            "key" => Ok(Projection::Key),
            "value" => Ok(Projection::Value),
            "output" => Ok(Projection::Output),
            other => Err(format!("unknown projection {other:?}")),
        }
    }
}

/// Low-rank adapter fine-tuning settings handed to the trainer.
///
/// Defaults: rank 8, alpha 16, dropout 0.05 on query and value projections,
/// learning rate 3e-4, batch size 128. Epochs, optimizer and sequence caps
/// belong to the trainer's own config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingManifest {
    pub base_model_ref: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub target_projections: Vec<Projection>,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub dataset_path: PathBuf,
}

impl Default for TrainingManifest {
    fn default() -> Self {
        Self {
            base_model_ref: "alpaca-7b".into(),
            lora_rank: 8,
            lora_alpha: 16,
            lora_dropout: 0.05,
            target_projections: vec![Projection::Query, Projection::Value],
            learning_rate: 3e-4,
            batch_size: 128,
            dataset_path: PathBuf::from("train.jsonl"),
        }
    }
}

const MANIFEST_KEYS: [&str; 8] = [
    "base_model_ref",
    "lora_rank",
    "lora_alpha",
    "lora_dropout",
    "target_projections",
    "learning_rate",
    "batch_size",
    "dataset_path",
];

impl TrainingManifest {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::InvalidManifest(m.to_string()));
        if self.base_model_ref.trim().is_empty() || self.base_model_ref.contains('\n') {
            return bad("base_model_ref must be a non-empty single line");
        }
        if self.lora_rank < 1 {
            return bad("lora_rank must be >= 1");
        }
        if self.lora_alpha < 1 {
            return bad("lora_alpha must be >= 1");
        }
        if !(0.0..1.0).contains(&self.lora_dropout) {
            return bad("lora_dropout must be in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be a positive finite number");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.target_projections.is_empty() {
            return bad("target_projections must not be empty");
        }
        let unique: BTreeSet<_> = self.target_projections.iter().collect();
        if unique.len() != self.target_projections.len() {
            return bad("target_projections lists a projection twice");
        }
        let path = self.dataset_path.to_string_lossy();
        if path.is_empty() || path.contains('\n') {
            return bad("dataset_path must be a non-empty single line");
        }
        Ok(())
    }

    /// Flat `key=value` text, one key per line in a fixed order.
    pub fn to_kv(&self) -> String {
        let projections: Vec<&str> = self.target_projections.iter().map(|p| p.as_str()).collect();
        format!(
            "base_model_ref={}\nlora_rank={}\nlora_alpha={}\nlora_dropout={}\ntarget_projections={}\nlearning_rate={}\nbatch_size={}\ndataset_path={}\n",
            self.base_model_ref,
            self.lora_rank,
            self.lora_alpha,
            self.lora_dropout,
            projections.join(","),
            self.learning_rate,
            self.batch_size,
            self.dataset_path.to_string_lossy(),
        )
    }

    pub fn from_kv(text: &str) -> Result<Self, DatasetError> {
        let mut values: [Option<(usize, &str)>; 8] = [None; 8];
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |m: String| DatasetError::ManifestSyntax { line: line_no, message: m };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected key=value".into()))?;
            let slot = MANIFEST_KEYS
                .iter()
                .position(|k| *k == key.trim())
                .ok_or_else(|| syntax(format!("unknown key {:?}", key.trim())))?;
            if values[slot].replace((line_no, value)).is_some() {
                return Err(syntax(format!("duplicate key {:?}", key.trim())));
            }
        }
        let get = |i: usize| {
            values[i].ok_or_else(|| DatasetError::InvalidManifest(format!("missing key {}", MANIFEST_KEYS[i])))
        };
        fn num<T: FromStr>((line, v): (usize, &str)) -> Result<T, DatasetError> {
            v.trim().parse().map_err(|_| DatasetError::ManifestSyntax {
                line,
                message: format!("cannot parse {v:?}"),
            })
        }
        let (proj_line, proj) = get(4)?;
        let target_projections = proj
            .split(',')
            .map(|p| {
                p.trim().parse().map_err(|m| DatasetError::ManifestSyntax {
                    line: proj_line,
                    message: m,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let manifest = Self {
            base_model_ref: get(0)?.1.to_string(),
            lora_rank: num(get(1)?)?,
            lora_alpha: num(get(2)?)?,
            lora_dropout: num(get(3)?)?,
            target_projections,
            learning_rate: num(get(5)?)?,
            batch_size: num(get(6)?)?,
            dataset_path: PathBuf::from(get(7)?.1),
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

impl fmt::Display for TrainingManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_kv())
    }
}

/// Validates, then writes the manifest atomically. Nothing is written on a validation error.
pub fn emit_manifest(manifest: &TrainingManifest, path: &Path) -> Result<(), DatasetError> {
    manifest.validate()?;
    fsutil::write_atomic(path, manifest.to_kv().as_bytes())?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<TrainingManifest, DatasetError> {
    TrainingManifest::from_kv(&std::fs::read_to_string(path)?)
}
