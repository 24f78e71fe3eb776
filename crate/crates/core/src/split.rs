//! Train/val/test assignment: from an official split file or a seeded ratio split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::ReportPair;
use crate::rng::{SeededRng, PRNG_NAME};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplitError {
    #[error("split file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("report {report_id} is mapped to unknown split {name:?}")]
    UnknownSplit { report_id: String, name: String },
    #[error("cannot read split file {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid split spec: {0}")]
    InvalidSpec(String),
    #[error("{available} pairs cannot fill {required} non-empty splits")]
    TooFewPairs { available: usize, required: usize },
    #[error("duplicate report id {0}")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    /// Accepts `validate` as an alias for `val`, as used by the MIMIC-CXR split file.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validate" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

impl Ratio {
    pub const fn new(train: u64, val: u64, test: u64) -> Self {
        Self { train, val, test }
    }

    fn parts(&self) -> [u64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        if self.parts().iter().all(|p| *p == 0) {
            return Err(SplitError::InvalidSpec("ratio components sum to zero".into()));
        }
        self.parts()
            .iter()
            .try_fold(0u64, |acc, p| acc.checked_add(*p))
            .map(|_| ())
            .ok_or_else(|| SplitError::InvalidSpec("ratio overflows".into()))
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Official,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub ratio: Ratio,
    pub seed: u64,
}

impl SplitSpec {
    pub fn ratio(ratio: Ratio, seed: u64) -> Self {
        Self {
            mode: SplitMode::Ratio,
            ratio,
            seed,
        }
    }
}

/// Largest-remainder apportionment of `total` over `ratio`.
///
/// Remainders are compared exactly as `total * part mod sum`; ties go to the
/// earlier split.
pub fn apportion(total: usize, ratio: &Ratio) -> [usize; 3] {
    let parts = ratio.parts();
    let sum: u128 = parts.iter().map(|p| *p as u128).sum();
    assert!(sum > 0, "ratio must not be all zero");
    let total_w = total as u128;
    let mut sizes = [0usize; 3];
    let mut remainders = [0u128; 3];
    for i in 0..3 {
        let scaled = total_w * parts[i] as u128;
        sizes[i] = (scaled / sum) as usize;
        remainders[i] = scaled % sum;
    }
    let leftover = total - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    // stable sort keeps train before val before test on ties
    order.sort_by(|a, b| remainders[*b].cmp(&remainders[*a]));
    for &i in order.iter().take(leftover) {
        sizes[i] += 1;
    }
    sizes
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn insert(&mut self, report_id: impl Into<String>, split: Split) -> Option<Split> {
        self.map.insert(report_id.into(), split)
    }

    pub fn get(&self, report_id: &str) -> Option<Split> {
        self.map.get(report_id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn ids_in(&self, split: Split) -> impl Iterator<Item = &str> {
        self.iter().filter(move |(_, s)| *s == split).map(|(id, _)| id)
    }

    /// Sizes in train, val, test order.
    pub fn sizes(&self) -> [usize; 3] {
        let mut sizes = [0; 3];
        for split in self.map.values() {
            sizes[split.index()] += 1;
        }
        sizes
    }

    /// `report_id<TAB>split` lines ordered by id, with an optional metadata header.
    pub fn to_tsv(&self, spec: Option<&SplitSpec>) -> String {
        let mut out = String::new();
        if let Some(spec) = spec.filter(|s| s.mode == SplitMode::Ratio) {
            out.push_str(&format!(
                "#seed={} ratio={} prng={}\n",
                spec.seed, spec.ratio, PRNG_NAME
            ));
        }
        for (id, split) in self.iter() {
            out.push_str(id);
            out.push('\t');
            out.push_str(split.as_str());
            out.push('\n');
        }
        out
    }

    /// Reads back [`SplitAssignment::to_tsv`] output (or an official split file).
    pub fn from_tsv(text: &str) -> Result<Self, SplitError> {
        let raw = parse_split_file(text)?;
        let mut assignment = Self::default();
        for (id, name) in raw {
            let split = name.parse().map_err(|_| SplitError::UnknownSplit {
                report_id: id.clone(),
                name,
            })?;
            assignment.insert(id, split);
        }
        Ok(assignment)
    }
}

/// Official split application result; `unmapped` lists pair ids absent from the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfficialSplit {
    pub assignment: SplitAssignment,
    pub unmapped: Vec<String>,
}

/// Parses `id<TAB>split` lines into raw (unvalidated) split names.
/// Blank lines and `#` lines are skipped.
pub fn parse_split_file(text: &str) -> Result<BTreeMap<String, String>, SplitError> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: &str| SplitError::Malformed {
            line: line_no,
            message: message.to_string(),
        };
        let mut fields = line.split('\t');
        let (Some(id), Some(name), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected exactly two tab-separated fields"));
        };
        let (id, name) = (id.trim(), name.trim());
        if id.is_empty() || name.is_empty() {
            return Err(malformed("empty report id or split name"));
        }
        if let Some(prev) = map.insert(id.to_string(), name.to_string()) {
            if prev != name {
                return Err(malformed(&format!("{id} assigned to both {prev} and {name}")));
            }
        }
    }
    Ok(map)
}

pub fn apply_official_split_text(
    pairs: &[ReportPair],
    split_text: &str,
) -> Result<OfficialSplit, SplitError> {
    let raw = parse_split_file(split_text)?;
    let mut assignment = SplitAssignment::default();
    let mut unmapped = Vec::new();
    for pair in pairs {
        match raw.get(&pair.report_id) {
            Some(name) => {
                let split = name.parse().map_err(|_| SplitError::UnknownSplit {
                    report_id: pair.report_id.clone(),
                    name: name.clone(),
                })?;
                if assignment.insert(pair.report_id.clone(), split).is_some() {
                    return Err(SplitError::DuplicateId(pair.report_id.clone()));
                }
            }
            None => unmapped.push(pair.report_id.clone()),
        }
    }
    unmapped.sort();
    Ok(OfficialSplit {
        assignment,
        unmapped,
    })
}

pub fn apply_official_split(pairs: &[ReportPair], split_file: &Path) -> Result<OfficialSplit, SplitError> {
    let text = std::fs::read_to_string(split_file).map_err(|e| SplitError::Io {
        path: split_file.display().to_string(),
        message: e.to_string(),
    })?;
    apply_official_split_text(pairs, &text)
}

/// Seeded ratio split of a set of ids. Input order does not matter.
pub fn random_split_ids<'a, I>(ids: I, spec: &SplitSpec) -> Result<SplitAssignment, SplitError>
where
    I: IntoIterator<Item = &'a str>,
{
    if spec.mode != SplitMode::Ratio {
        return Err(SplitError::InvalidSpec("random split requires ratio mode".into()));
    }
    spec.ratio.validate()?;
    let mut sorted = Vec::new();
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(SplitError::DuplicateId(id.to_string()));
        }
        sorted.push(id);
    }
    sorted.sort_unstable();

    let required = spec.ratio.parts().iter().filter(|p| **p > 0).count();
    if sorted.len() < required {
        return Err(SplitError::TooFewPairs {
            available: sorted.len(),
            required,
        });
    }

    SeededRng::new(spec.seed).shuffle(&mut sorted);
    let sizes = apportion(sorted.len(), &spec.ratio);
    let mut assignment = SplitAssignment::default();
    let mut cursor = 0;
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for id in &sorted[cursor..cursor + size] {
            assignment.insert(*id, split);
        }
        cursor += size;
    }
    Ok(assignment)
}

pub fn random_split(pairs: &[ReportPair], spec: &SplitSpec) -> Result<SplitAssignment, SplitError> {
    random_split_ids(pairs.iter().map(|p| p.report_id.as_str()), spec)
}
