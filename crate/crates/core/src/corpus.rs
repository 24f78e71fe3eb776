//! Loading raw report files and splitting them into labeled sections.
//!
//! A header is a line whose text up to the first colon (after leading
//! whitespace) is either a lexicon spelling, matched case-insensitively, or an
//! all-caps phrase such as `COMPARISON` or `CLINICAL HISTORY`. Lexicon hits map
//! to their canonical label; all-caps phrases pass through lowercased. Text
//! after the colon on a header line starts the section body. Anything before
//! the first header lands in the `preamble` pseudo-section.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PREAMBLE: &str = "preamble";
pub const FINDINGS: &str = "findings";
pub const IMPRESSION: &str = "impression";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus directory {}: {source}", path.display())]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus root {} is not a directory", .0.display())]
    NotADirectory(PathBuf),
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("cannot read lexicon file {}: {source}", path.display())]
    LexiconIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawReport {
    pub report_id: String,
    pub source: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub label: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReport {
    pub report_id: String,
    pub source: String,
    pub sections: Vec<Section>,
}

impl ParsedReport {
    pub fn section(&self, label: &str) -> Option<&str> {
        self.sections
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.body.as_str())
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|s| s.label.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Unreadable,
    NonText,
    DuplicateId,
}

/// A file that could not become a [`RawReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub reports: Vec<RawReport>,
    pub skipped: Vec<SkippedFile>,
}

impl LoadedCorpus {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

/// Loads every non-hidden regular file under `root` as one report.
///
/// The id is the path relative to `root`, `/`-separated, with the final
/// extension removed. Output is sorted by id.
pub fn load_corpus(root: &Path, source: &str) -> Result<LoadedCorpus, CorpusError> {
    let meta = fs::metadata(root).map_err(|e| CorpusError::Unreadable {
        path: root.to_path_buf(),
        source: e,
    })?;
    if !meta.is_dir() {
        return Err(CorpusError::NotADirectory(root.to_path_buf()));
    }
    // Fail early if the root itself cannot be listed.
    fs::read_dir(root).map_err(|e| CorpusError::Unreadable {
        path: root.to_path_buf(),
        source: e,
    })?;

    let mut corpus = LoadedCorpus::default();
    let mut by_id: HashMap<String, PathBuf> = HashMap::new();

    let walker = walkdir::WalkDir::new(root)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !is_hidden(e.file_name()));

    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(err) => {
                corpus.skipped.push(SkippedFile {
                    path: err.path().map(Path::to_path_buf).unwrap_or_default(),
                    reason: SkipReason::Unreadable,
                    detail: err.to_string(),
                });
                continue;
            }
        };
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(err) => {
                corpus.skipped.push(SkippedFile {
                    path: path.to_path_buf(),
                    reason: SkipReason::Unreadable,
                    detail: err.to_string(),
                });
                continue;
            }
        };
        if bytes.contains(&0) {
            corpus.skipped.push(SkippedFile {
                path: path.to_path_buf(),
                reason: SkipReason::NonText,
                detail: "contains NUL bytes".into(),
            });
            continue;
        }
        let Some(report_id) = report_id_for(root, path) else {
            continue;
        };
        if let Some(first) = by_id.get(&report_id) {
            corpus.skipped.push(SkippedFile {
                path: path.to_path_buf(),
                reason: SkipReason::DuplicateId,
                detail: format!("id {report_id} already taken by {}", first.display()),
            });
            continue;
        }
        by_id.insert(report_id.clone(), path.to_path_buf());
        corpus.reports.push(RawReport {
            report_id,
            source: source.to_string(),
            text: String::from_utf8_lossy(&bytes).into_owned(),
        });
    }

    corpus.reports.sort_by(|a, b| a.report_id.cmp(&b.report_id));
    Ok(corpus)
}

fn is_hidden(name: &std::ffi::OsStr) -> bool {
    name.to_string_lossy().starts_with('.')
}

fn report_id_for(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let stemmed = rel.with_extension("");
    let parts: Vec<String> = stemmed
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    let id = parts.join("/");
    (!id.is_empty()).then_some(id)
}

/// Header spellings (lowercase) mapped to canonical labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    spellings: BTreeMap<String, String>,
}

impl Default for Lexicon {
    fn default() -> Self {
        let spellings = [
            ("findings", FINDINGS),
            ("finding", FINDINGS),
            ("impression", IMPRESSION),
            ("impressions", IMPRESSION),
        ]
        .into_iter()
        .map(|(s, l)| (s.to_string(), l.to_string()))
        .collect();
        Self { spellings }
    }
}

impl Lexicon {
    pub fn empty() -> Self {
        Self {
            spellings: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, spelling: &str, label: &str) {
        self.spellings
            .insert(spelling.trim().to_lowercase(), label.trim().to_lowercase());
    }

    /// Parses the override format: one `SPELLING -> canonical_label` per line.
    /// Blank lines and `#` comments are ignored. The result replaces the
    /// default lexicon rather than extending it.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut lexicon = Self::empty();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| CorpusError::Lexicon {
                line: idx + 1,
                message: message.to_string(),
            };
            let (spelling, label) = line
                .split_once("->")
                .ok_or_else(|| err("expected `SPELLING -> label`"))?;
            let (spelling, label) = (spelling.trim(), label.trim());
            if spelling.is_empty() || label.is_empty() {
                return Err(err("empty spelling or label"));
            }
            if spelling.contains(':') {
                return Err(err("spelling must not contain a colon"));
            }
            if label.chars().any(char::is_whitespace) {
                return Err(err("label must be a single token"));
            }
            if lexicon.spellings.contains_key(&spelling.to_lowercase()) {
                return Err(err("spelling listed twice"));
            }
            lexicon.insert(spelling, label);
        }
        Ok(lexicon)
    }

    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::LexiconIo {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Returns the section label and the remainder of the line if `line` is a header.
    pub fn classify<'a>(&self, line: &'a str) -> Option<(String, &'a str)> {
        let trimmed = line.trim_start();
        let colon = trimmed.find(':')?;
        let head = trimmed[..colon].trim_end();
        if head.is_empty() {
            return None;
        }
        let rest = &trimmed[colon + 1..];
        if let Some(label) = self.spellings.get(&head.to_lowercase()) {
            return Some((label.clone(), rest));
        }
        is_caps_header(head).then(|| (head.to_lowercase(), rest))
    }
}

/// `WORD` or `TWO WORDS`: ASCII capitals separated by single spaces, at least two letters.
fn is_caps_header(head: &str) -> bool {
    let letters = head.chars().filter(|c| c.is_ascii_uppercase()).count();
    letters >= 2
        && head.split(' ').all(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_uppercase()))
}

pub fn parse_report(raw: &RawReport, lexicon: &Lexicon) -> ParsedReport {
    let mut chunks: Vec<(String, Vec<&str>)> = vec![(PREAMBLE.to_string(), Vec::new())];
    for line in raw.text.split('\n') {
        let line = line.strip_suffix('\r').unwrap_or(line);
        match lexicon.classify(line) {
            Some((label, rest)) => chunks.push((label, vec![rest])),
            None => chunks.last_mut().expect("non-empty").1.push(line),
        }
    }

    let mut sections: Vec<Section> = Vec::new();
    for (label, lines) in chunks {
        let body = lines.join("\n");
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        match sections.iter_mut().find(|s| s.label == label) {
            Some(existing) => {
                existing.body.push_str("\n\n");
                existing.body.push_str(body);
            }
            None => sections.push(Section {
                label,
                body: body.to_string(),
            }),
        }
    }

    ParsedReport {
        report_id: raw.report_id.clone(),
        source: raw.source.clone(),
        sections,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawReport {
        RawReport {
            report_id: "r".into(),
            source: "test".into(),
            text: text.into(),
        }
    }

    fn pairs(p: &ParsedReport) -> Vec<(&str, &str)> {
        p.sections
            .iter()
            .map(|s| (s.label.as_str(), s.body.as_str()))
            .collect()
    }

    #[test]
    fn inline_headers() {
        let p = parse_report(
            &raw("FINDINGS: Clear lungs.\nIMPRESSION: No acute disease."),
            &Lexicon::default(),
        );
        assert_eq!(
            pairs(&p),
            vec![("findings", "Clear lungs."), ("impression", "No acute disease.")]
        );
    }

    #[test]
    fn no_headers_is_preamble() {
        let p = parse_report(&raw("  just some text\nmore  \n"), &Lexicon::default());
        assert_eq!(pairs(&p), vec![("preamble", "just some text\nmore")]);
    }

    #[test]
    fn empty_body_is_dropped() {
        let p = parse_report(&raw("Impression:  \nFINDINGS: x"), &Lexicon::default());
        assert_eq!(pairs(&p), vec![("findings", "x")]);
    }

    #[test]
    fn passthrough_and_preamble() {
        let text = "FINAL REPORT\n EXAMINATION: CHEST PA\n\nINDICATION: cough\n\nFindings:\n Heart size: normal.\n Lungs clear.\n\nIMPRESSIONS:\nNormal chest.";
        let p = parse_report(&raw(text), &Lexicon::default());
        assert_eq!(
            pairs(&p),
            vec![
                ("preamble", "FINAL REPORT"),
                ("examination", "CHEST PA"),
                ("indication", "cough"),
                ("findings", "Heart size: normal.\n Lungs clear."),
                ("impression", "Normal chest."),
            ]
        );
    }

    #[test]
    fn duplicate_headers_merge_in_place() {
        let text = "FINDINGS: a b\nIMPRESSION: ok\nFinding: c d";
        let p = parse_report(&raw(text), &Lexicon::default());
        assert_eq!(pairs(&p), vec![("findings", "a b\n\nc d"), ("impression", "ok")]);
    }

    #[test]
    fn mixed_case_words_before_colon_are_not_headers() {
        let lex = Lexicon::default();
        assert!(lex.classify("Heart size: normal").is_none());
        assert!(lex.classify("A: b").is_none());
        assert!(lex.classify(": nothing").is_none());
        assert_eq!(
            lex.classify("   impression :  x").map(|(l, r)| (l, r.trim())),
            Some(("impression".to_string(), "x"))
        );
        assert_eq!(
            lex.classify("CLINICAL HISTORY: y").map(|(l, _)| l),
            Some("clinical history".to_string())
        );
    }

    #[test]
    fn crlf_line_endings() {
        let p = parse_report(&raw("FINDINGS: a\r\nIMPRESSION: b\r\n"), &Lexicon::default());
        assert_eq!(pairs(&p), vec![("findings", "a"), ("impression", "b")]);
    }

    #[test]
    fn lexicon_override_file() {
        let lex = Lexicon::parse("# comment\nOBSERVATIONS -> findings\nconclusion -> impression\n")
            .unwrap();
        let p = parse_report(&raw("Observations: x y\nConclusion: z"), &lex);
        assert_eq!(pairs(&p), vec![("findings", "x y"), ("impression", "z")]);
        // The override replaces the defaults, so FINDINGS falls back to pass-through.
        assert_eq!(lex.classify("FINDINGS: q").map(|(l, _)| l), Some("findings".into()));
        assert_eq!(lex.classify("Findings: q"), None);
    }

    #[test]
    fn lexicon_errors_carry_line_numbers() {
        match Lexicon::parse("A -> b\n\nbroken line\n") {
            Err(CorpusError::Lexicon { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Lexicon::parse("X -> two words").is_err());
    }
}
