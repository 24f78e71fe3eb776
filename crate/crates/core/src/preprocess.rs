//! Eligibility filtering of parsed reports into (findings, impression) pairs.
//!
//! Rules run in a fixed order on normalized text and the first failure wins:
//! a missing findings or impression section, findings under
//! `min_findings_words`, impression under `min_impression_words`.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ParsedReport, FINDINGS, IMPRESSION};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("substitution table: {0}")]
    Substitution(String),
    #[error("filter policy: {0}")]
    Policy(String),
}

/// Number of maximal non-whitespace runs.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Case-insensitive whole-token replacements applied after whitespace cleanup.
///
/// Keys are single tokens. Values are non-empty, single-space separated, and
/// may not contain any key as a token, which keeps normalization idempotent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Substitutions {
    table: HashMap<String, String>,
}

impl Substitutions {
    pub fn new<I, K, V>(entries: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table = HashMap::new();
        for (key, value) in entries {
            let (key, value) = (key.as_ref(), value.as_ref());
            if key.is_empty() || key.chars().any(char::is_whitespace) {
                return Err(ConfigError::Substitution(format!(
                    "key {key:?} must be one non-empty token"
                )));
            }
            if value.is_empty() || value.split(' ').any(|w| w.is_empty() || w.chars().any(char::is_whitespace)) {
                return Err(ConfigError::Substitution(format!(
                    "replacement for {key:?} must be words separated by single spaces"
                )));
            }
            if table.insert(key.to_lowercase(), value.to_string()).is_some() {
                return Err(ConfigError::Substitution(format!(
                    "key {key:?} listed twice (keys are case-insensitive)"
                )));
            }
        }
        for (key, value) in &table {
            if let Some(tok) = value.split(' ').find(|t| table.contains_key(&t.to_lowercase())) {
                return Err(ConfigError::Substitution(format!(
                    "replacement for {key:?} contains the key {tok:?}"
                )));
            }
        }
        Ok(Self { table })
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    fn lookup(&self, token: &str) -> Option<&str> {
        if self.table.is_empty() {
            return None;
        }
        self.table.get(&token.to_lowercase()).map(String::as_str)
    }

    /// Entries sorted by key, for digests and summaries.
    pub fn sorted_entries(&self) -> BTreeMap<&str, &str> {
        self.table
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect()
    }
}

/// Collapses blank space, trims, then applies `subs`.
///
/// Line endings are unified to `\n` first; runs of spaces and tabs become one
/// space; three or more consecutive newlines become two.
pub fn normalize_text(text: &str, subs: &Substitutions) -> String {
    let mut collapsed = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    let mut newlines = 0usize;
    let mut in_blank = false;
    while let Some(c) = chars.next() {
        let c = if c == '\r' {
            if chars.peek() == Some(&'\n') {
                chars.next();
            }
            '\n'
        } else {
            c
        };
        match c {
            ' ' | '\t' => {
                if !in_blank {
                    collapsed.push(' ');
                    in_blank = true;
                }
            }
            '\n' => {
                in_blank = false;
                newlines += 1;
                if newlines <= 2 {
                    collapsed.push('\n');
                }
            }
            other => {
                in_blank = false;
                newlines = 0;
                collapsed.push(other);
            }
        }
        if c != '\n' {
            newlines = 0;
        }
    }
    let trimmed = collapsed.trim();
    if subs.is_empty() {
        return trimmed.to_string();
    }

    let mut out = String::with_capacity(trimmed.len());
    let mut token_start: Option<usize> = None;
    for (idx, c) in trimmed.char_indices() {
        if c.is_whitespace() {
            if let Some(start) = token_start.take() {
                push_token(&mut out, &trimmed[start..idx], subs);
            }
            out.push(c);
        } else if token_start.is_none() {
            token_start = Some(idx);
        }
    }
    if let Some(start) = token_start {
        push_token(&mut out, &trimmed[start..], subs);
    }
    out
}

fn push_token(out: &mut String, token: &str, subs: &Substitutions) {
    out.push_str(subs.lookup(token).unwrap_or(token));
}

/// Which non-target sections get discarded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SectionRemoval {
    /// Everything except findings and impression.
    #[default]
    AllButTargets,
    Labels(BTreeSet<String>),
}

impl SectionRemoval {
    pub fn removes(&self, label: &str) -> bool {
        match self {
            Self::AllButTargets => label != FINDINGS && label != IMPRESSION,
            Self::Labels(labels) => labels.contains(label),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterPolicy {
    pub min_findings_words: usize,
    pub min_impression_words: usize,
    pub sections_to_remove: SectionRemoval,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_findings_words: 10,
            min_impression_words: 2,
            sections_to_remove: SectionRemoval::AllButTargets,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_findings_words < 1 {
            return Err(ConfigError::Policy("min_findings_words must be >= 1".into()));
        }
        if self.min_impression_words < 1 {
            return Err(ConfigError::Policy("min_impression_words must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportPair {
    pub report_id: String,
    pub source: String,
    pub findings: String,
    pub impression: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExclusionReason {
    MissingSection,
    FindingsTooShort,
    ImpressionTooShort,
}

impl ExclusionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MissingSection => "MissingSection",
            Self::FindingsTooShort => "FindingsTooShort",
            Self::ImpressionTooShort => "ImpressionTooShort",
        }
    }
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ExclusionReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MissingSection" => Ok(Self::MissingSection),
            "FindingsTooShort" => Ok(Self::FindingsTooShort),
            "ImpressionTooShort" => Ok(Self::ImpressionTooShort),
            other => Err(format!("unknown exclusion reason {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionRecord {
    pub report_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterOutcome {
    Eligible(ReportPair),
    Excluded(ExclusionRecord),
}

pub fn filter_report(
    parsed: &ParsedReport,
    policy: &FilterPolicy,
    subs: &Substitutions,
) -> FilterOutcome {
    let kept = |label: &str| {
        if policy.sections_to_remove.removes(label) {
            None
        } else {
            parsed.section(label)
        }
    };
    let findings = kept(FINDINGS).map(|t| normalize_text(t, subs));
    let impression = kept(IMPRESSION).map(|t| normalize_text(t, subs));
    let exclude = |reason| {
        FilterOutcome::Excluded(ExclusionRecord {
            report_id: parsed.report_id.clone(),
            reason,
        })
    };

    let (findings, impression) = match (findings, impression) {
        (Some(f), Some(i)) if !f.is_empty() && !i.is_empty() => (f, i),
        _ => return exclude(ExclusionReason::MissingSection),
    };
    if word_count(&findings) < policy.min_findings_words {
        return exclude(ExclusionReason::FindingsTooShort);
    }
    if word_count(&impression) < policy.min_impression_words {
        return exclude(ExclusionReason::ImpressionTooShort);
    }
    FilterOutcome::Eligible(ReportPair {
        report_id: parsed.report_id.clone(),
        source: parsed.source.clone(),
        findings,
        impression,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub eligible: usize,
    pub missing_section: usize,
    pub findings_too_short: usize,
    pub impression_too_short: usize,
}

impl FilterSummary {
    pub fn excluded(&self) -> usize {
        self.missing_section + self.findings_too_short + self.impression_too_short
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub pairs: Vec<ReportPair>,
    pub exclusions: Vec<ExclusionRecord>,
    pub summary: FilterSummary,
}

/// Order-preserving partition of `parsed` into eligible pairs and exclusions.
pub fn filter_corpus(
    parsed: &[ParsedReport],
    policy: &FilterPolicy,
    subs: &Substitutions,
) -> FilterReport {
    let mut report = FilterReport::default();
    report.summary.total = parsed.len();
    for p in parsed {
        match filter_report(p, policy, subs) {
            FilterOutcome::Eligible(pair) => {
                report.summary.eligible += 1;
                report.pairs.push(pair);
            }
            FilterOutcome::Excluded(rec) => {
                match rec.reason {
                    ExclusionReason::MissingSection => report.summary.missing_section += 1,
                    ExclusionReason::FindingsTooShort => report.summary.findings_too_short += 1,
                    ExclusionReason::ImpressionTooShort => {
                        report.summary.impression_too_short += 1
                    }
                }
                report.exclusions.push(rec);
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Section;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    fn parsed(sections: &[(&str, &str)]) -> ParsedReport {
        ParsedReport {
            report_id: "r1".into(),
            source: "t".into(),
            sections: sections
                .iter()
                .map(|(l, b)| Section {
                    label: l.to_string(),
                    body: b.to_string(),
                })
                .collect(),
        }
    }

    fn reason(o: FilterOutcome) -> Option<ExclusionReason> {
        match o {
            FilterOutcome::Eligible(_) => None,
            FilterOutcome::Excluded(r) => Some(r.reason),
        }
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("No acute cardiopulmonary process."), 4);
        assert_eq!(word_count("  a\tb\nc  "), 3);
    }

    #[test]
    fn normalize_examples() {
        let none = Substitutions::default();
        assert_eq!(normalize_text("a   b", &none), "a b");
        assert_eq!(normalize_text("x", &none), "x");
        assert_eq!(normalize_text("a\n\n\n\nb", &none), "a\n\nb");
        assert_eq!(normalize_text("a\r\n\r\n\r\nb\t\tc ", &none), "a\n\nb c");
        let subs = Substitutions::new([("c/w", "consistent with")]).unwrap();
        assert_eq!(normalize_text("c/w edema", &subs), "consistent with edema");
        assert_eq!(normalize_text("C/W  edema\nc/w", &subs), "consistent with edema\nconsistent with");
        // whole tokens only
        assert_eq!(normalize_text("c/w, edema", &subs), "c/w, edema");
    }

    #[test]
    fn malformed_tables_rejected() {
        assert!(Substitutions::new([("two words", "x")]).is_err());
        assert!(Substitutions::new([("a", "")]).is_err());
        assert!(Substitutions::new([("a", "b  c")]).is_err());
        assert!(Substitutions::new([("a", "x"), ("A", "y")]).is_err());
        assert!(Substitutions::new([("a", "b"), ("b", "c")]).is_err());
        assert!(Substitutions::new([("a", "b c"), ("d", "e")]).is_ok());
    }

    #[test]
    fn filter_threshold_rules() {
        let policy = FilterPolicy::default();
        let subs = Substitutions::default();
        let f = |s: &[(&str, &str)]| reason(filter_report(&parsed(s), &policy, &subs));

        assert_eq!(f(&[("findings", &words(12))]), Some(ExclusionReason::MissingSection));
        assert_eq!(
            f(&[("findings", &words(9)), ("impression", &words(5))]),
            Some(ExclusionReason::FindingsTooShort)
        );
        assert_eq!(f(&[("findings", &words(10)), ("impression", &words(2))]), None);
        assert_eq!(
            f(&[("findings", &words(12)), ("impression", &words(1))]),
            Some(ExclusionReason::ImpressionTooShort)
        );
        // missing impression and short findings: first rule wins
        assert_eq!(f(&[("findings", &words(3))]), Some(ExclusionReason::MissingSection));
    }

    #[test]
    fn eligible_pair_is_normalized() {
        let p = parsed(&[
            ("preamble", "FINAL REPORT"),
            ("findings", "a  b c d e f g h i\t\tj"),
            ("impression", "No   change."),
        ]);
        match filter_report(&p, &FilterPolicy::default(), &Substitutions::default()) {
            FilterOutcome::Eligible(pair) => {
                assert_eq!(pair.findings, "a b c d e f g h i j");
                assert_eq!(pair.impression, "No change.");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn removed_target_section_counts_as_missing() {
        let policy = FilterPolicy {
            sections_to_remove: SectionRemoval::Labels(["impression".to_string()].into()),
            ..FilterPolicy::default()
        };
        let p = parsed(&[("findings", &words(10)), ("impression", "a b")]);
        assert_eq!(
            reason(filter_report(&p, &policy, &Substitutions::default())),
            Some(ExclusionReason::MissingSection)
        );
    }

    #[test]
    fn policy_validation() {
        let mut p = FilterPolicy::default();
        assert!(p.validate().is_ok());
        p.min_findings_words = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn empty_corpus() {
        let r = filter_corpus(&[], &FilterPolicy::default(), &Substitutions::default());
        assert!(r.pairs.is_empty() && r.exclusions.is_empty());
        assert_eq!(r.summary, FilterSummary::default());
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just(" ".to_string()),
                Just("\t".to_string()),
                Just("\n".to_string()),
                Just("\r\n".to_string()),
                Just("c/w".to_string()),
                "[a-zA-Z.,]{1,6}",
            ],
            0..40,
        )
        .prop_map(|parts| parts.concat())
    }

    fn report_strategy() -> impl Strategy<Value = ParsedReport> {
        (0usize..15, proptest::option::of(0usize..4), any::<bool>()).prop_map(|(f, i, has_f)| {
            let mut s = Vec::new();
            let fw = words(f);
            let iw = i.map(words);
            if has_f && f > 0 {
                s.push(("findings", fw.as_str()));
            }
            if let Some(iw) = iw.as_deref().filter(|t| !t.is_empty()) {
                s.push(("impression", iw));
            }
            let mut p = parsed(&s);
            p.report_id = format!("{f}-{i:?}-{has_f}");
            p
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(text in text_strategy()) {
            let subs = Substitutions::new([("c/w", "consistent with")]).unwrap();
            let once = normalize_text(&text, &subs);
            prop_assert_eq!(normalize_text(&once, &subs), once.clone());
            let plain = normalize_text(&text, &Substitutions::default());
            prop_assert_eq!(normalize_text(&plain, &Substitutions::default()), plain.clone());
        }

        #[test]
        fn partition_and_monotonicity(reports in proptest::collection::vec(report_strategy(), 0..30), lower in 1usize..10) {
            let subs = Substitutions::default();
            let strict = FilterPolicy::default();
            let r = filter_corpus(&reports, &strict, &subs);
            prop_assert_eq!(r.pairs.len() + r.exclusions.len(), reports.len());
            prop_assert_eq!(r.summary.eligible + r.summary.excluded(), reports.len());

            let loose = FilterPolicy { min_findings_words: lower, ..FilterPolicy::default() };
            let r2 = filter_corpus(&reports, &loose, &subs);
            let strict_ids: BTreeSet<_> = r.pairs.iter().map(|p| &p.report_id).collect();
            let loose_ids: BTreeSet<_> = r2.pairs.iter().map(|p| &p.report_id).collect();
            prop_assert!(strict_ids.is_subset(&loose_ids));

            // Re-filtering eligible pairs excludes nothing.
            let again: Vec<ParsedReport> = r.pairs.iter().map(|p| parsed(&[("findings", &p.findings), ("impression", &p.impression)])).collect();
            prop_assert!(filter_corpus(&again, &strict, &subs).exclusions.is_empty());
        }
    }
}
