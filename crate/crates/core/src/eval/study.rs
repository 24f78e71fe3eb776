use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metric::Scores;
use crate::gateway::GeneratedImpression;
use crate::preprocess::ReportPair;
use crate::rng::SeededRng;

/// A (report, model) cell of the study grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellRef {
    pub report_id: String,
    pub model_label: String,
}

impl fmt::Display for CellRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.report_id, self.model_label)
    }
}

/// A rating that a rater has not yet submitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingRating {
    pub rater_id: String,
    pub item_id: String,
    pub report_id: String,
    pub model_label: String,
}

fn join_cells(cells: &[CellRef]) -> String {
    cells.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StudyError {
    #[error("a study needs at least one report per source")]
    EmptyStudy,
    #[error("a study needs at least one model and one rater")]
    EmptyRoster,
    #[error("source {source_name} has {available} eligible pairs, {requested} requested")]
    NotEnoughPairs {
        source_name: String,
        available: usize,
        requested: usize,
    },
    #[error("missing generations for {} cell(s): {}", .0.len(), join_cells(.0))]
    MissingGenerations(Vec<CellRef>),
    #[error("rater-visible text mentions a model label in {} cell(s): {}", .0.len(), join_cells(.0))]
    LabelLeak(Vec<CellRef>),
    #[error("duplicate {kind} {value:?}")]
    Duplicate { kind: &'static str, value: String },
    #[error("unknown rater")]
    UnknownRater,
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("study is closed")]
    Closed,
    #[error("invalid rating: {0}")]
    Validation(String),
    #[error("item {0} was already rated by this rater")]
    AlreadyRated(String),
    #[error("submission id {0} was already used for a different item")]
    SubmissionReused(String),
    #[error("item {0} has no rating to unlock")]
    NotRated(String),
    #[error("study incomplete: {} rating(s) missing", .0.len())]
    Incomplete(Vec<MissingRating>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateStudyRequest {
    pub pairs_by_source: BTreeMap<String, Vec<ReportPair>>,
    #[serde(default = "default_n_per_source")]
    pub n_per_source: usize,
    pub generations: Vec<GeneratedImpression>,
    pub model_labels: Vec<String>,
    pub rater_ids: Vec<String>,
    pub seed: u64,
    /// Show the original impression next to the candidate.
    #[serde(default)]
    pub include_reference: bool,
}

fn default_n_per_source() -> usize {
    10
}

/// Everything a rater may see about one item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingItem {
    pub item_id: String,
    pub findings: String,
    pub candidate_impression: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_impression: Option<String>,
}

/// Item with its hidden provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyItem {
    pub item_id: String,
    pub report_id: String,
    pub model_label: String,
    pub findings: String,
    pub candidate_impression: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_impression: Option<String>,
}

impl StudyItem {
    pub fn cell(&self) -> CellRef {
        CellRef {
            report_id: self.report_id.clone(),
            model_label: self.model_label.clone(),
        }
    }

    pub fn rating_item(&self) -> RatingItem {
        RatingItem {
            item_id: self.item_id.clone(),
            findings: self.findings.clone(),
            candidate_impression: self.candidate_impression.clone(),
            reference_impression: self.reference_impression.clone(),
        }
    }
}

/// The fixed part of a study, decided at creation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub study_id: String,
    pub created_at: DateTime<Utc>,
    pub sampled_report_ids: Vec<String>,
    pub model_labels: Vec<String>,
    pub rater_ids: Vec<String>,
    pub sample_seed: u64,
    pub n_per_source: usize,
    pub items: Vec<StudyItem>,
    pub per_rater_item_order: BTreeMap<String, Vec<String>>,
    pub metadata: BTreeMap<String, String>,
}

impl StudyDefinition {
    /// (report, model) -> item id.
    pub fn blinding_map(&self) -> BTreeMap<CellRef, &str> {
        self.items
            .iter()
            .map(|i| (i.cell(), i.item_id.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    pub item_id: String,
    pub rater_id: String,
    pub scores: Scores,
    pub submitted_at: DateTime<Utc>,
    pub submission_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NextItem {
    /// `position` is 1-based within the rater's order.
    Item {
        item: RatingItem,
        position: usize,
        total: usize,
    },
    Done {
        rated: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubmitOutcome {
    Accepted,
    Duplicate,
}

/// Seeded sample of `n_per_source` ids per source.
///
/// Each source's ids are sorted, shuffled with stream 0 of the seed (sources
/// visited in name order), and the first `n_per_source` taken.
pub fn sample_report_ids(
    ids_by_source: &BTreeMap<String, Vec<String>>,
    n_per_source: usize,
    seed: u64,
) -> Result<BTreeMap<String, Vec<String>>, StudyError> {
    if n_per_source == 0 || ids_by_source.is_empty() {
        return Err(StudyError::EmptyStudy);
    }
    let mut rng = SeededRng::with_stream(seed, 0);
    let mut out = BTreeMap::new();
    for (source, ids) in ids_by_source {
        let mut sorted: Vec<&String> = ids.iter().collect::<BTreeSet<_>>().into_iter().collect();
        if sorted.len() < n_per_source {
            return Err(StudyError::NotEnoughPairs {
                source_name: source.clone(),
                available: sorted.len(),
                requested: n_per_source,
            });
        }
        rng.shuffle(&mut sorted);
        out.insert(
            source.clone(),
            sorted.into_iter().take(n_per_source).cloned().collect(),
        );
    }
    Ok(out)
}

fn check_unique(kind: &'static str, values: &[String]) -> Result<(), StudyError> {
    let mut seen = HashSet::new();
    for v in values {
        if v.trim().is_empty() {
            return Err(StudyError::Duplicate {
                kind,
                value: v.clone(),
            });
        }
        if !seen.insert(v) {
            return Err(StudyError::Duplicate {
                kind,
                value: v.clone(),
            });
        }
    }
    Ok(())
}

fn opaque_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

/// Live study state: definition plus collected ratings.
#[derive(Debug, Clone)]
pub struct Study {
    def: StudyDefinition,
    status: StudyStatus,
    scores: HashMap<(String, String), RubricScore>,
    submissions: HashMap<String, (String, String)>,
    issued: HashSet<(String, String)>,
    item_index: HashMap<String, usize>,
}

impl Study {
    /// Samples reports, blinds every (report, model) cell behind a random
    /// item id, and gives each rater an independent seeded item order.
    pub fn create(req: &CreateStudyRequest) -> Result<Self, StudyError> {
        if req.model_labels.is_empty() || req.rater_ids.is_empty() {
            return Err(StudyError::EmptyRoster);
        }
        check_unique("model label", &req.model_labels)?;
        check_unique("rater id", &req.rater_ids)?;

        let mut pairs: HashMap<&str, &ReportPair> = HashMap::new();
        let mut ids_by_source = BTreeMap::new();
        for (source, list) in &req.pairs_by_source {
            let mut ids = Vec::with_capacity(list.len());
            for pair in list {
                if pairs.insert(&pair.report_id, pair).is_some() {
                    return Err(StudyError::Duplicate {
                        kind: "report id",
                        value: pair.report_id.clone(),
                    });
                }
                ids.push(pair.report_id.clone());
            }
            ids_by_source.insert(source.clone(), ids);
        }
        let sampled = sample_report_ids(&ids_by_source, req.n_per_source, req.seed)?;
        let sampled_report_ids: Vec<String> = sampled.values().flatten().cloned().collect();

        let generations: HashMap<(&str, &str), &GeneratedImpression> = req
            .generations
            .iter()
            .filter(|g| !g.empty_generation && !g.text.trim().is_empty())
            .map(|g| ((g.report_id.as_str(), g.model_label.as_str()), g))
            .collect();

        let mut missing = Vec::new();
        let mut leaks = Vec::new();
        let mut items = Vec::new();
        for report_id in &sampled_report_ids {
            let pair = pairs[report_id.as_str()];
            for label in &req.model_labels {
                let cell = CellRef {
                    report_id: report_id.clone(),
                    model_label: label.clone(),
                };
                let Some(generation) = generations.get(&(report_id.as_str(), label.as_str())) else {
                    missing.push(cell);
                    continue;
                };
                let item = StudyItem {
                    item_id: opaque_id(),
                    report_id: report_id.clone(),
                    model_label: label.clone(),
                    findings: pair.findings.clone(),
                    candidate_impression: generation.text.clone(),
                    reference_impression: req.include_reference.then(|| pair.impression.clone()),
                };
                if mentions_any(&item, &req.model_labels) {
                    leaks.push(cell);
                }
                items.push(item);
            }
        }
        if !missing.is_empty() {
            missing.sort();
            return Err(StudyError::MissingGenerations(missing));
        }
        if !leaks.is_empty() {
            leaks.sort();
            return Err(StudyError::LabelLeak(leaks));
        }

        let mut per_rater_item_order = BTreeMap::new();
        for (k, rater) in req.rater_ids.iter().enumerate() {
            let mut order: Vec<usize> = (0..items.len()).collect();
            SeededRng::with_stream(req.seed, 1 + k as u64).shuffle(&mut order);
            per_rater_item_order.insert(
                rater.clone(),
                order.into_iter().map(|i| items[i].item_id.clone()).collect(),
            );
        }

        let metadata = BTreeMap::from([
            ("n_per_source".to_string(), req.n_per_source.to_string()),
            ("sampling".to_string(), "n_per_source reports from each source".to_string()),
            (
                "aggregation".to_string(),
                "mean over all (report, rater) observations, equally weighted".to_string(),
            ),
            ("include_reference".to_string(), req.include_reference.to_string()),
            ("sample_seed".to_string(), req.seed.to_string()),
            ("prng".to_string(), crate::rng::PRNG_NAME.to_string()),
        ]);

        let def = StudyDefinition {
            study_id: opaque_id(),
            created_at: Utc::now(),
            sampled_report_ids,
            model_labels: req.model_labels.clone(),
            rater_ids: req.rater_ids.clone(),
            sample_seed: req.seed,
            n_per_source: req.n_per_source,
            items,
            per_rater_item_order,
            metadata,
        };
        Ok(Self::from_definition(def))
    }

    pub fn from_definition(def: StudyDefinition) -> Self {
        let item_index = def
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| (item.item_id.clone(), i))
            .collect();
        Self {
            def,
            status: StudyStatus::Open,
            scores: HashMap::new(),
            submissions: HashMap::new(),
            issued: HashSet::new(),
            item_index,
        }
    }

    pub fn definition(&self) -> &StudyDefinition {
        &self.def
    }

    pub fn study_id(&self) -> &str {
        &self.def.study_id
    }

    pub fn status(&self) -> StudyStatus {
        self.status
    }

    pub fn item(&self, item_id: &str) -> Option<&StudyItem> {
        self.item_index.get(item_id).map(|i| &self.def.items[*i])
    }

    pub fn has_rater(&self, rater_id: &str) -> bool {
        self.def.per_rater_item_order.contains_key(rater_id)
    }

    pub fn score(&self, rater_id: &str, item_id: &str) -> Option<&RubricScore> {
        self.scores.get(&(rater_id.to_string(), item_id.to_string()))
    }

    pub fn scores(&self) -> impl Iterator<Item = &RubricScore> {
        self.scores.values()
    }

    pub fn score_count(&self) -> usize {
        self.scores.len()
    }

    pub fn rated_by(&self, rater_id: &str) -> usize {
        self.scores.keys().filter(|(r, _)| r == rater_id).count()
    }

    pub fn is_complete(&self) -> bool {
        self.scores.len() == self.def.items.len() * self.def.rater_ids.len()
    }

    pub fn missing_ratings(&self) -> Vec<MissingRating> {
        let mut missing = Vec::new();
        for rater in &self.def.rater_ids {
            for item in &self.def.items {
                if self.score(rater, &item.item_id).is_none() {
                    missing.push(MissingRating {
                        rater_id: rater.clone(),
                        item_id: item.item_id.clone(),
                        report_id: item.report_id.clone(),
                        model_label: item.model_label.clone(),
                    });
                }
            }
        }
        missing
    }

    /// First item in the rater's order that the rater has not scored.
    pub fn next_item(&self, rater_id: &str) -> Result<NextItem, StudyError> {
        let order = self
            .def
            .per_rater_item_order
            .get(rater_id)
            .ok_or(StudyError::UnknownRater)?;
        if self.status == StudyStatus::Closed {
            return Err(StudyError::Closed);
        }
        for (pos, item_id) in order.iter().enumerate() {
            if self.score(rater_id, item_id).is_none() {
                let item = self.item(item_id).expect("order only holds study items");
                return Ok(NextItem::Item {
                    item: item.rating_item(),
                    position: pos + 1,
                    total: order.len(),
                });
            }
        }
        Ok(NextItem::Done {
            rated: self.rated_by(rater_id),
        })
    }

    /// Records first issuance of an item to a rater. Returns false if already recorded.
    pub fn mark_issued(&mut self, rater_id: &str, item_id: &str) -> bool {
        self.issued.insert((rater_id.to_string(), item_id.to_string()))
    }

    pub fn was_issued(&self, rater_id: &str, item_id: &str) -> bool {
        self.issued.contains(&(rater_id.to_string(), item_id.to_string()))
    }

    /// What [`Study::submit_rating`] would return, without changing anything.
    pub fn check_submission(&self, score: &RubricScore) -> Result<SubmitOutcome, StudyError> {
        if !self.has_rater(&score.rater_id) {
            return Err(StudyError::UnknownRater);
        }
        if self.status == StudyStatus::Closed {
            return Err(StudyError::Closed);
        }
        if self.item(&score.item_id).is_none() {
            return Err(StudyError::UnknownItem(score.item_id.clone()));
        }
        if score.submission_id.trim().is_empty() {
            return Err(StudyError::Validation("submission_id must not be empty".into()));
        }
        let key = (score.rater_id.clone(), score.item_id.clone());
        if let Some(prev) = self.submissions.get(&score.submission_id) {
            return if *prev == key {
                Ok(SubmitOutcome::Duplicate)
            } else {
                Err(StudyError::SubmissionReused(score.submission_id.clone()))
            };
        }
        if self.scores.contains_key(&key) {
            return Err(StudyError::AlreadyRated(score.item_id.clone()));
        }
        Ok(SubmitOutcome::Accepted)
    }

    pub fn submit_rating(&mut self, score: RubricScore) -> Result<SubmitOutcome, StudyError> {
        let outcome = self.check_submission(&score)?;
        if outcome == SubmitOutcome::Accepted {
            self.apply_score(score);
        }
        Ok(outcome)
    }

    /// Stores a score that has already passed [`Study::check_submission`].
    pub(crate) fn apply_score(&mut self, score: RubricScore) {
        let key = (score.rater_id.clone(), score.item_id.clone());
        self.submissions.insert(score.submission_id.clone(), key.clone());
        self.scores.insert(key, score);
    }

    pub fn check_unlock(&self, rater_id: &str, item_id: &str) -> Result<(), StudyError> {
        if !self.has_rater(rater_id) {
            return Err(StudyError::UnknownRater);
        }
        if self.item(item_id).is_none() {
            return Err(StudyError::UnknownItem(item_id.to_string()));
        }
        if self.score(rater_id, item_id).is_none() {
            return Err(StudyError::NotRated(item_id.to_string()));
        }
        Ok(())
    }

    /// Administrative removal of a rating so the rater can score the item again.
    /// The old submission id stays reserved.
    pub fn unlock_rating(&mut self, rater_id: &str, item_id: &str) -> Result<RubricScore, StudyError> {
        self.check_unlock(rater_id, item_id)?;
        Ok(self
            .scores
            .remove(&(rater_id.to_string(), item_id.to_string()))
            .expect("checked above"))
    }

    pub fn close(&mut self) {
        self.status = StudyStatus::Closed;
    }
}

fn mentions_any(item: &StudyItem, labels: &[String]) -> bool {
    let visible = [
        item.findings.to_lowercase(),
        item.candidate_impression.to_lowercase(),
        item.reference_impression.clone().unwrap_or_default().to_lowercase(),
    ];
    labels
        .iter()
        .map(|l| l.to_lowercase())
        .any(|l| visible.iter().any(|v| v.contains(&l)))
}
