use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::aggregate::{aggregate_results, EvaluationResult};
use super::study::{
    CreateStudyRequest, NextItem, RubricScore, Study, StudyDefinition, StudyError, SubmitOutcome,
};
use crate::jsonl::{AppendLog, LogError};

pub const EVENT_LOG_FILE: &str = "events.log";

/// Bearer credential for one rater in one study.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub rater_id: String,
    pub study_id: String,
    pub expires_at: DateTime<Utc>,
}

impl SessionToken {
    pub fn is_expired(&self, now: DateTime<Utc>) -> bool {
        now >= self.expires_at
    }
}

/// One line of the event log. Replaying all events in order rebuilds the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    StudyCreated {
        definition: StudyDefinition,
        tokens: Vec<SessionToken>,
    },
    TokenIssued {
        token: SessionToken,
    },
    ItemIssued {
        study_id: String,
        rater_id: String,
        item_id: String,
        at: DateTime<Utc>,
    },
    RatingSubmitted {
        study_id: String,
        score: RubricScore,
    },
    RatingUnlocked {
        study_id: String,
        rater_id: String,
        item_id: String,
        at: DateTime<Utc>,
    },
    StudyClosed {
        study_id: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown study {0}")]
    UnknownStudy(String),
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error("event log: {0}")]
    Log(#[from] LogError),
    #[error("event log replay: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("missing or unknown token")]
    Invalid,
    #[error("token expired")]
    Expired,
    #[error("token is not valid for this study")]
    WrongStudy,
}

/// In-memory state rebuilt by replaying events.
#[derive(Default)]
struct Replayed {
    studies: BTreeMap<String, Study>,
    tokens: HashMap<String, SessionToken>,
    events: usize,
}

impl Replayed {
    fn from_events(events: Vec<Event>) -> Result<Self, StoreError> {
        let mut state = Self::default();
        for (i, event) in events.into_iter().enumerate() {
            state
                .apply(event)
                .map_err(|e| StoreError::Replay(format!("event {}: {e}", i + 1)))?;
        }
        Ok(state)
    }

    fn study(&self, study_id: &str) -> Result<&Study, StoreError> {
        self.studies
            .get(study_id)
            .ok_or_else(|| StoreError::UnknownStudy(study_id.to_string()))
    }

    fn study_mut(&mut self, study_id: &str) -> Result<&mut Study, StoreError> {
        self.studies
            .get_mut(study_id)
            .ok_or_else(|| StoreError::UnknownStudy(study_id.to_string()))
    }

    fn apply(&mut self, event: Event) -> Result<(), StoreError> {
        match event {
            Event::StudyCreated { definition, tokens } => {
                for t in tokens {
                    self.tokens.insert(t.token.clone(), t);
                }
                let study = Study::from_definition(definition);
                self.studies.insert(study.study_id().to_string(), study);
            }
            Event::TokenIssued { token } => {
                self.study(&token.study_id)?;
                self.tokens.insert(token.token.clone(), token);
            }
            Event::ItemIssued { study_id, rater_id, item_id, .. } => {
                self.study_mut(&study_id)?.mark_issued(&rater_id, &item_id);
            }
            Event::RatingSubmitted { study_id, score } => {
                let study = self.study_mut(&study_id)?;
                if study.check_submission(&score)? == SubmitOutcome::Accepted {
                    study.apply_score(score);
                }
            }
            Event::RatingUnlocked { study_id, rater_id, item_id, .. } => {
                self.study_mut(&study_id)?.unlock_rating(&rater_id, &item_id)?;
            }
            Event::StudyClosed { study_id, .. } => self.study_mut(&study_id)?.close(),
        }
        self.events += 1;
        Ok(())
    }
}

/// Reads one study from a store directory without opening the log for
/// writing, so it is safe while a service owns the store.
pub fn read_study(dir: &Path, study_id: &str) -> Result<Study, StoreError> {
    let events = crate::jsonl::read_all(&dir.join(EVENT_LOG_FILE))?;
    let mut state = Replayed::from_events(events)?;
    state
        .studies
        .remove(study_id)
        .ok_or_else(|| StoreError::UnknownStudy(study_id.to_string()))
}

/// Study state backed by a synced append-only event log in one directory.
/// Every mutation is written to the log before it is applied, so anything
/// acknowledged to a caller survives a crash. One process at a time may
/// hold a store open.
pub struct StudyStore {
    dir: PathBuf,
    log: AppendLog<Event>,
    state: Replayed,
    token_ttl: Duration,
}

impl StudyStore {
    /// Opens `dir`, replaying its event log. New tokens live for `token_ttl`.
    pub fn open(dir: &Path, token_ttl: Duration) -> Result<Self, StoreError> {
        let (log, events) = AppendLog::open(&dir.join(EVENT_LOG_FILE))?;
        let state = Replayed::from_events(events)?;
        log::info!(
            "opened study store {} ({} events, {} studies)",
            dir.display(),
            state.events,
            state.studies.len()
        );
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            state,
            token_ttl,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn event_count(&self) -> usize {
        self.state.events
    }

    pub fn study_ids(&self) -> impl Iterator<Item = &str> {
        self.state.studies.keys().map(String::as_str)
    }

    pub fn study(&self, study_id: &str) -> Result<&Study, StoreError> {
        self.state.study(study_id)
    }

    fn record(&mut self, event: Event) -> Result<(), StoreError> {
        self.log.append(&event)?;
        self.state.apply(event)
    }

    fn new_token(&self, study_id: &str, rater_id: &str) -> SessionToken {
        SessionToken {
            token: format!(
                "{}{}",
                uuid::Uuid::new_v4().simple(),
                uuid::Uuid::new_v4().simple()
            ),
            rater_id: rater_id.to_string(),
            study_id: study_id.to_string(),
            expires_at: Utc::now() + self.token_ttl,
        }
    }

    /// Creates and persists a study; returns it with one token per rater, in roster order.
    pub fn create_study(
        &mut self,
        request: &CreateStudyRequest,
    ) -> Result<(&Study, Vec<SessionToken>), StoreError> {
        let study = Study::create(request)?;
        let definition = study.definition().clone();
        let tokens: Vec<SessionToken> = definition
            .rater_ids
            .iter()
            .map(|r| self.new_token(&definition.study_id, r))
            .collect();
        let study_id = definition.study_id.clone();
        self.record(Event::StudyCreated {
            definition,
            tokens: tokens.clone(),
        })?;
        Ok((self.study(&study_id)?, tokens))
    }

    /// Issues an extra token for a rater. Earlier tokens stay valid until they expire.
    pub fn issue_token(&mut self, study_id: &str, rater_id: &str) -> Result<SessionToken, StoreError> {
        if !self.study(study_id)?.has_rater(rater_id) {
            return Err(StudyError::UnknownRater.into());
        }
        let token = self.new_token(study_id, rater_id);
        self.record(Event::TokenIssued { token: token.clone() })?;
        Ok(token)
    }

    /// Resolves a bearer token for `study_id` to its rater id.
    pub fn authenticate(&self, token: &str, study_id: &str, now: DateTime<Utc>) -> Result<&str, AuthError> {
        let t = self.state.tokens.get(token).ok_or(AuthError::Invalid)?;
        if t.is_expired(now) {
            return Err(AuthError::Expired);
        }
        if t.study_id != study_id {
            return Err(AuthError::WrongStudy);
        }
        Ok(&t.rater_id)
    }

    /// Next item for the rater, logging the first time each item is handed out.
    pub fn next_item(&mut self, study_id: &str, rater_id: &str) -> Result<NextItem, StoreError> {
        let study = self.study(study_id)?;
        let next = study.next_item(rater_id)?;
        if let NextItem::Item { item, .. } = &next {
            if !study.was_issued(rater_id, &item.item_id) {
                self.record(Event::ItemIssued {
                    study_id: study_id.to_string(),
                    rater_id: rater_id.to_string(),
                    item_id: item.item_id.clone(),
                    at: Utc::now(),
                })?;
            }
        }
        Ok(next)
    }

    /// Validates, persists and applies a rating. Duplicates write nothing.
    pub fn submit_rating(&mut self, study_id: &str, score: RubricScore) -> Result<SubmitOutcome, StoreError> {
        let outcome = self.study(study_id)?.check_submission(&score)?;
        if outcome == SubmitOutcome::Accepted {
            self.record(Event::RatingSubmitted {
                study_id: study_id.to_string(),
                score,
            })?;
        }
        Ok(outcome)
    }

    pub fn unlock_rating(&mut self, study_id: &str, rater_id: &str, item_id: &str) -> Result<(), StoreError> {
        self.study(study_id)?.check_unlock(rater_id, item_id)?;
        self.record(Event::RatingUnlocked {
            study_id: study_id.to_string(),
            rater_id: rater_id.to_string(),
            item_id: item_id.to_string(),
            at: Utc::now(),
        })
    }

    pub fn close_study(&mut self, study_id: &str) -> Result<(), StoreError> {
        self.study(study_id)?;
        self.record(Event::StudyClosed {
            study_id: study_id.to_string(),
            at: Utc::now(),
        })
    }

    pub fn results(&self, study_id: &str, force: bool) -> Result<EvaluationResult, StoreError> {
        Ok(aggregate_results(self.study(study_id)?, force)?)
    }
}
