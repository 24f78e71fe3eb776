//! Blind multi-rater rubric study: sampling and blinding, rating collection,
//! aggregation, CSV export and the event-logged store behind the service.

mod aggregate;
mod export;
mod metric;
mod store;
mod study;

pub use aggregate::{aggregate_results, CellMean, EvaluationResult, Observation, ReportMean};
pub use export::{disclosure, long_csv, summary_csv, LONG_COLUMNS, SUMMARY_COLUMNS};
pub use metric::{Metric, Scores, MAX_SCORE, MIN_SCORE};
pub use store::{read_study, AuthError, Event, SessionToken, StoreError, StudyStore, EVENT_LOG_FILE};
pub use study::{
    sample_report_ids, CellRef, CreateStudyRequest, MissingRating, NextItem, RatingItem,
    RubricScore, Study, StudyDefinition, StudyError, StudyItem, StudyStatus, SubmitOutcome,
};
