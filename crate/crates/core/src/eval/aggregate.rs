use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metric::Metric;
use super::study::{CellRef, MissingRating, Study, StudyError};

/// Mean of one metric for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMean {
    pub model_label: String,
    pub metric: Metric,
    pub mean: f64,
    pub n_reports: usize,
    pub n_raters: usize,
    pub n_observations: usize,
}

/// Mean over raters for one (report, model, metric).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMean {
    pub report_id: String,
    pub model_label: String,
    pub metric: Metric,
    pub mean: f64,
    pub n_raters: usize,
}

/// One stored score in long format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub report_id: String,
    pub model_label: String,
    pub rater_id: String,
    pub metric: Metric,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub study_id: String,
    /// Ordered by model label position in the study, then canonical metric order.
    pub cells: Vec<CellMean>,
    pub per_report: Vec<ReportMean>,
    pub observations: Vec<Observation>,
    pub missing: Vec<MissingRating>,
    pub complete: bool,
    pub metadata: BTreeMap<String, String>,
}

impl EvaluationResult {
    pub fn mean(&self, model_label: &str, metric: Metric) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.model_label == model_label && c.metric == metric)
            .map(|c| c.mean)
    }
}

#[derive(Default)]
struct Acc {
    sum: u64,
    count: usize,
}

type CellAcc<'a> = (Acc, Vec<&'a str>, Vec<&'a str>);

/// Means per (model, metric) with every (report, rater) observation weighted
/// equally. Without `force`, a study with any missing rating is an error.
pub fn aggregate_results(study: &Study, force: bool) -> Result<EvaluationResult, StudyError> {
    let missing = study.missing_ratings();
    if !missing.is_empty() && !force {
        return Err(StudyError::Incomplete(missing));
    }
    let def = study.definition();

    let blinding = def.blinding_map();
    let mut observations = Vec::new();
    for report_id in &def.sampled_report_ids {
        for label in &def.model_labels {
            let cell = CellRef {
                report_id: report_id.clone(),
                model_label: label.clone(),
            };
            let Some(item_id) = blinding.get(&cell) else {
                continue;
            };
            for rater in &def.rater_ids {
                if let Some(score) = study.score(rater, item_id) {
                    for (metric, value) in score.scores.iter() {
                        observations.push(Observation {
                            report_id: report_id.clone(),
                            model_label: label.clone(),
                            rater_id: rater.clone(),
                            metric,
                            score: value,
                        });
                    }
                }
            }
        }
    }

    // Per (label position, metric): running sum plus distinct reports and raters.
    let mut cell_acc: BTreeMap<(usize, Metric), CellAcc> = BTreeMap::new();
    let mut report_acc: BTreeMap<(&str, &str, Metric), Acc> = BTreeMap::new();
    let label_pos: BTreeMap<&str, usize> = def
        .model_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    for obs in &observations {
        let (acc, reports, raters) = cell_acc
            .entry((label_pos[obs.model_label.as_str()], obs.metric))
            .or_default();
        acc.sum += u64::from(obs.score);
        acc.count += 1;
        if !reports.contains(&obs.report_id.as_str()) {
            reports.push(&obs.report_id);
        }
        if !raters.contains(&obs.rater_id.as_str()) {
            raters.push(&obs.rater_id);
        }
        let r = report_acc
            .entry((&obs.report_id, &obs.model_label, obs.metric))
            .or_default();
        r.sum += u64::from(obs.score);
        r.count += 1;
    }

    let cells = cell_acc
        .into_iter()
        .map(|((pos, metric), (acc, reports, raters))| CellMean {
            model_label: def.model_labels[pos].clone(),
            metric,
            mean: acc.sum as f64 / acc.count as f64,
            n_reports: reports.len(),
            n_raters: raters.len(),
            n_observations: acc.count,
        })
        .collect();

    let mut per_report: Vec<ReportMean> = report_acc
        .into_iter()
        .map(|((report_id, model_label, metric), acc)| ReportMean {
            report_id: report_id.to_string(),
            model_label: model_label.to_string(),
            metric,
            mean: acc.sum as f64 / acc.count as f64,
            n_raters: acc.count,
        })
        .collect();
    per_report.sort_by(|a, b| {
        (&a.report_id, label_pos[a.model_label.as_str()], a.metric)
            .cmp(&(&b.report_id, label_pos[b.model_label.as_str()], b.metric))
    });

    Ok(EvaluationResult {
        study_id: def.study_id.clone(),
        cells,
        per_report,
        observations,
        complete: missing.is_empty(),
        missing,
        metadata: def.metadata.clone(),
    })
}
