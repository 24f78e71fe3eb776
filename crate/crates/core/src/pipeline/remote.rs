//! Admin calls against a running rating service.

use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde_json::Value;

use super::{PipelineError, StudyRecord};
use crate::eval::{CreateStudyRequest, EvaluationResult, MissingRating};
use crate::service::ADMIN_HEADER;

fn client() -> Result<Client, PipelineError> {
    Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| PipelineError::Backend(e.to_string()))
}

fn unreachable(url: &str, err: reqwest::Error) -> PipelineError {
    PipelineError::Backend(format!("service at {url} unreachable: {err}"))
}

fn failure(response: Response) -> PipelineError {
    let status = response.status();
    let body = response.text().unwrap_or_default();
    if status.is_server_error() || status == StatusCode::UNAUTHORIZED {
        PipelineError::Backend(format!("service returned {status}: {body}"))
    } else {
        PipelineError::Data(format!("service returned {status}: {body}"))
    }
}

/// (rater_id, token, expires_at)
pub(super) type TokenRow = (String, String, String);

pub(super) fn create_study(
    url: &str,
    admin_key: &str,
    request: &CreateStudyRequest,
) -> Result<(StudyRecord, Vec<TokenRow>), PipelineError> {
    let base = url.trim_end_matches('/');
    let response = client()?
        .post(format!("{base}/studies"))
        .header(ADMIN_HEADER, admin_key)
        .json(request)
        .send()
        .map_err(|e| unreachable(url, e))?;
    if response.status() != StatusCode::CREATED {
        return Err(failure(response));
    }
    let body: Value = response.json().map_err(|e| PipelineError::Backend(e.to_string()))?;
    let str_of = |v: &Value| v.as_str().unwrap_or_default().to_string();
    let tokens = body["tokens"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|t| (str_of(&t["rater_id"]), str_of(&t["token"]), str_of(&t["expires_at"])))
        .collect();
    let record = StudyRecord {
        study_id: str_of(&body["study_id"]),
        store_dir: None,
        service_url: Some(base.to_string()),
        n_items: body["n_items"].as_u64().unwrap_or_default() as usize,
        sampled_report_ids: serde_json::from_value(body["sampled_report_ids"].clone()).unwrap_or_default(),
        model_labels: request.model_labels.clone(),
        rater_ids: request.rater_ids.clone(),
        seed: request.seed,
    };
    Ok((record, tokens))
}

pub(super) fn results(url: &str, admin_key: &str, study_id: &str, force: bool) -> Result<EvaluationResult, PipelineError> {
    let response = client()?
        .get(format!(
            "{}/studies/{study_id}/results?table=json&force={force}",
            url.trim_end_matches('/')
        ))
        .header(ADMIN_HEADER, admin_key)
        .send()
        .map_err(|e| unreachable(url, e))?;
    match response.status() {
        StatusCode::OK => response.json().map_err(|e| PipelineError::Backend(e.to_string())),
        StatusCode::CONFLICT => {
            let body: Value = response.json().map_err(|e| PipelineError::Backend(e.to_string()))?;
            let missing: Vec<MissingRating> = serde_json::from_value(body["missing"].clone()).unwrap_or_default();
            Err(PipelineError::Incomplete(missing))
        }
        _ => Err(failure(response)),
    }
}
