// Run the rating service in-process and drive a study over HTTP the way a
// rater front end would. The service persists to an event log, so a restart
// picks up where it left off.

use std::collections::BTreeMap;

use chrono::Utc;
use radreport::eval::CreateStudyRequest;
use radreport::gateway::GeneratedImpression;
use radreport::preprocess::ReportPair;
use radreport::service::{spawn, ServiceConfig, ADMIN_HEADER};
use serde_json::{json, Value};

const ADMIN_KEY: &str = "example-admin-key";

fn request() -> CreateStudyRequest {
    let pairs: Vec<ReportPair> = (0..4)
        .map(|i| ReportPair {
            report_id: format!("openi/CXR{i}"),
            source: "openi".into(),
            findings: format!("Stable mediastinal contours, view {i}. Lungs are clear bilaterally."),
            impression: "No active disease.".into(),
        })
        .collect();
    let generations = pairs
        .iter()
        .flat_map(|p| {
            ["m1", "m2"].map(|label| GeneratedImpression {
                report_id: p.report_id.clone(),
                model_label: label.into(),
                text: "No acute cardiopulmonary findings.".into(),
                latency_ms: 5,
                created_at: Utc::now(),
                prompt_hash: String::new(),
                empty_generation: false,
            })
        })
        .collect();
    CreateStudyRequest {
        pairs_by_source: BTreeMap::from([("openi".into(), pairs)]),
        n_per_source: 2,
        generations,
        model_labels: vec!["m1".into(), "m2".into()],
        rater_ids: vec!["rad-a".into()],
        seed: 5,
        include_reference: false,
    }
}

fn config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_path_buf(),
        bind: "127.0.0.1:0".parse().unwrap(),
        admin_key: ADMIN_KEY.into(),
        token_ttl: chrono::Duration::hours(1),
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let http = reqwest::blocking::Client::new();

    let service = spawn(&config(dir.path()))?;
    let base = service.base_url();
    let created: Value = http
        .post(format!("{base}/studies"))
        .header(ADMIN_HEADER, ADMIN_KEY)
        .json(&request())
        .send()?
        .error_for_status()?
        .json()?;
    let study = created["study_id"].as_str().unwrap().to_string();
    let token = created["tokens"][0]["token"].as_str().unwrap().to_string();
    println!("created {study} with {} items", created["n_items"]);

    let next = |base: &str| -> anyhow::Result<Value> {
        Ok(http
            .get(format!("{base}/studies/{study}/next"))
            .bearer_auth(&token)
            .send()?
            .error_for_status()?
            .json()?)
    };
    let rate = |base: &str, item_id: &str, submission_id: &str| -> anyhow::Result<Value> {
        let scores: BTreeMap<&str, u8> = [
            ("understandability", 4),
            ("coherence", 4),
            ("relevance", 5),
            ("conciseness", 3),
            ("clinical_utility", 4),
        ]
        .into();
        Ok(http
            .post(format!("{base}/studies/{study}/ratings"))
            .bearer_auth(&token)
            .json(&json!({"item_id": item_id, "submission_id": submission_id, "scores": scores}))
            .send()?
            .error_for_status()?
            .json()?)
    };

    // Rate two items, resending the second as a client retry would.
    for k in 0..2 {
        let page = next(&base)?;
        println!("{page}");
        let item_id = page["item"]["item_id"].as_str().unwrap();
        let sub = format!("sub-{k}");
        assert_eq!(rate(&base, item_id, &sub)?["status"], "accepted");
        if k == 1 {
            assert_eq!(rate(&base, item_id, &sub)?["status"], "duplicate");
        }
    }
    service.stop()?;

    // Restart from the same directory: progress survives.
    let service = spawn(&config(dir.path()))?;
    let base = service.base_url();
    let mut rated = 2;
    loop {
        let page = next(&base)?;
        if page["status"] == "done" {
            assert_eq!(page["rated"], 4);
            break;
        }
        assert_eq!(page["progress"]["position"], rated + 1);
        rate(&base, page["item"]["item_id"].as_str().unwrap(), &format!("sub-{rated}"))?;
        rated += 1;
    }

    let csv = http
        .get(format!("{base}/studies/{study}/results?table=summary"))
        .header(ADMIN_HEADER, ADMIN_KEY)
        .send()?
        .error_for_status()?
        .text()?;
    print!("{csv}");
    assert!(csv.contains("m1,relevance,5.0,2,1"));
    service.stop()?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
