// Build a blind rating study in memory, collect two raters' scores and
// aggregate them into per-model means.

use std::collections::BTreeMap;

use chrono::Utc;
use radreport::eval::{
    aggregate_results, summary_csv, CreateStudyRequest, Metric, NextItem, RubricScore, Scores, Study,
    StudyError, SubmitOutcome,
};
use radreport::gateway::GeneratedImpression;
use radreport::preprocess::ReportPair;

fn request() -> CreateStudyRequest {
    let labels = ["radiology-llm", "general-llm"];
    let mut pairs_by_source = BTreeMap::new();
    let mut generations = Vec::new();
    for source in ["mimic", "openi"] {
        let pairs: Vec<ReportPair> = (0..6)
            .map(|i| ReportPair {
                report_id: format!("{source}/{i}"),
                source: source.into(),
                findings: format!("Lungs clear, case {i}. No effusion. Heart size normal."),
                impression: "Normal chest.".into(),
            })
            .collect();
        for p in &pairs {
            for (k, label) in labels.iter().enumerate() {
                generations.push(GeneratedImpression {
                    report_id: p.report_id.clone(),
                    model_label: label.to_string(),
                    text: ["No acute disease.", "The chest appears normal overall."][k].into(),
                    latency_ms: 10,
                    created_at: Utc::now(),
                    prompt_hash: String::new(),
                    empty_generation: false,
                });
            }
        }
        pairs_by_source.insert(source.to_string(), pairs);
    }
    CreateStudyRequest {
        pairs_by_source,
        n_per_source: 3,
        generations,
        model_labels: labels.map(String::from).to_vec(),
        rater_ids: vec!["rad-1".into(), "rad-2".into()],
        seed: 2023,
        include_reference: false,
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let mut study = Study::create(&request())?;
    let def = study.definition().clone();
    println!("study {}: {} items over {:?}", def.study_id, def.items.len(), def.sampled_report_ids);
    assert_eq!(def.items.len(), 6 * 2);

    // Raters only see the item id, findings and candidate text. The
    // study itself keeps the mapping back to (report, model).
    for rater in ["rad-1", "rad-2"] {
        let mut n = 0;
        while let NextItem::Item { item, position, total } = study.next_item(rater)? {
            let label = study.item(&item.item_id).map(|i| i.model_label.clone());
            let base = if label.as_deref() == Some("radiology-llm") { 4 } else { 3 };
            let bump = (rater == "rad-2") as u8;
            let score = RubricScore {
                item_id: item.item_id.clone(),
                rater_id: rater.into(),
                scores: Scores::new([base + bump, base, base, base + 1, base]).map_err(anyhow::Error::msg)?,
                submitted_at: Utc::now(),
                submission_id: format!("{rater}-{position}-of-{total}"),
            };
            assert_eq!(study.submit_rating(score.clone())?, SubmitOutcome::Accepted);
            // A retried submission is absorbed; a fresh one for the same item is refused.
            assert_eq!(study.submit_rating(score.clone())?, SubmitOutcome::Duplicate);
            let again = RubricScore { submission_id: "other".into(), ..score };
            assert!(matches!(study.submit_rating(again), Err(StudyError::AlreadyRated(_))));
            n += 1;
        }
        println!("{rater} rated {n} items");
    }

    let result = aggregate_results(&study, false)?;
    assert_eq!(result.mean("radiology-llm", Metric::Understandability), Some(4.5));
    assert_eq!(result.mean("general-llm", Metric::Conciseness), Some(4.0));
    print!("{}", summary_csv(&result));
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
