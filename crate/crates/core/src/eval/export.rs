use super::aggregate::EvaluationResult;

pub const SUMMARY_COLUMNS: [&str; 5] = ["model_label", "metric", "mean", "n_reports", "n_raters"];
pub const LONG_COLUMNS: [&str; 5] = ["report_id", "model_label", "rater_id", "metric", "score"];

/// `# `-prefixed lines describing missing ratings; empty for a complete result.
pub fn disclosure(result: &EvaluationResult) -> String {
    if result.complete {
        return String::new();
    }
    let mut out = format!(
        "# incomplete study {}: {} rating(s) missing, means use available scores only\n",
        result.study_id,
        result.missing.len()
    );
    for m in &result.missing {
        out.push_str(&format!(
            "# missing rater={} report={} model={}\n",
            m.rater_id, m.report_id, m.model_label
        ));
    }
    out
}

fn finish(result: &EvaluationResult, writer: csv::Writer<Vec<u8>>) -> String {
    let body = String::from_utf8(writer.into_inner().expect("in-memory writer"))
        .expect("csv of utf-8 fields");
    disclosure(result) + &body
}

/// One row per (model, metric) in study order.
pub fn summary_csv(result: &EvaluationResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_COLUMNS).expect("in-memory write");
    for c in &result.cells {
        w.write_record([
            c.model_label.as_str(),
            c.metric.as_str(),
            &format!("{:?}", c.mean),
            &c.n_reports.to_string(),
            &c.n_raters.to_string(),
        ])
        .expect("in-memory write");
    }
    finish(result, w)
}

/// Every individual score, one per row.
pub fn long_csv(result: &EvaluationResult) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LONG_COLUMNS).expect("in-memory write");
    for o in &result.observations {
        w.write_record([
            o.report_id.as_str(),
            o.model_label.as_str(),
            o.rater_id.as_str(),
            o.metric.as_str(),
            &o.score.to_string(),
        ])
        .expect("in-memory write");
    }
    finish(result, w)
}
