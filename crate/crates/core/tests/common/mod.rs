#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::Utc;
use radreport::eval::CreateStudyRequest;
use radreport::gateway::GeneratedImpression;
use radreport::preprocess::ReportPair;

pub const LABELS: [&str; 4] = ["alpha", "bravo", "charlie", "delta"];

pub fn pairs(source: &str, n: usize) -> Vec<ReportPair> {
    (0..n)
        .map(|i| ReportPair {
            report_id: format!("{source}/case{i:04}"),
            source: source.to_string(),
            findings: format!("The lungs are clear. Finding number {} is stable.", i * 7 + 3),
            impression: "No acute cardiopulmonary process.".to_string(),
        })
        .collect()
}

pub fn generation(report_id: &str, model_label: &str, text: &str) -> GeneratedImpression {
    GeneratedImpression {
        report_id: report_id.to_string(),
        model_label: model_label.to_string(),
        text: text.to_string(),
        latency_ms: 1,
        created_at: Utc::now(),
        prompt_hash: "sha256:00".to_string(),
        empty_generation: false,
    }
}

/// Request over `sources` with `per_source_pool` pairs each and a stub
/// generation for every (pair, label) cell.
pub fn request(
    sources: &[&str],
    per_source_pool: usize,
    n_per_source: usize,
    labels: &[&str],
    raters: &[&str],
    seed: u64,
) -> CreateStudyRequest {
    let mut pairs_by_source = BTreeMap::new();
    let mut generations = Vec::new();
    for source in sources {
        let list = pairs(source, per_source_pool);
        for p in &list {
            for (k, label) in labels.iter().enumerate() {
                generations.push(generation(
                    &p.report_id,
                    label,
                    &format!("Candidate impression variant {k}: no acute disease."),
                ));
            }
        }
        pairs_by_source.insert(source.to_string(), list);
    }
    CreateStudyRequest {
        pairs_by_source,
        n_per_source,
        generations,
        model_labels: labels.iter().map(|s| s.to_string()).collect(),
        rater_ids: raters.iter().map(|s| s.to_string()).collect(),
        seed,
        include_reference: false,
    }
}

/// Completion endpoint on an ephemeral port answering `POST /generate`
/// through `reply(prompt) -> (status, text)`.
pub struct StubBackend {
    pub url: String,
    pub calls: std::sync::Arc<std::sync::atomic::AtomicUsize>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Drop for StubBackend {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn stub_backend<F>(reply: F) -> StubBackend
where
    F: Fn(&str) -> (u16, String) + Send + Sync + 'static,
{
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use axum::http::StatusCode;
    use axum::routing::post;
    use axum::Json;

    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    let reply = Arc::new(reply);
    let app = axum::Router::new().route(
        "/generate",
        post(move |Json(body): Json<serde_json::Value>| {
            let reply = reply.clone();
            let counter = counter.clone();
            async move {
                counter.fetch_add(1, Ordering::SeqCst);
                let (status, text) = reply(body["prompt"].as_str().unwrap_or_default());
                (
                    StatusCode::from_u16(status).unwrap(),
                    Json(serde_json::json!({ "text": text })),
                )
            }
        }),
    );
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
    });
    StubBackend {
        url,
        calls,
        shutdown: Some(tx),
        thread: Some(thread),
    }
}

/// Writes `n` eligible reports named `<prefix>NNNN.txt` under `dir`.
pub fn write_reports(dir: &std::path::Path, prefix: &str, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let text = format!(
            "INDICATION: cough.\nFINDINGS: The lungs are clear without focal consolidation. Heart size is normal, case {i}.\nIMPRESSION: No acute cardiopulmonary process.\n"
        );
        std::fs::write(dir.join(format!("{prefix}{i:04}.txt")), text).unwrap();
    }
}
