// Generate impressions from several models, recording each result in a
// resumable ledger. Backends here are closures; `HttpBackend` talks to a
// real completion server with the same interface.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use radreport::dataset::InstructionTemplate;
use radreport::gateway::{BackendError, BatchOptions, CompletionRequest, Gateway, GenerationConfig, ResultsLedger};
use radreport::preprocess::ReportPair;

pub fn run_example() -> anyhow::Result<()> {
    let pairs: Vec<ReportPair> = (0..4)
        .map(|i| ReportPair {
            report_id: format!("mimic/s{i}"),
            source: "mimic".into(),
            findings: format!("Small left pleural effusion, case {i}. No pneumothorax. Heart size normal."),
            impression: "Small left effusion.".into(),
        })
        .collect();

    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    // Fails every third call with a 503; the retry policy absorbs it.
    let flaky = move |req: &CompletionRequest| {
        let n = counter.fetch_add(1, Ordering::SeqCst);
        if n % 3 == 2 {
            return Err(BackendError::Status { status: 503, body: "busy".into() });
        }
        assert!(req.prompt.contains("### Instruction:"));
        Ok("Small left pleural effusion.".to_string())
    };
    let terse = |_: &CompletionRequest| Ok::<_, BackendError>("Effusion.".to_string());

    let mut fast_retry = GenerationConfig::new("model-a", "http://unused.invalid/a");
    fast_retry.retry.backoff_initial_ms = 1;
    let mut gateway = Gateway::new(InstructionTemplate::default());
    gateway.add_backend(fast_retry, Arc::new(flaky))?;
    gateway.add_backend(GenerationConfig::new("model-b", "http://unused.invalid/b"), Arc::new(terse))?;

    let dir = tempfile::tempdir()?;
    let ledger_path = dir.path().join("generations.jsonl");
    let mut ledger = ResultsLedger::open(&ledger_path)?;
    let first = gateway.batch_generate(&pairs, &mut ledger, &BatchOptions { workers: 2 })?;
    assert_eq!((first.generated, first.resumed), (8, 0));
    for g in &first.results {
        println!("{:<10} {:<8} {:?} ({})", g.report_id, g.model_label, g.text, &g.prompt_hash[..15]);
    }

    // Reopening the ledger resumes: nothing is generated twice.
    let before = calls.load(Ordering::SeqCst);
    let mut ledger = ResultsLedger::open(&ledger_path)?;
    let again = gateway.batch_generate(&pairs, &mut ledger, &BatchOptions::default())?;
    assert_eq!((again.generated, again.resumed), (0, 8));
    assert_eq!(calls.load(Ordering::SeqCst), before);
    println!("resumed {} cells, backend calls unchanged at {before}", again.resumed);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
