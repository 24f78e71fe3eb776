// Drive the data stages from a TOML config, the same way `radreport run`
// does. Unchanged stages are skipped on the second pass.

use radreport::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage, StageStatus};

const CONFIG: &str = r#"
out_dir = "out"

[[corpus]]
source = "openi"
root = "reports"
split = { mode = "ratio", ratio = [2400, 292, 576], seed = 42 }

[filter]
min_findings_words = 10
min_impression_words = 2

[substitutions]
"w/o" = "without"
"#;

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let reports = dir.path().join("reports");
    std::fs::create_dir_all(&reports)?;
    for i in 0..40 {
        let impression = if i % 10 == 0 { "Normal." } else { "No acute abnormality." };
        std::fs::write(
            reports.join(format!("CXR{i:03}.txt")),
            format!("FINDINGS: Heart size normal, study {i}. Lungs clear w/o effusion or pneumothorax.\nIMPRESSION: {impression}\n"),
        )?;
    }
    let path = dir.path().join("pipeline.toml");
    std::fs::write(&path, CONFIG)?;

    let pipeline = Pipeline::new(PipelineConfig::load(&path)?, RunOptions::default());
    let stages = [Stage::Ingest, Stage::Preprocess, Stage::Split, Stage::BuildDataset];
    for stage in stages {
        let summary = pipeline.run(stage)?;
        println!("{:<14} {:?} {}", stage.as_str(), summary.status, serde_json::to_string(&summary.counts)?);
    }
    let train = std::fs::read_to_string(pipeline.out_dir().join("dataset/train.jsonl"))?;
    assert!(train.contains("without effusion"));

    for stage in stages {
        assert_eq!(pipeline.run(stage)?.status, StageStatus::Skipped);
    }
    println!("second pass skipped all {} stages", stages.len());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
