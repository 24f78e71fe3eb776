// Turn split report pairs into instruction records and a training manifest.

use radreport::dataset::{
    build_records, emit_manifest, parse_records, serialize_records, InstructionTemplate, TrainingManifest,
    DEFAULT_INSTRUCTION,
};
use radreport::preprocess::ReportPair;
use radreport::split::{random_split, Ratio, Split, SplitSpec};

pub fn run_example() -> anyhow::Result<()> {
    let pairs: Vec<ReportPair> = (0..20)
        .map(|i| ReportPair {
            report_id: format!("openi/{i:03}"),
            source: "openi".into(),
            findings: format!("Heart size normal. Lungs clear. Nodule {i} mm unchanged since prior study."),
            impression: "No acute cardiopulmonary abnormality.".into(),
        })
        .collect();
    let assignment = random_split(&pairs, &SplitSpec::ratio(Ratio::new(8, 1, 1), 7))?;
    let records = build_records(&pairs, &assignment, &InstructionTemplate::default())?;
    assert_eq!(records.counts(), [16, 2, 2]);
    assert!(records.iter().all(|r| r.instruction == DEFAULT_INSTRUCTION));

    let test = records.get(Split::Test);
    let bytes = serialize_records(test);
    print!("{}", String::from_utf8_lossy(&bytes));
    assert_eq!(parse_records(&bytes)?, test);

    // Alternative templates plug in by id or by value.
    let custom = InstructionTemplate::new("summarize", "Summarize the findings as an impression");
    let alt = build_records(&pairs, &assignment, &custom)?;
    assert_eq!(alt.get(Split::Val)[0].meta.template_id, "summarize");

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("manifest.txt");
    emit_manifest(&TrainingManifest::default(), &path)?;
    let text = std::fs::read_to_string(&path)?;
    print!("{text}");
    assert!(text.contains("lora_rank=8\n") && text.contains("target_projections=query,value\n"));
    assert_eq!(TrainingManifest::from_kv(&text)?, TrainingManifest::default());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
