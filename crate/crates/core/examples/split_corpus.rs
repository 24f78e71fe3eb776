// Seeded ratio splits and official split files.

use radreport::preprocess::ReportPair;
use radreport::split::{apply_official_split_text, apportion, random_split_ids, Ratio, Split, SplitSpec};

pub fn run_example() -> anyhow::Result<()> {
    let ratio = Ratio::new(2400, 292, 576);
    assert_eq!(apportion(3268, &ratio), [2400, 292, 576]);
    // Largest remainder: 10 over 1:1:1 gives the spare unit to train.
    assert_eq!(apportion(10, &Ratio::new(1, 1, 1)), [4, 3, 3]);

    let ids: Vec<String> = (0..3268).map(|i| format!("openi/{i:05}")).collect();
    let spec = SplitSpec::ratio(ratio, 42);
    let a = random_split_ids(ids.iter().map(String::as_str), &spec)?;
    let b = random_split_ids(ids.iter().rev().map(String::as_str), &spec)?;
    assert_eq!(a, b, "membership ignores input order");
    assert_eq!(a.sizes(), [2400, 292, 576]);
    println!("ratio {} over {} ids -> {:?}", spec.ratio, ids.len(), a.sizes());

    let pairs: Vec<ReportPair> = ["s1", "s2", "s3", "s4"]
        .iter()
        .map(|id| ReportPair {
            report_id: id.to_string(),
            source: "mimic".into(),
            findings: String::new(),
            impression: String::new(),
        })
        .collect();
    let official = apply_official_split_text(&pairs, "s1\ttrain\ns2\tvalidate\ns3\ttest\n")?;
    assert_eq!(official.assignment.get("s2"), Some(Split::Val));
    assert_eq!(official.unmapped, ["s4"]);
    print!("{}", official.assignment.to_tsv(None));
    println!("unmapped: {:?}", official.unmapped);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
