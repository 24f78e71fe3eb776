// Normalize sections and keep only reports with usable findings and impressions.

use radreport::corpus::{parse_report, Lexicon, RawReport};
use radreport::preprocess::{filter_corpus, normalize_text, word_count, ExclusionReason, FilterPolicy, Substitutions};

fn raw(id: &str, text: &str) -> RawReport {
    RawReport {
        report_id: id.into(),
        source: "openi".into(),
        text: text.into(),
    }
}

pub fn run_example() -> anyhow::Result<()> {
    let subs = Substitutions::new([("w/o", "without"), ("ptx", "pneumothorax")])?;
    // Tokens are whitespace-delimited, so "ptx," would be left alone.
    assert_eq!(normalize_text("  No  PTX\tw/o effusion ", &subs), "No pneumothorax without effusion");

    let reports = [
        raw(
            "a",
            "FINDINGS: Heart size normal. No ptx seen. Lungs clear w/o focal consolidation.\n\
             IMPRESSION: Normal chest.",
        ),
        // Nine findings words: one short of the default minimum.
        raw("b", "FINDINGS: one two three four five six seven eight nine\nIMPRESSION: Normal chest."),
        raw("c", "FINDINGS: one two three four five six seven eight nine ten\nIMPRESSION: Normal."),
        raw("d", "COMPARISON: None.\nIMPRESSION: No acute process."),
    ];
    let lexicon = Lexicon::default();
    let parsed: Vec<_> = reports.iter().map(|r| parse_report(r, &lexicon)).collect();

    let out = filter_corpus(&parsed, &FilterPolicy::default(), &subs);
    println!("{:?}", out.summary);
    for pair in &out.pairs {
        println!("kept {}: {:?} -> {:?}", pair.report_id, pair.findings, pair.impression);
    }
    for ex in &out.exclusions {
        println!("dropped {}: {}", ex.report_id, ex.reason);
    }

    assert_eq!(out.pairs.len(), 1);
    assert_eq!(word_count(&out.pairs[0].findings), 11);
    assert!(out.pairs[0].findings.contains("No pneumothorax seen. Lungs clear without focal"));
    let reasons: Vec<_> = out.exclusions.iter().map(|e| e.reason).collect();
    assert_eq!(
        reasons,
        [
            ExclusionReason::FindingsTooShort,
            ExclusionReason::ImpressionTooShort,
            ExclusionReason::MissingSection
        ]
    );
    assert_eq!(out.summary.excluded() + out.summary.eligible, out.summary.total);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
