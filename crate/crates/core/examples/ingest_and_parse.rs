// Load a directory of plain-text reports and split each into labelled sections.

use radreport::corpus::{load_corpus, parse_report, Lexicon};

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    std::fs::create_dir_all(dir.path().join("p10"))?;
    std::fs::write(
        dir.path().join("p10/s001.txt"),
        "EXAMINATION: Chest PA and lateral.\r\n\
         FINDINGS: Lungs are clear.\r\n  No effusion or pneumothorax.\r\n\
         IMPRESSION: No acute process.\r\n",
    )?;
    std::fs::write(
        dir.path().join("p10/s002.txt"),
        "Findings: Mild cardiomegaly.\nImpressions: Stable cardiomegaly.\n",
    )?;
    std::fs::write(dir.path().join("scan.png"), [0x89, b'P', b'N', b'G', 0, 0])?;

    let corpus = load_corpus(dir.path(), "mimic")?;
    assert_eq!(corpus.reports.len(), 2);
    assert_eq!(corpus.skip_count(), 1);

    let lexicon = Lexicon::default();
    for raw in &corpus.reports {
        let parsed = parse_report(raw, &lexicon);
        println!("{}", parsed.report_id);
        for section in &parsed.sections {
            println!("  {:<12} {:?}", section.label, section.body);
        }
    }

    let first = parse_report(&corpus.reports[0], &lexicon);
    assert_eq!(first.report_id, "p10/s001");
    assert_eq!(first.section("findings"), Some("Lungs are clear.\n  No effusion or pneumothorax."));
    assert_eq!(first.section("examination"), Some("Chest PA and lateral."));

    // A site-specific lexicon replaces the defaults.
    let custom = Lexicon::parse("Befund -> findings\nBeurteilung -> impression\n")?;
    let (label, rest) = custom.classify("Befund: Kein Erguss.").unwrap();
    assert_eq!((label.as_str(), rest.trim()), ("findings", "Kein Erguss."));
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
