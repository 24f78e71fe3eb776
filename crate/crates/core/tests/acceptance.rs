// Acceptance runner. Each criterion prints one [PASS] or [FAIL] line and the
// process exits non-zero if any criterion fails. Expected values come from
// oracles built here, independent of the library code under test.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use chrono::Utc;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use radreport::corpus::{load_corpus, parse_report, Lexicon};
use radreport::dataset::{
    emit_manifest, parse_records, serialize_records, InstructionRecord, InstructionTemplate, RecordMeta,
    TrainingManifest,
};
use radreport::eval::{aggregate_results, Metric, NextItem, RubricScore, Scores, Study};
use radreport::gateway::{BatchOptions, Gateway, GenerateError, GenerationConfig, ResultsLedger};
use radreport::pipeline::{Pipeline, PipelineConfig, RunOptions, Stage};
use radreport::preprocess::{filter_corpus, word_count, FilterPolicy, Substitutions};
use radreport::service::{spawn, ServiceConfig, ADMIN_HEADER};
use radreport::split::{apply_official_split, random_split_ids, Ratio, Split, SplitSpec};
use serde_json::{json, Value};

const INSTRUCTION: &str = "Derive the impression from findings in the radiology report";
const ADMIN_KEY: &str = "acceptance-admin";

type Criterion = fn() -> Result<String>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("filter fidelity", filter_fidelity),
        ("split fidelity", split_fidelity),
        ("official split application", official_split),
        ("instruction fidelity", instruction_fidelity),
        ("manifest fidelity", manifest_fidelity),
        ("aggregation fidelity", aggregation_fidelity),
        ("blindness", blindness),
        ("durability and idempotency", durability),
        ("gateway retries and resume", gateway),
    ];

    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(run)) {
            Ok(r) => r,
            Err(payload) => Err(anyhow!(
                "panicked: {}",
                payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            )),
        };
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail} ({ms} ms)"),
            Err(e) => {
                failed += 1;
                println!("[FAIL] {name}: {e:#} ({ms} ms)");
            }
        }
    }
    let _ = panic::take_hook();
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(path)
}

fn tsv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect())
}

fn filter_fidelity() -> Result<String> {
    let started = Instant::now();
    let corpus = load_corpus(&fixture("filter50/reports"), "fixture")?;
    let parsed: Vec<_> = corpus.reports.iter().map(|r| parse_report(r, &Lexicon::default())).collect();
    let out = filter_corpus(&parsed, &FilterPolicy::default(), &Substitutions::default());
    let elapsed = started.elapsed();

    let mut got = BTreeMap::new();
    for p in &out.pairs {
        got.insert(p.report_id.clone(), "eligible".to_string());
    }
    for e in &out.exclusions {
        got.insert(e.report_id.clone(), e.reason.to_string());
    }
    let oracle = tsv_rows(&fixture("filter50/expected.tsv"))?;
    ensure!(oracle.len() == 50 && got.len() == 50, "expected 50 reports, got {}", got.len());
    let mismatches: Vec<_> = oracle
        .iter()
        .filter(|row| got.get(&row[0]) != Some(&row[1]))
        .map(|row| row[0].clone())
        .collect();
    ensure!(mismatches.is_empty(), "mismatched reports {mismatches:?}");

    // The oracle must actually exercise both sides of each threshold.
    let has = |col: usize, words: &str, eligible: bool| {
        oracle.iter().any(|r| r[col] == words && (r[1] == "eligible") == eligible)
    };
    ensure!(has(2, "10", true) && oracle.iter().any(|r| r[2] == "9" && r[1] == "FindingsTooShort"));
    ensure!(has(3, "2", true) && oracle.iter().any(|r| r[3] == "1" && r[1] == "ImpressionTooShort"));
    for p in &out.pairs {
        let row = oracle.iter().find(|r| r[0] == p.report_id).unwrap();
        ensure!(word_count(&p.findings).to_string() == row[2], "{} findings count", p.report_id);
        ensure!(word_count(&p.impression).to_string() == row[3], "{} impression count", p.report_id);
    }
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "50 reports, {} eligible, {} excluded, 0 mismatches, boundaries 9/10 and 1/2 covered",
        out.summary.eligible,
        out.summary.excluded()
    ))
}

/// Brute force: every (a, b, c) summing to `total`, keeping those with the
/// least total deviation from the exact quotas, then the lexicographically
/// largest (earlier splits win ties).
fn apportion_oracle(total: usize, parts: [u64; 3]) -> [usize; 3] {
    let sum: i128 = parts.iter().map(|p| *p as i128).sum();
    let mut best: Option<(i128, [usize; 3])> = None;
    for a in 0..=total {
        for b in 0..=total - a {
            let c = total - a - b;
            let cand = [a, b, c];
            let dev: i128 = (0..3)
                .map(|i| (cand[i] as i128 * sum - total as i128 * parts[i] as i128).abs())
                .sum();
            match best {
                Some((d, prev)) if dev > d || (dev == d && cand <= prev) => {}
                _ => best = Some((dev, cand)),
            }
        }
    }
    best.unwrap().1
}

fn split_fidelity() -> Result<String> {
    let started = Instant::now();
    let ids: Vec<String> = (0..3268).map(|i| format!("openi/CXR{i}_IM-{:04}", i * 37 % 9973)).collect();
    let spec = SplitSpec::ratio(Ratio::new(2400, 292, 576), 1234);
    let a = random_split_ids(ids.iter().map(String::as_str), &spec)?;
    ensure!(a.sizes() == [2400, 292, 576], "sizes {:?}", a.sizes());
    let b = random_split_ids(ids.iter().map(String::as_str), &spec)?;
    ensure!(a == b, "same seed gave different membership");
    let mut shuffled = ids.clone();
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    for i in (1..shuffled.len()).rev() {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        shuffled.swap(i, (x >> 33) as usize % (i + 1));
    }
    ensure!(shuffled != ids);
    let c = random_split_ids(shuffled.iter().map(String::as_str), &spec)?;
    ensure!(a == c, "input order changed membership");
    let other = random_split_ids(ids.iter().map(String::as_str), &SplitSpec::ratio(spec.ratio, 1235))?;
    ensure!(other != a, "different seeds gave identical membership");

    let cases = Arc::new(Mutex::new(0usize));
    let counter = cases.clone();
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 200,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let strategy = (
        0usize..=300,
        prop_oneof![0u64..=12, 0u64..=5000],
        prop_oneof![0u64..=12, 0u64..=5000],
        prop_oneof![0u64..=12, 0u64..=5000],
    )
        .prop_filter("ratio must not be all zero", |(_, a, b, c)| a + b + c > 0);
    runner
        .run(&strategy, |(total, t, v, s)| {
            *counter.lock().unwrap() += 1;
            let got = radreport::split::apportion(total, &Ratio::new(t, v, s));
            prop_assert_eq!(got, apportion_oracle(total, [t, v, s]), "total {} ratio {}:{}:{}", total, t, v, s);
            Ok(())
        })
        .map_err(|e| anyhow!("{e}"))?;
    let n = *cases.lock().unwrap();
    ensure!(n >= 200, "only {n} property cases ran");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "3268 ids -> 2400/292/576, deterministic, order-invariant, {n} apportionment cases agree with brute force"
    ))
}

fn official_split() -> Result<String> {
    let corpus = load_corpus(&fixture("official20/reports"), "fixture")?;
    let parsed: Vec<_> = corpus.reports.iter().map(|r| parse_report(r, &Lexicon::default())).collect();
    let pairs = filter_corpus(&parsed, &FilterPolicy::default(), &Substitutions::default()).pairs;
    let official = apply_official_split(&pairs, &fixture("official20/split.tsv"))?;

    let expected = tsv_rows(&fixture("official20/expected.tsv"))?;
    let expected: BTreeMap<String, Split> = expected
        .iter()
        .map(|r| Ok((r[0].clone(), r[1].parse().map_err(anyhow::Error::msg)?)))
        .collect::<Result<_>>()?;
    let got: BTreeMap<String, Split> = official.assignment.iter().map(|(id, s)| (id.to_string(), s)).collect();
    ensure!(got == expected, "assignment differs from the split file");
    ensure!(official.assignment.sizes() == [16, 2, 2], "sizes {:?}", official.assignment.sizes());
    let all: BTreeSet<_> = pairs.iter().map(|p| p.report_id.clone()).collect();
    let oracle_unmapped: Vec<_> = all.iter().filter(|id| !expected.contains_key(*id)).cloned().collect();
    ensure!(official.unmapped == oracle_unmapped, "unmapped {:?}", official.unmapped);
    Ok(format!("16/2/2 matches the file exactly, {} unmapped ids counted", official.unmapped.len()))
}

fn record_strategy() -> impl Strategy<Value = InstructionRecord> {
    let text = "(?s).{1,80}";
    (
        text,
        text,
        text,
        "[a-z]{2,8}/[A-Za-z0-9_./-]{1,20}",
        "[a-z]{3,8}",
        prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)],
        "[a-z-]{1,20}",
    )
        .prop_map(|(instruction, input, output, report_id, source, split, template_id)| InstructionRecord {
            instruction,
            input,
            output,
            meta: RecordMeta {
                report_id,
                source,
                split,
                template_id,
            },
        })
}

fn instruction_fidelity() -> Result<String> {
    let dir = tempfile::tempdir()?;
    common::write_reports(&dir.path().join("a"), "a", 40);
    common::write_reports(&dir.path().join("b"), "b", 25);
    let toml = r#"
[[corpus]]
source = "mimic"
root = "a"
split = { mode = "ratio", ratio = [8, 1, 1], seed = 9 }

[[corpus]]
source = "openi"
root = "b"
split = { mode = "ratio", ratio = [3, 1, 1], seed = 9 }
"#;
    std::fs::write(dir.path().join("p.toml"), toml)?;
    let pipeline = Pipeline::new(PipelineConfig::load(&dir.path().join("p.toml"))?, RunOptions::default());
    for stage in [Stage::Ingest, Stage::Preprocess, Stage::Split, Stage::BuildDataset] {
        pipeline.run(stage)?;
    }
    let needle = format!("\"instruction\":\"{INSTRUCTION}\"");
    let mut lines = 0;
    for split in ["train", "val", "test"] {
        let bytes = std::fs::read(pipeline.out_dir().join(format!("dataset/{split}.jsonl")))?;
        for line in bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()) {
            lines += 1;
            let line = std::str::from_utf8(line)?;
            ensure!(line.contains(&needle), "record without the instruction: {line}");
            let v: Value = serde_json::from_str(line)?;
            ensure!(v["instruction"].as_str().map(str::as_bytes) == Some(INSTRUCTION.as_bytes()));
        }
    }
    ensure!(lines == 65, "expected 65 records, found {lines}");

    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 1,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let records = proptest::collection::vec(record_strategy(), 1000)
        .new_tree(&mut runner)
        .map_err(|e| anyhow!("{e}"))?
        .current();
    ensure!(records.len() == 1000);
    let bytes = serialize_records(&records);
    let back = parse_records(&bytes)?;
    ensure!(back == records, "round trip changed records");
    ensure!(serialize_records(&back) == bytes, "re-serialization changed bytes");
    Ok(format!("{lines} emitted records carry the exact instruction, 1000 generated records round-trip"))
}

fn manifest_fidelity() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("manifest.txt");
    emit_manifest(&TrainingManifest::default(), &path)?;
    let text = std::fs::read_to_string(&path)?;
    let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
    let expected = [
        ("lora_rank", "8"),
        ("lora_alpha", "16"),
        ("lora_dropout", "0.05"),
        ("learning_rate", "0.0003"),
        ("batch_size", "128"),
        ("target_projections", "query,value"),
    ];
    for (k, v) in expected {
        ensure!(kv.get(k) == Some(&v), "{k} is {:?}, expected {v}", kv.get(k));
    }
    let lr: f64 = kv["learning_rate"].parse()?;
    ensure!(lr == 3e-4);
    let back = TrainingManifest::from_kv(&text)?;
    ensure!(back == TrainingManifest::default(), "round trip differs");
    Ok(format!("{} keys, hyperparameters exact, round-trip equal", kv.len()))
}

/// Submits a score for every (rater, item) from `score(rater_index, cell, metric)`.
fn rate_all(study: &mut Study, score: &dyn Fn(usize, &str, &str, Metric) -> u8) -> Result<()> {
    let raters = study.definition().rater_ids.clone();
    for (r, rater) in raters.iter().enumerate() {
        while let NextItem::Item { item, .. } = study.next_item(rater)? {
            let cell = study.item(&item.item_id).unwrap().cell();
            let values = Metric::ALL.map(|m| score(r, &cell.report_id, &cell.model_label, m));
            study.submit_rating(RubricScore {
                item_id: item.item_id.clone(),
                rater_id: rater.clone(),
                scores: Scores::new(values).map_err(anyhow::Error::msg)?,
                submitted_at: Utc::now(),
                submission_id: format!("{rater}/{}", item.item_id),
            })?;
        }
    }
    Ok(())
}

fn aggregation_fidelity() -> Result<String> {
    // Seeded random scores from an LCG keyed by (rater, report, model, metric).
    let table: Mutex<BTreeMap<(usize, String, String, Metric), u8>> = Mutex::new(BTreeMap::new());
    let state = Mutex::new(0x2545_F491_4F6C_DD1Du64);
    let random = |r: usize, report: &str, model: &str, m: Metric| -> u8 {
        let mut t = table.lock().unwrap();
        *t.entry((r, report.to_string(), model.to_string(), m)).or_insert_with(|| {
            let mut s = state.lock().unwrap();
            *s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((*s >> 33) % 5) as u8 + 1
        })
    };

    let req = common::request(&["mimic"], 30, 10, &common::LABELS, &["r1", "r2"], 77);
    let mut study = Study::create(&req)?;
    rate_all(&mut study, &random)?;
    let result = aggregate_results(&study, false)?;

    let observations = table.lock().unwrap().clone();
    ensure!(observations.len() == 10 * 2 * 4 * 5, "{} observations", observations.len());
    let mut worst = 0.0f64;
    let mut cells = 0;
    for label in common::LABELS {
        for metric in Metric::ALL {
            let values: Vec<f64> = observations
                .iter()
                .filter(|((_, _, model, m), _)| model == label && *m == metric)
                .map(|(_, v)| *v as f64)
                .collect();
            let oracle = values.iter().sum::<f64>() / values.len() as f64;
            let got = result.mean(label, metric).context("missing cell")?;
            worst = worst.max((got - oracle).abs());
            ensure!((got - oracle).abs() <= 1e-12, "{label}/{metric:?}: {got} vs {oracle}");
            cells += 1;
        }
    }
    ensure!(cells == 20 && result.cells.len() == 20);

    let mut swapped = Study::create(&req)?;
    rate_all(&mut swapped, &|r, report, model, m| random(1 - r, report, model, m))?;
    let swapped = aggregate_results(&swapped, false)?;
    for (a, b) in result.cells.iter().zip(&swapped.cells) {
        ensure!(a.mean == b.mean && a.model_label == b.model_label, "rater swap changed {a:?}");
    }

    let single = common::request(&["mimic"], 1, 1, &["alpha"], &["r1", "r2"], 1);
    let mut study = Study::create(&single)?;
    rate_all(&mut study, &|r, _, _, _| [4, 5][r])?;
    let pair = aggregate_results(&study, false)?;
    for metric in Metric::ALL {
        ensure!(pair.mean("alpha", metric) == Some(4.5), "(4, 5) gave {:?}", pair.mean("alpha", metric));
    }
    Ok(format!("20 cells, max deviation from the oracle {worst}, (4, 5) -> 4.5, rater swap invariant"))
}

struct Client {
    http: reqwest::blocking::Client,
    base: String,
}

impl Client {
    fn new(base: String) -> Self {
        Self {
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(10))
                .build()
                .unwrap(),
            base,
        }
    }

    fn admin(&self, method: reqwest::Method, path: &str, body: Option<Value>) -> Result<(u16, String)> {
        let mut req = self
            .http
            .request(method, format!("{}{path}", self.base))
            .header(ADMIN_HEADER, ADMIN_KEY);
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send()?;
        Ok((resp.status().as_u16(), resp.text()?))
    }

    fn rater(&self, token: &str, method: reqwest::Method, path: &str, body: Option<Value>) -> Result<(u16, String)> {
        let mut req = self
            .http
            .request(method, format!("{}{path}", self.base))
            .bearer_auth(token);
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send()?;
        Ok((resp.status().as_u16(), resp.text()?))
    }
}

fn scores_json(v: u8) -> Value {
    json!({"understandability": v, "coherence": v, "relevance": v, "conciseness": v, "clinical_utility": v})
}

fn create_study(client: &Client, req: &radreport::eval::CreateStudyRequest) -> Result<(String, Vec<(String, String)>)> {
    let (status, body) = client.admin(reqwest::Method::POST, "/studies", Some(serde_json::to_value(req)?))?;
    ensure!(status == 201, "create returned {status}: {body}");
    let v: Value = serde_json::from_str(&body)?;
    let tokens = v["tokens"]
        .as_array()
        .context("tokens")?
        .iter()
        .map(|t| (t["rater_id"].as_str().unwrap().to_string(), t["token"].as_str().unwrap().to_string()))
        .collect();
    Ok((v["study_id"].as_str().context("study_id")?.to_string(), tokens))
}

fn blindness() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let service = spawn(&ServiceConfig {
        data_dir: dir.path().to_path_buf(),
        bind: "127.0.0.1:0".parse()?,
        admin_key: ADMIN_KEY.into(),
        token_ttl: chrono::Duration::hours(1),
    })?;
    let client = Client::new(service.base_url());
    let labels = ["radiology-gpt", "alpaca-7b", "dolly-v2", "stablelm-tuned"];
    let mut req = common::request(&["mimic", "openi"], 15, 5, &labels, &["rater-one", "rater-two"], 2024);
    req.include_reference = true;
    let (study, tokens) = create_study(&client, &req)?;
    let (_, other_tokens) = create_study(&client, &common::request(&["mimic"], 3, 1, &labels, &["rater-one"], 1))?;

    let report_ids: Vec<String> = req.pairs_by_source.values().flatten().map(|p| p.report_id.clone()).collect();
    let mut bodies: Vec<String> = Vec::new();
    let get = reqwest::Method::GET;
    let post = reqwest::Method::POST;
    let path_next = format!("/studies/{study}/next");
    let path_rate = format!("/studies/{study}/ratings");

    for (rater, token) in &tokens {
        let mut first_item = None;
        loop {
            let (status, body) = client.rater(token, get.clone(), &path_next, None)?;
            ensure!(status == 200, "next returned {status}");
            let v: Value = serde_json::from_str(&body)?;
            bodies.push(body);
            if v["status"] == "done" {
                break;
            }
            let item_id = v["item"]["item_id"].as_str().context("item_id")?.to_string();
            let rate = |sub: &str, scores: Value| {
                client.rater(token, post.clone(), &path_rate, Some(json!({"item_id": item_id, "submission_id": sub, "scores": scores})))
            };
            if first_item.is_none() {
                // Error paths are rater-facing too.
                bodies.push(rate("bad", json!({"understandability": 9}))?.1);
                bodies.push(
                    client
                        .rater(token, post.clone(), &path_rate, Some(json!({"item_id": "nope", "submission_id": "x", "scores": scores_json(3)})))?
                        .1,
                );
                bodies.push(
                    client
                        .rater(token, post.clone(), &path_rate, Some(json!({"item_id": item_id, "submission_id": "y", "scores": scores_json(3), "rater_id": "someone-else"})))?
                        .1,
                );
            }
            let sub = format!("{rater}-{item_id}");
            bodies.push(rate(&sub, scores_json(4))?.1);
            bodies.push(rate(&sub, scores_json(4))?.1);
            if first_item.is_none() {
                bodies.push(rate("fresh", scores_json(2))?.1);
                first_item = Some(item_id);
            }
        }
        bodies.push(client.rater(&other_tokens[0].1, get.clone(), &path_next, None)?.1);
        bodies.push(client.rater("not-a-token", get.clone(), &path_next, None)?.1);
    }
    let (status, _) = client.admin(post.clone(), &format!("/studies/{study}/close"), None)?;
    ensure!(status == 200);
    bodies.push(client.rater(&tokens[0].1, post.clone(), &path_rate, Some(json!({"item_id": "x", "submission_id": "z", "scores": scores_json(3)})))?.1);
    bodies.push(client.rater(&tokens[0].1, get, &path_next, None)?.1);

    let mut hits = Vec::new();
    for body in &bodies {
        for needle in labels.iter().map(|s| s.to_string()).chain(report_ids.iter().cloned()) {
            if body.contains(&needle) {
                hits.push(needle);
            }
        }
    }
    ensure!(hits.is_empty(), "{} leak(s): {:?}", hits.len(), &hits[..hits.len().min(5)]);
    let items = 10 * labels.len();
    ensure!(bodies.len() > 2 * items * 3, "only {} bodies scanned", bodies.len());
    service.stop()?;
    Ok(format!("{} rater-facing bodies scanned for {} labels and {} report ids, 0 hits", bodies.len(), labels.len(), report_ids.len()))
}

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(data_dir: &Path) -> Result<Self> {
        let port = TcpListener::bind("127.0.0.1:0")?.local_addr()?.port();
        let child = Command::new(env!("CARGO_BIN_EXE_radreport"))
            .args(["serve", "--data-dir"])
            .arg(data_dir)
            .args(["--bind", &format!("127.0.0.1:{port}")])
            .env("RADREPORT_ADMIN_KEY", ADMIN_KEY)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()?;
        let mut server = Self {
            child,
            base: format!("http://127.0.0.1:{port}"),
        };
        let deadline = Instant::now() + Duration::from_secs(15);
        loop {
            if reqwest::blocking::get(format!("{}/health", server.base)).is_ok_and(|r| r.status().is_success()) {
                return Ok(server);
            }
            if let Some(status) = server.child.try_wait()? {
                bail!("server exited early with {status}");
            }
            if Instant::now() > deadline {
                server.kill();
                bail!("server did not come up");
            }
            std::thread::sleep(Duration::from_millis(25));
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}

fn durability() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let data = dir.path().join("data");
    let mut server = Server::start(&data)?;
    let client = Client::new(server.base.clone());
    let req = common::request(&["mimic"], 8, 6, &common::LABELS[..2], &["r1", "r2"], 5);
    let (study, tokens) = create_study(&client, &req)?;
    let token = tokens[0].1.clone();
    let next_path = format!("/studies/{study}/next");
    let rate_path = format!("/studies/{study}/ratings");

    let k = 7;
    let mut acked = Vec::new();
    for i in 0..k {
        let (_, body) = client.rater(&token, reqwest::Method::GET, &next_path, None)?;
        let item_id = serde_json::from_str::<Value>(&body)?["item"]["item_id"].as_str().context("item")?.to_string();
        let (status, body) = client.rater(
            &token,
            reqwest::Method::POST,
            &rate_path,
            Some(json!({"item_id": item_id, "submission_id": format!("s{i}"), "scores": scores_json(1 + i % 5)})),
        )?;
        ensure!(status == 200 && body.contains("accepted"), "rating {i}: {status} {body}");
        acked.push(item_id);
    }
    // SIGKILL: no graceful shutdown, nothing flushed beyond what was acknowledged.
    server.kill();

    let server = Server::start(&data)?;
    let client = Client::new(server.base.clone());
    let (status, body) = client.admin(reqwest::Method::GET, &format!("/studies/{study}/results?force=true&table=json"), None)?;
    ensure!(status == 200, "results after restart: {status} {body}");
    let v: Value = serde_json::from_str(&body)?;
    let stored = v["observations"].as_array().context("observations")?.len() / Metric::ALL.len();
    ensure!(stored == k as usize, "{stored} of {k} acknowledged ratings survived");
    let (_, body) = client.rater(&token, reqwest::Method::GET, &next_path, None)?;
    let page: Value = serde_json::from_str(&body)?;
    ensure!(page["progress"]["position"] == k as u64 + 1, "resumed at {}", page["progress"]);
    for (i, item_id) in acked.iter().enumerate() {
        let (status, body) = client.rater(
            &token,
            reqwest::Method::POST,
            &rate_path,
            Some(json!({"item_id": item_id, "submission_id": format!("s{i}"), "scores": scores_json(1 + i as u8 % 5)})),
        )?;
        ensure!(status == 200 && body.contains("duplicate"), "replayed rating {i}: {status} {body}");
    }

    let item_id = page["item"]["item_id"].as_str().context("item")?.to_string();
    let barrier = Arc::new(Barrier::new(100));
    let handles: Vec<_> = (0..100)
        .map(|_| {
            let barrier = barrier.clone();
            let (base, token, path, item_id) = (server.base.clone(), token.clone(), rate_path.clone(), item_id.clone());
            std::thread::spawn(move || -> Result<String> {
                let client = Client::new(base);
                barrier.wait();
                let (status, body) = client.rater(
                    &token,
                    reqwest::Method::POST,
                    &path,
                    Some(json!({"item_id": item_id, "submission_id": "same-click", "scores": scores_json(5)})),
                )?;
                ensure!(status == 200, "{status} {body}");
                Ok(serde_json::from_str::<Value>(&body)?["status"].as_str().unwrap_or_default().to_string())
            })
        })
        .collect();
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    for h in handles {
        let status = h.join().map_err(|_| anyhow!("submit thread panicked"))??;
        *outcomes.entry(status).or_default() += 1;
    }
    ensure!(outcomes.get("accepted") == Some(&1), "outcomes {outcomes:?}");
    ensure!(outcomes.get("duplicate") == Some(&99), "outcomes {outcomes:?}");
    let (_, body) = client.admin(reqwest::Method::GET, &format!("/studies/{study}"), None)?;
    let status: Value = serde_json::from_str(&body)?;
    ensure!(status["ratings"] == k as u64 + 1, "stored ratings {}", status["ratings"]);
    Ok(format!("{k}/{k} acknowledged ratings survive SIGKILL and restart, 100 concurrent duplicates stored once"))
}

fn gateway() -> Result<String> {
    let template = InstructionTemplate::default();
    let mut checked = Vec::new();
    for attempts in [1u32, 2, 3, 5] {
        let stub = common::stub_backend(|_| (503, "unavailable".into()));
        let mut config = GenerationConfig::new("m", &stub.url);
        config.retry.max_attempts = attempts;
        config.retry.backoff_initial_ms = 10;
        let gw = Gateway::from_configs(&[config.clone()], template.clone())?;
        let started = Instant::now();
        let err = gw.generate("r", "findings text here", "m").unwrap_err();
        let elapsed = started.elapsed();
        let calls = stub.calls.load(std::sync::atomic::Ordering::SeqCst);
        ensure!(calls == attempts as usize, "max_attempts {attempts}: {calls} calls");
        ensure!(matches!(err, GenerateError::BackendUnavailable { attempts: a, .. } if a == attempts));
        // Oracle backoff: 10 ms doubling between consecutive attempts.
        let floor: u64 = (1..attempts).map(|i| 10 * (1u64 << (i - 1))).sum();
        ensure!(elapsed >= Duration::from_millis(floor), "waited {elapsed:?}, expected at least {floor} ms");
        checked.push(calls);
    }
    let stub = common::stub_backend(|_| (422, "bad request".into()));
    let mut config = GenerationConfig::new("m", &stub.url);
    config.retry.max_attempts = 4;
    let gw = Gateway::from_configs(&[config], template.clone())?;
    ensure!(matches!(gw.generate("r", "x", "m"), Err(GenerateError::BackendRejected { .. })));
    ensure!(stub.calls.load(std::sync::atomic::Ordering::SeqCst) == 1, "4xx was retried");

    // Interrupted batch: model b's backend rejects one report, which stops the batch.
    let dir = tempfile::tempdir()?;
    let ledger_path = dir.path().join("generations.jsonl");
    let pairs = common::pairs("mimic", 12);
    let poison = pairs[7].findings.clone();
    let recorder = |reject: Option<String>| {
        let seen = Arc::new(Mutex::new(Vec::<String>::new()));
        let log = seen.clone();
        let stub = common::stub_backend(move |prompt| {
            log.lock().unwrap().push(prompt.to_string());
            match &reject {
                Some(p) if prompt.contains(p.as_str()) => (400, "rejected".into()),
                _ => (200, "No acute findings.".into()),
            }
        });
        (stub, seen)
    };
    let configs = |a: &str, b: &str| {
        [("a", a), ("b", b)].map(|(label, url)| {
            let mut c = GenerationConfig::new(label, url);
            c.retry.backoff_initial_ms = 1;
            c
        })
    };
    let done_before = {
        let (stub_a, _) = recorder(None);
        let (stub_b, _) = recorder(Some(poison));
        let gw = Gateway::from_configs(&configs(&stub_a.url, &stub_b.url), template.clone())?;
        let mut ledger = ResultsLedger::open(&ledger_path)?;
        ensure!(gw.batch_generate(&pairs, &mut ledger, &BatchOptions { workers: 1 }).is_err());
        ledger
            .entries()
            .iter()
            .map(|e| (e.report_id.clone(), e.model_label.clone()))
            .collect::<BTreeSet<_>>()
    };
    ensure!(!done_before.is_empty() && done_before.len() < 24, "{} cells done before interruption", done_before.len());

    let (stub_a, seen_a) = recorder(None);
    let (stub_b, seen_b) = recorder(None);
    let gw = Gateway::from_configs(&configs(&stub_a.url, &stub_b.url), template.clone())?;
    let mut ledger = ResultsLedger::open(&ledger_path)?;
    let outcome = gw.batch_generate(&pairs, &mut ledger, &BatchOptions { workers: 4 })?;
    let findings_of: BTreeMap<&str, &str> = pairs.iter().map(|p| (p.findings.as_str(), p.report_id.as_str())).collect();
    let mut recalls = 0;
    for (label, seen) in [("a", &seen_a), ("b", &seen_b)] {
        for prompt in seen.lock().unwrap().iter() {
            let report = findings_of
                .iter()
                .find(|(f, _)| prompt.contains(**f))
                .map(|(_, id)| id.to_string())
                .context("unknown prompt")?;
            if done_before.contains(&(report, label.to_string())) {
                recalls += 1;
            }
        }
    }
    let new_calls = seen_a.lock().unwrap().len() + seen_b.lock().unwrap().len();
    ensure!(recalls == 0, "{recalls} completed cells were requested again");
    ensure!(new_calls == 24 - done_before.len(), "{new_calls} calls on resume");
    ensure!(outcome.resumed == done_before.len() && outcome.results.len() == 24);
    Ok(format!(
        "max_attempts {checked:?} honored with doubling backoff, 4xx not retried, resume after {} cells made {new_calls} calls and 0 re-calls",
        done_before.len()
    ))
}
