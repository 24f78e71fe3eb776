//! Stage-by-stage driver that chains every module over plain files in one
//! output directory.
//!
//! | stage | writes |
//! |---|---|
//! | ingest | `parsed/<source>.jsonl`, `parsed/<source>.skipped.tsv` |
//! | preprocess | `pairs/<source>.jsonl`, `exclusions/<source>.tsv` |
//! | split | `splits/<source>.tsv`, `splits/<source>.unmapped.txt` |
//! | build-dataset | `dataset/{train,val,test}.jsonl`, `dataset/manifest.txt` |
//! | generate | `generations/ledger.jsonl` |
//! | study-create | `study/study.json`, `study/tokens.tsv`, local `study-store/` |
//! | study-results | `results/summary.csv`, `results/per_report.csv` |
//!
//! Every run appends a [`StageSummary`] to `run_log.jsonl`. Stages other
//! than generate and study-results are skipped when their input digest and
//! recorded outputs are unchanged.

mod config;
mod remote;
mod runlog;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{
    CorpusConfig, DatasetConfig, FilterConfig, GenerateConfig, GenerateSubset, PipelineConfig,
    SplitConfig, StudyConfig,
};
pub use runlog::{StageStatus, StageSummary, RUN_LOG_FILE};

use crate::corpus::{load_corpus, parse_report, ParsedReport};
use crate::dataset::{build_records, emit_manifest, serialize_records};
use crate::eval::{
    long_csv, read_study, sample_report_ids, summary_csv, CreateStudyRequest, EvaluationResult,
    MissingRating, StoreError, StudyError, StudyStore,
};
use crate::fsutil::{sha256_hex, write_atomic};
use crate::gateway::{
    read_ledger, BatchOptions, Gateway, GatewayError, GenerateError, ResultsLedger,
};
use crate::preprocess::{filter_corpus, ReportPair};
use crate::split::{apply_official_split_text, random_split, Split, SplitAssignment};

/// Local study store directory under the output dir.
pub const STUDY_STORE_DIR: &str = "study-store";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
    #[error("study incomplete, {} rating(s) missing:\n{}", .0.len(), list_missing(.0))]
    Incomplete(Vec<MissingRating>),
}

fn list_missing(missing: &[MissingRating]) -> String {
    missing
        .iter()
        .map(|m| format!("  rater={} report={} model={}", m.rater_id, m.report_id, m.model_label))
        .collect::<Vec<_>>()
        .join("\n")
}

impl PipelineError {
    /// 1 config, 2 data, 3 backend or service.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Incomplete(_) => 2,
            PipelineError::Backend(_) => 3,
        }
    }

    fn io(path: &Path, err: impl fmt::Display) -> Self {
        PipelineError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<StoreError> for PipelineError {
    fn from(err: StoreError) -> Self {
        match err {
            StoreError::Study(StudyError::Incomplete(missing)) => PipelineError::Incomplete(missing),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Preprocess,
    Split,
    BuildDataset,
    Generate,
    StudyCreate,
    StudyResults,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Preprocess,
        Stage::Split,
        Stage::BuildDataset,
        Stage::Generate,
        Stage::StudyCreate,
        Stage::StudyResults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Preprocess => "preprocess",
            Stage::Split => "split",
            Stage::BuildDataset => "build-dataset",
            Stage::Generate => "generate",
            Stage::StudyCreate => "study-create",
            Stage::StudyResults => "study-results",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Re-run stages whose inputs are unchanged; export incomplete results.
    pub force: bool,
    /// Continue an existing generation ledger.
    pub resume: bool,
}

/// What `study-create` records about the study it made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    /// Local store directory, when the study lives in one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_url: Option<String>,
    pub n_items: usize,
    pub sampled_report_ids: Vec<String>,
    pub model_labels: Vec<String>,
    pub rater_ids: Vec<String>,
    pub seed: u64,
}

/// Outcome of a stage body before the driver adds digests.
struct Work {
    counts: Value,
    outputs: Vec<PathBuf>,
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
    options: RunOptions,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, options: RunOptions) -> Self {
        let out = config.out_dir.clone();
        Self { config, out, options }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Runs ingest through study-create in order, stopping at the first error.
    pub fn run_through_study(&self) -> Result<Vec<StageSummary>, PipelineError> {
        Stage::ALL[..6].iter().map(|s| self.run(*s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageSummary, PipelineError> {
        log::info!("stage {stage}");
        let summary = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Preprocess => self.preprocess(),
            Stage::Split => self.split(),
            Stage::BuildDataset => self.build_dataset(),
            Stage::Generate => self.generate(),
            Stage::StudyCreate => self.study_create(),
            Stage::StudyResults => self.study_results(),
        }?;
        runlog::append(&self.out, &summary)?;
        Ok(summary)
    }

    /// Runs `body` unless the last run had the same input digest and its
    /// outputs are untouched.
    fn cached(
        &self,
        stage: Stage,
        config_digest: String,
        inputs: &Value,
        seeds: BTreeMap<String, u64>,
        body: impl FnOnce() -> Result<Work, PipelineError>,
    ) -> Result<StageSummary, PipelineError> {
        let input_digest = sha256_hex(json!({"stage": stage, "config": config_digest, "inputs": inputs}).to_string().as_bytes());
        let started_at = chrono::Utc::now();
        if !self.options.force {
            if let Some(prev) = runlog::load_state(&self.out, stage)? {
                if prev.input_digest == input_digest && runlog::outputs_intact(&self.out, &prev) {
                    log::info!("stage {stage}: inputs unchanged, skipping");
                    return Ok(StageSummary {
                        status: StageStatus::Skipped,
                        started_at,
                        finished_at: chrono::Utc::now(),
                        ..prev
                    });
                }
            }
        }
        let work = body()?;
        let summary = StageSummary {
            stage,
            status: StageStatus::Ran,
            started_at,
            finished_at: chrono::Utc::now(),
            config_digest,
            input_digest,
            seeds,
            counts: work.counts,
            outputs: runlog::digest_outputs(&self.out, &work.outputs)?,
        };
        runlog::save_state(&self.out, &summary)?;
        Ok(summary)
    }

    fn uncached(
        &self,
        stage: Stage,
        config_digest: String,
        seeds: BTreeMap<String, u64>,
        started_at: chrono::DateTime<chrono::Utc>,
        work: Work,
    ) -> Result<StageSummary, PipelineError> {
        Ok(StageSummary {
            stage,
            status: StageStatus::Ran,
            started_at,
            finished_at: chrono::Utc::now(),
            config_digest,
            input_digest: String::new(),
            seeds,
            counts: work.counts,
            outputs: runlog::digest_outputs(&self.out, &work.outputs)?,
        })
    }

    fn ingest(&self) -> Result<StageSummary, PipelineError> {
        let mut loaded = Vec::new();
        let mut inputs = Vec::new();
        for c in &self.config.corpus {
            let corpus = load_corpus(&c.root, &c.source).map_err(|e| PipelineError::Data(e.to_string()))?;
            let lexicon = self.config.lexicon(c)?;
            let raw_digest = sha256_hex(&serde_json::to_vec(&corpus.reports).expect("serializable"));
            let lexicon_digest = match &c.lexicon {
                Some(p) => crate::fsutil::file_digest(p).map_err(|e| PipelineError::io(p, e))?,
                None => "builtin".to_string(),
            };
            inputs.push(json!({
                "source": c.source,
                "reports": raw_digest,
                "skipped": corpus.skipped,
                "lexicon": lexicon_digest,
            }));
            loaded.push((c, corpus, lexicon));
        }
        let config_digest = digest_of(&self.config.corpus);
        self.cached(Stage::Ingest, config_digest, &Value::Array(inputs), BTreeMap::new(), || {
            let mut counts = serde_json::Map::new();
            let mut outputs = Vec::new();
            for (c, corpus, lexicon) in &loaded {
                let parsed: Vec<ParsedReport> = corpus.reports.iter().map(|r| parse_report(r, lexicon)).collect();
                let path = self.path(&format!("parsed/{}.jsonl", c.source));
                write_jsonl(&path, &parsed)?;
                let mut skipped = String::from("path\treason\tdetail\n");
                for s in &corpus.skipped {
                    let reason = serde_json::to_value(s.reason).expect("serializable");
                    skipped.push_str(&format!(
                        "{}\t{}\t{}\n",
                        s.path.display(),
                        reason.as_str().unwrap_or_default(),
                        s.detail.replace(['\t', '\n'], " ")
                    ));
                }
                let skipped_path = self.path(&format!("parsed/{}.skipped.tsv", c.source));
                write_file(&skipped_path, skipped.as_bytes())?;
                counts.insert(
                    c.source.clone(),
                    json!({"reports": parsed.len(), "skipped": corpus.skip_count()}),
                );
                outputs.extend([path, skipped_path]);
            }
            Ok(Work {
                counts: Value::Object(counts),
                outputs,
            })
        })
    }

    fn preprocess(&self) -> Result<StageSummary, PipelineError> {
        let policy = self.config.filter.policy();
        let subs = self.config.substitutions()?;
        let mut inputs = Vec::new();
        let mut parsed_by_source = Vec::new();
        for c in &self.config.corpus {
            let path = self.path(&format!("parsed/{}.jsonl", c.source));
            let bytes = read_input(&path, Stage::Ingest)?;
            inputs.push(json!({"source": c.source, "parsed": sha256_hex(&bytes)}));
            parsed_by_source.push((c.source.as_str(), parse_jsonl::<ParsedReport>(&path, &bytes)?));
        }
        let config_digest = digest_of(&json!({"filter": self.config.filter, "substitutions": self.config.substitutions}));
        self.cached(Stage::Preprocess, config_digest, &Value::Array(inputs), BTreeMap::new(), || {
            let mut counts = serde_json::Map::new();
            let mut outputs = Vec::new();
            for (source, parsed) in &parsed_by_source {
                let report = filter_corpus(parsed, &policy, &subs);
                let pairs_path = self.path(&format!("pairs/{source}.jsonl"));
                write_jsonl(&pairs_path, &report.pairs)?;
                let mut tsv = String::from("report_id\treason\n");
                for e in &report.exclusions {
                    tsv.push_str(&format!("{}\t{}\n", e.report_id, e.reason));
                }
                let excl_path = self.path(&format!("exclusions/{source}.tsv"));
                write_file(&excl_path, tsv.as_bytes())?;
                counts.insert(
                    source.to_string(),
                    json!({
                        "total": report.summary.total,
                        "eligible": report.summary.eligible,
                        "excluded": report.summary.excluded(),
                        "missing_section": report.summary.missing_section,
                        "findings_too_short": report.summary.findings_too_short,
                        "impression_too_short": report.summary.impression_too_short,
                    }),
                );
                outputs.extend([pairs_path, excl_path]);
            }
            Ok(Work {
                counts: Value::Object(counts),
                outputs,
            })
        })
    }

    fn split(&self) -> Result<StageSummary, PipelineError> {
        let mut inputs = Vec::new();
        let mut jobs = Vec::new();
        let mut seeds = BTreeMap::new();
        for c in &self.config.corpus {
            let pairs = self.read_pairs(&c.source)?;
            let split_text = match &c.split {
                SplitConfig::Official { file } => {
                    Some(fs::read_to_string(file).map_err(|e| PipelineError::io(file, e))?)
                }
                SplitConfig::Ratio { seed, .. } => {
                    seeds.insert(format!("split.{}", c.source), *seed);
                    None
                }
            };
            inputs.push(json!({
                "source": c.source,
                "pairs": digest_of(&pairs),
                "split_file": split_text.as_deref().map(|t| sha256_hex(t.as_bytes())),
            }));
            jobs.push((c, pairs, split_text));
        }
        let config_digest = digest_of(&self.config.corpus.iter().map(|c| &c.split).collect::<Vec<_>>());
        self.cached(Stage::Split, config_digest, &Value::Array(inputs), seeds, || {
            let mut counts = serde_json::Map::new();
            let mut outputs = Vec::new();
            for (c, pairs, split_text) in &jobs {
                let data = |e: crate::split::SplitError| PipelineError::Data(format!("{}: {e}", c.source));
                let (assignment, unmapped) = match (&c.split, split_text) {
                    (SplitConfig::Official { .. }, Some(text)) => {
                        let official = apply_official_split_text(pairs, text).map_err(data)?;
                        (official.assignment, Some(official.unmapped))
                    }
                    _ => (random_split(pairs, &c.split.spec().expect("ratio mode")).map_err(data)?, None),
                };
                let path = self.path(&format!("splits/{}.tsv", c.source));
                write_file(&path, assignment.to_tsv(c.split.spec().as_ref()).as_bytes())?;
                outputs.push(path);
                let [train, val, test] = assignment.sizes();
                let mut entry = json!({"train": train, "val": val, "test": test});
                if let Some(unmapped) = unmapped {
                    entry["unmapped"] = json!(unmapped.len());
                    let path = self.path(&format!("splits/{}.unmapped.txt", c.source));
                    let mut text = unmapped.join("\n");
                    if !text.is_empty() {
                        text.push('\n');
                    }
                    write_file(&path, text.as_bytes())?;
                    outputs.push(path);
                }
                counts.insert(c.source.clone(), entry);
            }
            Ok(Work {
                counts: Value::Object(counts),
                outputs,
            })
        })
    }

    fn build_dataset(&self) -> Result<StageSummary, PipelineError> {
        let template = self.config.template()?;
        let mut pairs = Vec::new();
        let mut assignment = SplitAssignment::default();
        let mut inputs = Vec::new();
        for source in self.config.dataset_sources() {
            let source_pairs = self.read_pairs(source)?;
            let source_split = self.read_split(source)?;
            inputs.push(json!({"source": source, "pairs": digest_of(&source_pairs), "split": digest_of(&source_split)}));
            for (id, split) in source_split.iter() {
                assignment.insert(id, split);
            }
            pairs.extend(source_pairs);
        }
        let config_digest = digest_of(&self.config.dataset);
        self.cached(Stage::BuildDataset, config_digest, &Value::Array(inputs), BTreeMap::new(), || {
            let (assigned, unassigned): (Vec<ReportPair>, Vec<ReportPair>) =
                pairs.into_iter().partition(|p| assignment.get(&p.report_id).is_some());
            let records = build_records(&assigned, &assignment, &template).map_err(|e| PipelineError::Data(e.to_string()))?;
            let mut outputs = Vec::new();
            for split in Split::ALL {
                let path = self.path(&format!("dataset/{split}.jsonl"));
                write_file(&path, &serialize_records(records.get(split)))?;
                outputs.push(path);
            }
            let manifest_path = self.path("dataset/manifest.txt");
            emit_manifest(&self.config.dataset.manifest, &manifest_path)
                .map_err(|e| PipelineError::io(&manifest_path, e))?;
            outputs.push(manifest_path);
            let [train, val, test] = records.counts();
            Ok(Work {
                counts: json!({
                    "train": train,
                    "val": val,
                    "test": test,
                    "unassigned": unassigned.len(),
                    "template_id": template.template_id,
                }),
                outputs,
            })
        })
    }

    /// Test-split pairs for every corpus, keyed by source.
    pub fn test_pairs(&self) -> Result<BTreeMap<String, Vec<ReportPair>>, PipelineError> {
        let mut out = BTreeMap::new();
        for c in &self.config.corpus {
            let split = self.read_split(&c.source)?;
            let pairs: Vec<ReportPair> = self
                .read_pairs(&c.source)?
                .into_iter()
                .filter(|p| split.get(&p.report_id) == Some(Split::Test))
                .collect();
            out.insert(c.source.clone(), pairs);
        }
        Ok(out)
    }

    fn generate(&self) -> Result<StageSummary, PipelineError> {
        let started_at = chrono::Utc::now();
        if self.config.generation.is_empty() {
            return Err(PipelineError::Config("generate needs at least one [[generation]] entry".into()));
        }
        let test_pairs = self.test_pairs()?;
        let mut seeds = BTreeMap::new();
        let pairs: Vec<ReportPair> = match self.config.generate.subset {
            GenerateSubset::Test => test_pairs.into_values().flatten().collect(),
            GenerateSubset::StudySample => {
                seeds.insert("study".to_string(), self.config.study.seed);
                let ids: BTreeMap<String, Vec<String>> = test_pairs
                    .iter()
                    .map(|(s, ps)| (s.clone(), ps.iter().map(|p| p.report_id.clone()).collect()))
                    .collect();
                let sampled = sample_report_ids(&ids, self.config.study.n_per_source, self.config.study.seed)
                    .map_err(|e| PipelineError::Data(e.to_string()))?;
                test_pairs
                    .into_iter()
                    .flat_map(|(source, ps)| {
                        let keep = sampled[&source].clone();
                        ps.into_iter().filter(move |p| keep.contains(&p.report_id))
                    })
                    .collect()
            }
        };

        let ledger_path = self.path("generations/ledger.jsonl");
        let has_entries = fs::metadata(&ledger_path).map(|m| m.len() > 0).unwrap_or(false);
        if has_entries && !self.options.resume {
            return Err(PipelineError::Config(format!(
                "{} already holds results; pass --resume to continue it or remove it to start over",
                ledger_path.display()
            )));
        }
        let template = self.config.template()?;
        let gateway = Gateway::from_configs(&self.config.generation, template).map_err(gateway_error)?;
        let mut ledger = ResultsLedger::open(&ledger_path).map_err(|e| PipelineError::io(&ledger_path, e))?;
        let outcome = gateway
            .batch_generate(
                &pairs,
                &mut ledger,
                &BatchOptions {
                    workers: self.config.generate.workers,
                },
            )
            .map_err(gateway_error)?;
        let work = Work {
            counts: json!({
                "reports": pairs.len(),
                "models": self.config.generation.len(),
                "cells": outcome.results.len(),
                "generated": outcome.generated,
                "resumed": outcome.resumed,
                "empty": outcome.empty,
            }),
            outputs: vec![ledger_path],
        };
        self.uncached(Stage::Generate, digest_of(&self.config.generation), seeds, started_at, work)
    }

    fn study_request(&self) -> Result<CreateStudyRequest, PipelineError> {
        let study = &self.config.study;
        if study.rater_ids.is_empty() {
            return Err(PipelineError::Config("study.rater_ids must list at least one rater".into()));
        }
        if self.config.generation.is_empty() {
            return Err(PipelineError::Config("study-create needs the [[generation]] model labels".into()));
        }
        let ledger_path = self.path("generations/ledger.jsonl");
        let generations = read_input(&ledger_path, Stage::Generate)
            .and_then(|_| read_ledger(&ledger_path).map_err(|e| PipelineError::io(&ledger_path, e)))?;
        Ok(CreateStudyRequest {
            pairs_by_source: self.test_pairs()?,
            n_per_source: study.n_per_source,
            generations,
            model_labels: self.config.generation.iter().map(|g| g.model_label.clone()).collect(),
            rater_ids: study.rater_ids.clone(),
            seed: study.seed,
            include_reference: study.include_reference,
        })
    }

    fn study_create(&self) -> Result<StageSummary, PipelineError> {
        let request = self.study_request()?;
        let seeds = BTreeMap::from([("study".to_string(), request.seed)]);
        let inputs = json!({"request": digest_of(&request)});
        let mut study_cfg = serde_json::to_value(&self.config.study).expect("serializable");
        study_cfg["model_labels"] = json!(request.model_labels);
        self.cached(Stage::StudyCreate, digest_of(&study_cfg), &inputs, seeds, || {
            let ttl = chrono::Duration::hours(self.config.study.token_ttl_hours as i64);
            let (record, tokens) = match &self.config.study.service_url {
                Some(url) => remote::create_study(url, &self.admin_key()?, &request)?,
                None => {
                    let dir = self.path(STUDY_STORE_DIR);
                    let mut store = StudyStore::open(&dir, ttl)?;
                    let (study, tokens) = store.create_study(&request).map_err(study_create_error)?;
                    let def = study.definition();
                    let record = StudyRecord {
                        study_id: def.study_id.clone(),
                        store_dir: Some(dir.clone()),
                        service_url: None,
                        n_items: def.items.len(),
                        sampled_report_ids: def.sampled_report_ids.clone(),
                        model_labels: def.model_labels.clone(),
                        rater_ids: def.rater_ids.clone(),
                        seed: def.sample_seed,
                    };
                    let tokens = tokens
                        .into_iter()
                        .map(|t| (t.rater_id, t.token, t.expires_at.to_rfc3339()))
                        .collect();
                    (record, tokens)
                }
            };
            let record_path = self.path("study/study.json");
            write_file(&record_path, &serde_json::to_vec_pretty(&record).expect("serializable"))?;
            let mut tsv = String::from("rater_id\ttoken\texpires_at\n");
            for (rater, token, expires) in &tokens {
                tsv.push_str(&format!("{rater}\t{token}\t{expires}\n"));
            }
            let tokens_path = self.path("study/tokens.tsv");
            write_file(&tokens_path, tsv.as_bytes())?;
            Ok(Work {
                counts: json!({
                    "study_id": record.study_id,
                    "reports": record.sampled_report_ids.len(),
                    "items": record.n_items,
                    "raters": record.rater_ids.len(),
                }),
                outputs: vec![record_path, tokens_path],
            })
        })
    }

    pub fn study_record(&self) -> Result<StudyRecord, PipelineError> {
        let path = self.path("study/study.json");
        let bytes = read_input(&path, Stage::StudyCreate)?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::io(&path, e))
    }

    fn study_results(&self) -> Result<StageSummary, PipelineError> {
        let started_at = chrono::Utc::now();
        let record = self.study_record()?;
        let force = self.options.force;
        let result: EvaluationResult = match (&record.store_dir, &record.service_url) {
            (Some(dir), _) => crate::eval::aggregate_results(&read_study(dir, &record.study_id)?, force)
                .map_err(|e| PipelineError::from(StoreError::from(e)))?,
            (None, Some(url)) => remote::results(url, &self.admin_key()?, &record.study_id, force)?,
            (None, None) => return Err(PipelineError::Data("study.json names neither a store nor a service".into())),
        };
        let summary_path = self.path("results/summary.csv");
        write_file(&summary_path, summary_csv(&result).as_bytes())?;
        let long_path = self.path("results/per_report.csv");
        write_file(&long_path, long_csv(&result).as_bytes())?;
        let work = Work {
            counts: json!({
                "study_id": record.study_id,
                "complete": result.complete,
                "missing": result.missing.len(),
                "observations": result.observations.len(),
            }),
            outputs: vec![summary_path, long_path],
        };
        self.uncached(
            Stage::StudyResults,
            digest_of(&json!({"force": force})),
            BTreeMap::from([("study".to_string(), record.seed)]),
            started_at,
            work,
        )
    }

    fn admin_key(&self) -> Result<String, PipelineError> {
        let var = &self.config.study.admin_key_env;
        std::env::var(var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| PipelineError::Config(format!("environment variable {var} must hold the service admin key")))
    }

    fn read_pairs(&self, source: &str) -> Result<Vec<ReportPair>, PipelineError> {
        let path = self.path(&format!("pairs/{source}.jsonl"));
        let bytes = read_input(&path, Stage::Preprocess)?;
        parse_jsonl(&path, &bytes)
    }

    fn read_split(&self, source: &str) -> Result<SplitAssignment, PipelineError> {
        let path = self.path(&format!("splits/{source}.tsv"));
        let bytes = read_input(&path, Stage::Split)?;
        SplitAssignment::from_tsv(&String::from_utf8_lossy(&bytes)).map_err(|e| PipelineError::io(&path, e))
    }
}

fn study_create_error(err: StoreError) -> PipelineError {
    PipelineError::Data(format!("study-create: {err}"))
}

fn gateway_error(err: GatewayError) -> PipelineError {
    match err {
        GatewayError::Config(_) | GatewayError::DuplicateLabel(_) | GatewayError::UnknownLabel(_) => {
            PipelineError::Config(err.to_string())
        }
        GatewayError::Generation { ref source, .. } => match source {
            GenerateError::BackendUnavailable { .. } | GenerateError::BackendRejected { .. } => {
                PipelineError::Backend(err.to_string())
            }
            GenerateError::Config(_) => PipelineError::Config(err.to_string()),
            GenerateError::EmptyGeneration(_) => PipelineError::Data(err.to_string()),
        },
        other => PipelineError::Data(other.to_string()),
    }
}

fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(&serde_json::to_vec(value).expect("serializable"))
}

fn read_input(path: &Path, producer: Stage) -> Result<Vec<u8>, PipelineError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            PipelineError::Data(format!("{} is missing; run the {producer} stage first", path.display()))
        } else {
            PipelineError::io(path, e)
        }
    })
}

fn parse_jsonl<T: DeserializeOwned>(path: &Path, bytes: &[u8]) -> Result<Vec<T>, PipelineError> {
    bytes
        .split(|b| *b == b'\n')
        .enumerate()
        .filter(|(_, line)| !line.iter().all(u8::is_ascii_whitespace))
        .map(|(i, line)| serde_json::from_slice(line).map_err(|e| PipelineError::io(path, format!("line {}: {e}", i + 1))))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serializable");
        buf.push(b'\n');
    }
    write_file(path, &buf)
}
