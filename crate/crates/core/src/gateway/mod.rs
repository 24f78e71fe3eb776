//! Prompt assembly and impression generation against completion backends.
//!
//! Every generation for a study goes through [`Gateway::batch_generate`],
//! which writes each finished (report, model) cell to a [`ResultsLedger`]
//! as soon as it completes. Re-running a batch against the same ledger only
//! calls backends for the cells still missing.

mod backend;
mod ledger;
mod prompt;

use std::collections::{HashMap, HashSet};
use std::io;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{BackendError, CompletionBackend, CompletionRequest, CompletionResponse, HttpBackend};
pub use ledger::{read_ledger, ResultsLedger};
pub use prompt::{assemble_prompt, prompt_hash, PromptStyle};

use crate::dataset::InstructionTemplate;
use crate::preprocess::ReportPair;

const MAX_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("duplicate model label {0:?}")]
    DuplicateLabel(String),
    #[error("unknown model label {0:?}")]
    UnknownLabel(String),
    #[error("report {0} appears more than once in the batch")]
    DuplicateReport(String),
    #[error("results ledger: {0}")]
    Ledger(String),
    #[error("report {report_id}: {source}")]
    Generation {
        report_id: String,
        #[source]
        source: GenerateError,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("backend for {model_label} unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable {
        model_label: String,
        attempts: u32,
        last_error: BackendError,
    },
    #[error("backend for {model_label} rejected the request: {error}")]
    BackendRejected { model_label: String, error: BackendError },
    #[error("backend for {} returned an empty generation", .0.model_label)]
    EmptyGeneration(Box<GeneratedImpression>),
    #[error("{0}")]
    Config(String),
}

impl From<GatewayError> for GenerateError {
    fn from(err: GatewayError) -> Self {
        GenerateError::Config(err.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Decoding {
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            max_new_tokens: 256,
            temperature: 0.0,
            seed: Some(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_initial_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_initial_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, doubling from `backoff_initial_ms`.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_initial_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_in_flight() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    /// Bookkeeping only; never shown to raters.
    pub model_label: String,
    pub endpoint: String,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub prompt_style: PromptStyle,
    /// Concurrent requests allowed against this endpoint.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl GenerationConfig {
    pub fn new(model_label: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            model_label: model_label.into(),
            endpoint: endpoint.into(),
            decoding: Decoding::default(),
            retry: RetryPolicy::default(),
            timeout_ms: default_timeout_ms(),
            prompt_style: PromptStyle::Default,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::Config(m));
        if self.model_label.trim().is_empty() {
            return bad("model_label must not be empty".into());
        }
        if self.decoding.max_new_tokens < 1 {
            return bad(format!("{}: max_new_tokens must be >= 1", self.model_label));
        }
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            return bad(format!("{}: temperature must be >= 0", self.model_label));
        }
        if self.retry.max_attempts < 1 {
            return bad(format!("{}: max_attempts must be >= 1", self.model_label));
        }
        if self.timeout_ms == 0 {
            return bad(format!("{}: timeout_ms must be positive", self.model_label));
        }
        if self.max_in_flight == 0 {
            return bad(format!("{}: max_in_flight must be >= 1", self.model_label));
        }
        Ok(())
    }

    fn request(&self, prompt: String) -> CompletionRequest {
        CompletionRequest {
            prompt,
            max_new_tokens: self.decoding.max_new_tokens,
            temperature: self.decoding.temperature,
            seed: self.decoding.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedImpression {
    pub report_id: String,
    pub model_label: String,
    pub text: String,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
    pub prompt_hash: String,
    #[serde(default)]
    pub empty_generation: bool,
}

/// One generation with retry and exponential backoff on retryable failures.
pub fn generate_impression(
    report_id: &str,
    findings: &str,
    config: &GenerationConfig,
    template: &InstructionTemplate,
    backend: &dyn CompletionBackend,
) -> Result<GeneratedImpression, GenerateError> {
    config.validate()?;
    let prompt = assemble_prompt(&template.instruction_text, findings, config.prompt_style)?;
    let prompt_hash = prompt_hash(&prompt);
    let request = config.request(prompt);

    let mut attempt = 0;
    loop {
        attempt += 1;
        let started = Instant::now();
        match backend.complete(&request) {
            Ok(text) => {
                let text = text.trim().to_string();
                let result = GeneratedImpression {
                    report_id: report_id.to_string(),
                    model_label: config.model_label.clone(),
                    empty_generation: text.is_empty(),
                    text,
                    latency_ms: started.elapsed().as_millis() as u64,
                    created_at: Utc::now(),
                    prompt_hash,
                };
                return if result.empty_generation {
                    Err(GenerateError::EmptyGeneration(Box::new(result)))
                } else {
                    Ok(result)
                };
            }
            Err(err) if !err.is_retryable() => {
                return Err(GenerateError::BackendRejected {
                    model_label: config.model_label.clone(),
                    error: err,
                })
            }
            Err(err) if attempt >= config.retry.max_attempts => {
                return Err(GenerateError::BackendUnavailable {
                    model_label: config.model_label.clone(),
                    attempts: attempt,
                    last_error: err,
                })
            }
            Err(err) => {
                log::debug!("{}: attempt {attempt} failed: {err}", config.model_label);
                std::thread::sleep(config.retry.delay_after(attempt));
            }
        }
    }
}

struct Model {
    config: GenerationConfig,
    backend: Arc<dyn CompletionBackend>,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Worker threads; per-endpoint limits still apply.
    pub workers: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { workers: 1 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// Every cell of the batch, in (pair, model) order.
    pub results: Vec<GeneratedImpression>,
    pub generated: usize,
    pub resumed: usize,
    pub empty: usize,
}

/// A set of uniquely-labelled models sharing one instruction template.
pub struct Gateway {
    template: InstructionTemplate,
    models: Vec<Model>,
}

impl Gateway {
    pub fn new(template: InstructionTemplate) -> Self {
        Self {
            template,
            models: Vec::new(),
        }
    }

    /// HTTP backends for every config. Fails on the first invalid or duplicate label.
    pub fn from_configs(
        configs: &[GenerationConfig],
        template: InstructionTemplate,
    ) -> Result<Self, GatewayError> {
        check_unique_labels(configs)?;
        let mut gateway = Self::new(template);
        for config in configs {
            let backend = HttpBackend::new(&config.endpoint, Duration::from_millis(config.timeout_ms))
                .map_err(|e| GatewayError::Config(e.to_string()))?;
            gateway.add_backend(config.clone(), Arc::new(backend))?;
        }
        Ok(gateway)
    }

    pub fn add_backend(
        &mut self,
        config: GenerationConfig,
        backend: Arc<dyn CompletionBackend>,
    ) -> Result<(), GatewayError> {
        config.validate()?;
        if self.models.iter().any(|m| m.config.model_label == config.model_label) {
            return Err(GatewayError::DuplicateLabel(config.model_label));
        }
        self.models.push(Model { config, backend });
        Ok(())
    }

    pub fn template(&self) -> &InstructionTemplate {
        &self.template
    }

    pub fn model_labels(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.config.model_label.as_str()).collect()
    }

    pub fn config(&self, model_label: &str) -> Option<&GenerationConfig> {
        self.models
            .iter()
            .find(|m| m.config.model_label == model_label)
            .map(|m| &m.config)
    }

    pub fn generate(
        &self,
        report_id: &str,
        findings: &str,
        model_label: &str,
    ) -> Result<GeneratedImpression, GenerateError> {
        let model = self
            .models
            .iter()
            .find(|m| m.config.model_label == model_label)
            .ok_or_else(|| GatewayError::UnknownLabel(model_label.to_string()))?;
        generate_impression(report_id, findings, &model.config, &self.template, model.backend.as_ref())
    }

    /// Generates every missing (pair, model) cell, appending each result to
    /// `ledger` as it lands. Empty generations are stored with
    /// `empty_generation` set. The first unavailable or rejecting backend
    /// stops the batch; finished cells stay in the ledger.
    pub fn batch_generate(
        &self,
        pairs: &[ReportPair],
        ledger: &mut ResultsLedger,
        options: &BatchOptions,
    ) -> Result<BatchOutcome, GatewayError> {
        let mut seen = HashSet::new();
        for pair in pairs {
            if !seen.insert(pair.report_id.as_str()) {
                return Err(GatewayError::DuplicateReport(pair.report_id.clone()));
            }
        }

        let mut todo = Vec::new();
        let mut resumed = 0;
        for pair in pairs {
            for (m, model) in self.models.iter().enumerate() {
                if ledger.contains(&pair.report_id, &model.config.model_label) {
                    resumed += 1;
                } else {
                    todo.push((pair, m));
                }
            }
        }

        let mut limits: HashMap<&str, Arc<Semaphore>> = HashMap::new();
        for model in &self.models {
            let cap = self
                .models
                .iter()
                .filter(|o| o.config.endpoint == model.config.endpoint)
                .map(|o| o.config.max_in_flight)
                .min()
                .unwrap_or(1);
            limits
                .entry(model.config.endpoint.as_str())
                .or_insert_with(|| Arc::new(Semaphore::new(cap)));
        }

        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let failure: Mutex<Option<GatewayError>> = Mutex::new(None);
        let stats = Mutex::new((0usize, 0usize));
        let shared_ledger = Mutex::new(ledger);
        let workers = options.workers.max(1).min(todo.len().max(1));

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&(pair, m)) = todo.get(i) else {
                        return;
                    };
                    let model = &self.models[m];
                    let outcome = {
                        let _permit = limits[model.config.endpoint.as_str()].acquire();
                        generate_impression(
                            &pair.report_id,
                            &pair.findings,
                            &model.config,
                            &self.template,
                            model.backend.as_ref(),
                        )
                    };
                    let (entry, empty) = match outcome {
                        Ok(entry) => (entry, false),
                        Err(GenerateError::EmptyGeneration(entry)) => (*entry, true),
                        Err(source) => {
                            abort.store(true, Ordering::SeqCst);
                            failure.lock().unwrap().get_or_insert(GatewayError::Generation {
                                report_id: pair.report_id.clone(),
                                source,
                            });
                            return;
                        }
                    };
                    let appended = shared_ledger.lock().unwrap().append(entry);
                    match appended {
                        Ok(true) => {
                            let mut s = stats.lock().unwrap();
                            s.0 += 1;
                            s.1 += empty as usize;
                        }
                        Ok(false) => {}
                        Err(e) => {
                            abort.store(true, Ordering::SeqCst);
                            failure.lock().unwrap().get_or_insert(e);
                            return;
                        }
                    }
                });
            }
        });

        if let Some(err) = failure.into_inner().unwrap() {
            return Err(err);
        }
        let ledger = shared_ledger.into_inner().unwrap();
        let (generated, new_empty) = stats.into_inner().unwrap();
        let mut results = Vec::with_capacity(pairs.len() * self.models.len());
        for pair in pairs {
            for model in &self.models {
                if let Some(entry) = ledger.get(&pair.report_id, &model.config.model_label) {
                    results.push(entry.clone());
                }
            }
        }
        let empty = results.iter().filter(|r| r.empty_generation).count();
        debug_assert!(empty >= new_empty);
        Ok(BatchOutcome {
            results,
            generated,
            resumed,
            empty,
        })
    }
}

/// Convenience wrapper: HTTP backends for `configs`, then [`Gateway::batch_generate`].
pub fn batch_generate(
    pairs: &[ReportPair],
    configs: &[GenerationConfig],
    template: &InstructionTemplate,
    ledger: &mut ResultsLedger,
    options: &BatchOptions,
) -> Result<BatchOutcome, GatewayError> {
    Gateway::from_configs(configs, template.clone())?.batch_generate(pairs, ledger, options)
}

pub fn check_unique_labels(configs: &[GenerationConfig]) -> Result<(), GatewayError> {
    let mut seen = HashSet::new();
    for config in configs {
        if !seen.insert(config.model_label.as_str()) {
            return Err(GatewayError::DuplicateLabel(config.model_label.clone()));
        }
    }
    Ok(())
}

struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.freed.wait(permits).unwrap();
        }
        *permits -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.freed.notify_one();
    }
}
