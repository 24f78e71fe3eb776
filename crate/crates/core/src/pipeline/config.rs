use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::Lexicon;
use crate::dataset::{InstructionTemplate, TrainingManifest, DEFAULT_TEMPLATE_ID};
use crate::gateway::{check_unique_labels, GenerationConfig};
use crate::preprocess::{FilterPolicy, SectionRemoval, Substitutions};
use crate::split::{Ratio, SplitSpec};

/// Whole-run configuration, read from one TOML file.
///
/// Relative paths are resolved against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub corpus: Vec<CorpusConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Whole-token replacements applied during normalization.
    #[serde(default)]
    pub substitutions: BTreeMap<String, String>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub generation: Vec<GenerationConfig>,
    #[serde(default)]
    pub generate: GenerateConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub source: String,
    pub root: PathBuf,
    /// Header lexicon file replacing the built-in one.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    pub split: SplitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitConfig {
    Ratio { ratio: [u64; 3], seed: u64 },
    Official { file: PathBuf },
}

impl SplitConfig {
    pub fn spec(&self) -> Option<SplitSpec> {
        match self {
            SplitConfig::Ratio { ratio, seed } => {
                Some(SplitSpec::ratio(Ratio::new(ratio[0], ratio[1], ratio[2]), *seed))
            }
            SplitConfig::Official { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_min_findings")]
    pub min_findings_words: usize,
    #[serde(default = "default_min_impression")]
    pub min_impression_words: usize,
    /// Section labels to drop. Absent means every section but findings and impression.
    #[serde(default)]
    pub sections_to_remove: Option<BTreeSet<String>>,
}

fn default_min_findings() -> usize {
    10
}

fn default_min_impression() -> usize {
    2
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_findings_words: default_min_findings(),
            min_impression_words: default_min_impression(),
            sections_to_remove: None,
        }
    }
}

impl FilterConfig {
    pub fn policy(&self) -> FilterPolicy {
        FilterPolicy {
            min_findings_words: self.min_findings_words,
            min_impression_words: self.min_impression_words,
            sections_to_remove: match &self.sections_to_remove {
                None => SectionRemoval::AllButTargets,
                Some(labels) => SectionRemoval::Labels(labels.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_template_id")]
    pub template_id: String,
    /// Sources whose pairs go into the dataset. Absent means all.
    #[serde(default)]
    pub sources: Option<Vec<String>>,
    #[serde(default)]
    pub manifest: TrainingManifest,
}

fn default_template_id() -> String {
    DEFAULT_TEMPLATE_ID.to_string()
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            template_id: default_template_id(),
            sources: None,
            manifest: TrainingManifest::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenerateSubset {
    /// Only the reports the study will sample.
    #[default]
    StudySample,
    /// Every test-split report.
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default)]
    pub subset: GenerateSubset,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_workers() -> usize {
    4
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            subset: GenerateSubset::default(),
            workers: default_workers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_n_per_source")]
    pub n_per_source: usize,
    #[serde(default)]
    pub rater_ids: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub include_reference: bool,
    /// Create the study on a running service instead of a local store.
    #[serde(default)]
    pub service_url: Option<String>,
    #[serde(default = "default_admin_key_env")]
    pub admin_key_env: String,
    #[serde(default = "default_ttl_hours")]
    pub token_ttl_hours: u64,
}

fn default_n_per_source() -> usize {
    10
}

fn default_admin_key_env() -> String {
    "RADREPORT_ADMIN_KEY".to_string()
}

fn default_ttl_hours() -> u64 {
    24 * 30
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_per_source: default_n_per_source(),
            rater_ids: Vec::new(),
            seed: 0,
            include_reference: false,
            service_url: None,
            admin_key_env: default_admin_key_env(),
            token_ttl_hours: default_ttl_hours(),
        }
    }
}

impl PipelineConfig {
    /// Reads, resolves and validates `path`.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for c in &mut self.corpus {
            fix(&mut c.root);
            if let Some(l) = &mut c.lexicon {
                fix(l);
            }
            if let SplitConfig::Official { file } = &mut c.split {
                fix(file);
            }
        }
    }

    /// Replaces every seed (split and study) with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        for c in &mut self.corpus {
            if let SplitConfig::Ratio { seed: s, .. } = &mut c.split {
                *s = seed;
            }
        }
        self.study.seed = seed;
    }

    pub fn substitutions(&self) -> Result<Substitutions, PipelineError> {
        Substitutions::new(self.substitutions.iter()).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn template(&self) -> Result<InstructionTemplate, PipelineError> {
        InstructionTemplate::by_id(&self.dataset.template_id).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn lexicon(&self, corpus: &CorpusConfig) -> Result<Lexicon, PipelineError> {
        match &corpus.lexicon {
            None => Ok(Lexicon::default()),
            Some(path) => Lexicon::from_file(path).map_err(|e| PipelineError::Config(e.to_string())),
        }
    }

    /// Sources feeding the dataset, in config order.
    pub fn dataset_sources(&self) -> Vec<&str> {
        self.corpus
            .iter()
            .map(|c| c.source.as_str())
            .filter(|s| self.dataset.sources.as_ref().is_none_or(|list| list.iter().any(|x| x == s)))
            .collect()
    }

    /// Checks every section; nothing is run before this passes.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.corpus.is_empty() {
            return bad("at least one [[corpus]] is required".into());
        }
        let mut sources = HashSet::new();
        for c in &self.corpus {
            if c.source.is_empty() || !c.source.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_".contains(ch)) {
                return bad(format!("corpus source {:?} must be non-empty [A-Za-z0-9_-]", c.source));
            }
            if !sources.insert(c.source.as_str()) {
                return bad(format!("duplicate corpus source {:?}", c.source));
            }
            if let Some(spec) = c.split.spec() {
                if let Err(e) = spec.ratio.validate() {
                    return bad(format!("corpus {}: {e}", c.source));
                }
            }
            self.lexicon(c)?;
        }
        self.filter
            .policy()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.substitutions()?;
        self.template()?;
        if let Some(list) = &self.dataset.sources {
            for s in list {
                if !sources.contains(s.as_str()) {
                    return bad(format!("dataset.sources names unknown source {s:?}"));
                }
            }
        }
        self.dataset
            .manifest
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        check_unique_labels(&self.generation).map_err(|e| PipelineError::Config(e.to_string()))?;
        for g in &self.generation {
            g.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if self.generate.workers == 0 {
            return bad("generate.workers must be >= 1".into());
        }
        if self.study.n_per_source == 0 {
            return bad("study.n_per_source must be >= 1".into());
        }
        let mut raters = HashSet::new();
        for r in &self.study.rater_ids {
            if r.trim().is_empty() || !raters.insert(r) {
                return bad(format!("study.rater_ids: empty or duplicate id {r:?}"));
            }
        }
        Ok(())
    }
}
