//! The run configuration: one TOML file drives every stage.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use halprobe::corpus::{CorpusFormat, FilterConfig};
use halprobe::evaluator::{EndpointConfig, MockModelConfig};
use halprobe::judge::ReportFormat;
use halprobe::manifest::DEFAULT_TEXT_TEMPLATE;
use halprobe::search::{RunMode, Strategy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Where stage files go. Not part of the digest.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    #[serde(default)]
    pub filters: FilterSection,
    /// Embedding bundle directory; needed by every strategy except
    /// co-occurrence and random.
    #[serde(default)]
    pub bundle: Option<PathBuf>,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub qa: QaSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub report: ReportSection,
    #[serde(default)]
    pub export: ExportSection,
}

fn default_seed() -> u64 {
    halprobe::seeding::DEFAULT_SEED
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    /// Review decisions for description candidates.
    #[serde(default)]
    pub reviews: Option<PathBuf>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Canonical
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterPreset {
    #[default]
    None,
    VisualGenome,
    OpenImages,
}

/// A preset, optionally with individual thresholds overridden.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default)]
    pub preset: FilterPreset,
    pub min_object_frequency: Option<u64>,
    pub min_descriptions_per_object: Option<u64>,
    pub min_objects_per_image: Option<u64>,
}

impl FilterSection {
    pub fn resolve(&self) -> FilterConfig {
        let base = match self.preset {
            FilterPreset::None => FilterConfig::NONE,
            FilterPreset::VisualGenome => FilterConfig::VISUAL_GENOME,
            FilterPreset::OpenImages => FilterConfig::OPEN_IMAGES,
        };
        FilterConfig {
            min_object_frequency: self
                .min_object_frequency
                .unwrap_or(base.min_object_frequency),
            min_descriptions_per_object: self
                .min_descriptions_per_object
                .unwrap_or(base.min_descriptions_per_object),
            min_objects_per_image: self
                .min_objects_per_image
                .unwrap_or(base.min_objects_per_image),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Distractors per image; defaults to 6, or 3 for the description strategy.
    #[serde(default)]
    pub k: Option<usize>,
    /// Positives sampled per image; same defaults as `k`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub mode: RunMode,
}

fn default_strategies() -> Vec<Strategy> {
    vec![
        Strategy::Cooccurrence,
        Strategy::Similarity,
        Strategy::ContentAware,
        Strategy::All,
    ]
}

fn default_gamma() -> f64 {
    1.0
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            strategies: default_strategies(),
            k: None,
            m: None,
            gamma: default_gamma(),
            mode: RunMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaSection {
    #[serde(default = "default_templates")]
    pub templates: Vec<String>,
    /// Extra templates; the two defaults are always available.
    #[serde(default)]
    pub registry: Option<PathBuf>,
}

fn default_templates() -> Vec<String> {
    vec!["binary".into(), "multi_option".into()]
}

impl Default for QaSection {
    fn default() -> Self {
        QaSection {
            templates: default_templates(),
            registry: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub endpoint: Option<EndpointConfig>,
    #[serde(default)]
    pub mock: Option<MockModelConfig>,
    /// Response cache directory. Not part of the digest.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

fn default_formats() -> Vec<ReportFormat> {
    vec![
        ReportFormat::Table,
        ReportFormat::Csv,
        ReportFormat::Markdown,
    ]
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    #[serde(default = "default_checkpoint")]
    pub checkpoint: String,
    #[serde(default = "default_text_template")]
    pub text_template: String,
}

fn default_checkpoint() -> String {
    "openai/clip-vit-base-patch32".into()
}

fn default_text_template() -> String {
    DEFAULT_TEXT_TEMPLATE.into()
}

impl Default for ExportSection {
    fn default() -> Self {
        ExportSection {
            checkpoint: default_checkpoint(),
            text_template: default_text_template(),
        }
    }
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub stage_out: Option<PathBuf>,
    pub strategy: Option<Strategy>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
    pub mock: bool,
    pub verified_only: bool,
}

/// A loaded config with paths resolved against the config file's directory.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub digest: String,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid run config")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(dir) = &o.stage_out {
            self.output_dir = dir.clone();
        }
        if let Some(s) = o.strategy {
            self.search.strategies = vec![s];
        }
        if let Some(g) = o.gamma {
            self.search.gamma = g;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.mock {
            self.model.endpoint = None;
            self.model.mock.get_or_insert_with(MockModelConfig::default);
        }
        if o.verified_only {
            self.search.mode = RunMode::VerifiedOnly;
        }
    }

    /// SHA-256 of the canonical JSON form, leaving out where outputs and
    /// caches live since neither changes any output.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.model.cache_dir = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.path);
        for p in [
            &mut self.corpus.reviews,
            &mut self.bundle,
            &mut self.qa.registry,
            &mut self.model.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |what: &str, p: &Path| {
            if !p.exists() {
                bail!("{what} {} does not exist", p.display());
            }
            Ok(())
        };
        must_exist("corpus", &self.corpus.path)?;
        if let Some(p) = &self.corpus.reviews {
            must_exist("reviews file", p)?;
        }
        if let Some(p) = &self.bundle {
            must_exist("bundle directory", p)?;
        }
        if let Some(p) = &self.qa.registry {
            must_exist("template registry", p)?;
        }
        if self.search.strategies.is_empty() {
            bail!("search.strategies is empty");
        }
        if !(self.search.gamma > 0.0 && self.search.gamma <= 1.0) {
            bail!("search.gamma must be in (0, 1], got {}", self.search.gamma);
        }
        if self.qa.templates.is_empty() {
            bail!("qa.templates is empty");
        }
        if let Some(m) = &self.model.mock {
            m.validate()?;
        }
        if let Some(e) = &self.model.endpoint {
            e.validate()?;
        }
        Ok(())
    }

    /// Reads, applies overrides, digests, then resolves relative paths.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = Self::parse(&text)?;
        let stage_out = overrides.stage_out.clone();
        config.apply(&Overrides {
            stage_out: None,
            ..overrides.clone()
        });
        let digest = config.digest();
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.resolve_paths(&base);
        if let Some(dir) = stage_out {
            // taken relative to the working directory, like any CLI path
            config.output_dir = dir;
        }
        config.validate()?;
        Ok(Loaded { config, digest })
    }
}
