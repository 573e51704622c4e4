//! QA items: rendered probes with ground truth, and their JSONL file format.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::prompt::{render_binary, render_multi_option, PromptTemplate, TemplateKind};
use crate::scorers::CandidateKind;
use crate::search::{DistractorSet, Strategy};
use crate::seeding;

pub const QA_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Positive,
    NegativeCategory,
    ObjectDescription,
}

impl From<CandidateKind> for ProbeKind {
    fn from(k: CandidateKind) -> Self {
        match k {
            CandidateKind::NegativeCategory => ProbeKind::NegativeCategory,
            CandidateKind::ObjectDescription => ProbeKind::ObjectDescription,
        }
    }
}

/// One object or phrase put to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeEntry {
    pub kind: ProbeKind,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// What appears in the prompt: the category name or the phrase.
    pub text: String,
    /// Search score for distractors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Probe {
    Single(ProbeEntry),
    /// In prompt order.
    Options(Vec<ProbeEntry>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Truth {
    Binary(YesNo),
    /// Candidates actually present in the image.
    Present(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub qa_id: String,
    pub image_id: String,
    pub image_uri: String,
    pub template_kind: TemplateKind,
    pub template_name: String,
    pub prompt: String,
    pub probe: Probe,
    pub truth: Truth,
    pub strategy: Strategy,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl QAItem {
    /// Candidate texts in prompt order, for multi-option items.
    pub fn candidate_order(&self) -> Vec<String> {
        match &self.probe {
            Probe::Options(o) => o.iter().map(|e| e.text.clone()).collect(),
            Probe::Single(e) => vec![e.text.clone()],
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("qa item {}: {m}", self.qa_id)));
        match (&self.probe, &self.truth) {
            (Probe::Single(e), Truth::Binary(t)) => {
                let expected = if e.kind == ProbeKind::Positive {
                    YesNo::Yes
                } else {
                    YesNo::No
                };
                if *t != expected {
                    return bad("binary truth disagrees with probe kind");
                }
            }
            (Probe::Options(opts), Truth::Present(present)) => {
                if present.is_empty() {
                    return bad("multi-option truth is empty");
                }
                let texts: HashSet<&str> = opts.iter().map(|o| o.text.as_str()).collect();
                if !present.iter().all(|p| texts.contains(p.as_str())) {
                    return bad("truth is not a subset of the candidates");
                }
            }
            _ => return bad("probe and truth shapes differ"),
        }
        Ok(())
    }
}

/// Run-level values copied into every item's metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QaContext {
    pub seed: u64,
    pub gamma: f64,
    pub source_tag: Option<String>,
    pub corpus_hash: String,
}

impl QaContext {
    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("seed".into(), self.seed.to_string());
        m.insert("gamma".into(), self.gamma.to_string());
        m.insert("corpus_hash".into(), self.corpus_hash.clone());
        if let Some(tag) = &self.source_tag {
            m.insert("bundle_source_tag".into(), tag.clone());
        }
        m
    }
}

/// Content hash of image, probe (scores excluded) and template; independent
/// of strategy so shared positive probes get the same id across runs.
pub fn qa_id(image_id: &str, probe: &Probe, template: &PromptTemplate) -> String {
    let strip = |e: &ProbeEntry| ProbeEntry {
        score: None,
        ..e.clone()
    };
    let probe = match probe {
        Probe::Single(e) => Probe::Single(strip(e)),
        Probe::Options(o) => Probe::Options(o.iter().map(strip).collect()),
    };
    let mut h = Sha256::new();
    for part in [
        image_id,
        &serde_json::to_string(&probe).expect("serializable"),
        template.kind.as_str(),
        &template.name,
        &template.pattern,
        &template.option_separator,
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// Binary templates yield one item per sampled positive and one per
/// distractor; multi-option templates yield one item per image listing both.
pub fn generate_qa(
    corpus: &Corpus,
    sets: &[DistractorSet],
    template: &PromptTemplate,
    context: &QaContext,
) -> Result<Vec<QAItem>> {
    template.validate()?;
    let space = &corpus.space;
    let metadata = context.metadata();
    let mut items = Vec::new();
    for set in sets {
        let record = corpus.record(&set.image_id).ok_or_else(|| {
            Error::Validation(format!(
                "distractor set references unknown image {}",
                set.image_id
            ))
        })?;
        let positives: Vec<ProbeEntry> = set
            .positives_used
            .iter()
            .map(|p| ProbeEntry {
                kind: ProbeKind::Positive,
                category: space.name(*p).to_string(),
                description: None,
                text: space.name(*p).to_string(),
                score: None,
            })
            .collect();
        let distractors: Vec<ProbeEntry> = set
            .distractors
            .iter()
            .map(|d| ProbeEntry {
                kind: d.candidate.kind.into(),
                category: space.name(d.candidate.category).to_string(),
                description: d.candidate.description.clone(),
                text: d.candidate.surface(space).to_string(),
                score: Some(d.score),
            })
            .collect();
        let make = |probe: Probe, prompt: String, truth: Truth| QAItem {
            qa_id: qa_id(&record.image_id, &probe, template),
            image_id: record.image_id.clone(),
            image_uri: record.image_uri.clone(),
            template_kind: template.kind,
            template_name: template.name.clone(),
            prompt,
            probe,
            truth,
            strategy: set.strategy,
            metadata: metadata.clone(),
        };
        match template.kind {
            TemplateKind::Binary => {
                for e in positives.into_iter().chain(distractors) {
                    let truth = if e.kind == ProbeKind::Positive {
                        YesNo::Yes
                    } else {
                        YesNo::No
                    };
                    let prompt = render_binary(template, &e.text)?;
                    items.push(make(Probe::Single(e), prompt, Truth::Binary(truth)));
                }
            }
            TemplateKind::MultiOption => {
                let truth: Vec<String> = positives.iter().map(|e| e.text.clone()).collect();
                let entries: Vec<ProbeEntry> = positives.into_iter().chain(distractors).collect();
                let mut seen = HashSet::new();
                for e in &entries {
                    if !seen.insert(e.text.as_str()) {
                        return Err(Error::Validation(format!(
                            "image {}: candidate '{}' listed twice",
                            record.image_id, e.text
                        )));
                    }
                }
                if entries.len() < 2 {
                    tracing::warn!(image_id = %record.image_id, "fewer than 2 candidates; skipped");
                    continue;
                }
                let texts: Vec<String> = entries.iter().map(|e| e.text.clone()).collect();
                let seed = seeding::sub_seed(
                    context.seed,
                    &["options", &record.image_id, set.strategy.as_str()],
                );
                let rendered = render_multi_option(template, &texts, seed)?;
                let mut by_text: BTreeMap<String, ProbeEntry> =
                    entries.into_iter().map(|e| (e.text.clone(), e)).collect();
                let ordered: Vec<ProbeEntry> = rendered
                    .order
                    .iter()
                    .map(|t| by_text.remove(t).expect("rendered from these entries"))
                    .collect();
                items.push(make(
                    Probe::Options(ordered),
                    rendered.prompt,
                    Truth::Present(truth),
                ));
            }
        }
    }
    let mut ids = HashSet::new();
    for item in &items {
        if !ids.insert(item.qa_id.as_str()) {
            return Err(Error::Validation(format!(
                "qa_id collision: {}",
                item.qa_id
            )));
        }
    }
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaHeader {
    pub schema_version: u64,
    pub run_config_digest: String,
}

impl QaHeader {
    pub fn new(run_config_digest: impl Into<String>) -> Self {
        QaHeader {
            schema_version: QA_SCHEMA_VERSION,
            run_config_digest: run_config_digest.into(),
        }
    }
}

pub fn render_qa(header: &QaHeader, items: &[QAItem]) -> String {
    let mut out = serde_json::to_string(header).expect("serializable");
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn parse_qa(text: &str) -> Result<(QaHeader, Vec<QAItem>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or(Error::EmptyInput("qa file has no header"))?;
    let version: serde_json::Value =
        serde_json::from_str(first).map_err(|e| Error::json("qa header", 1, &e))?;
    let found = version.get("schema_version").and_then(|v| v.as_u64());
    if found != Some(QA_SCHEMA_VERSION) {
        return Err(Error::SchemaVersion {
            what: "qa file",
            found: found.unwrap_or(0),
            expected: QA_SCHEMA_VERSION,
        });
    }
    let header: QaHeader =
        serde_json::from_value(version).map_err(|e| Error::json("qa header", 1, &e))?;
    let mut items = Vec::new();
    for (i, line) in lines {
        let item: QAItem =
            serde_json::from_str(line).map_err(|e| Error::json("qa items", i + 1, &e))?;
        item.check()?;
        items.push(item);
    }
    Ok((header, items))
}

pub fn write_qa(path: &Path, header: &QaHeader, items: &[QAItem]) -> Result<()> {
    fs::write(path, render_qa(header, items)).map_err(|e| Error::io(path, e))
}

pub fn read_qa(path: &Path) -> Result<(QaHeader, Vec<QAItem>)> {
    parse_qa(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
