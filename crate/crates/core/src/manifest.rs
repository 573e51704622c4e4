//! The list of texts and images an external encoder must embed to produce a
//! bundle for a corpus. Phrase keys are built with the same function the
//! scorers use, so lookups match byte for byte.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embed::{EmbeddingBundle, EntryKind};
use crate::error::{Error, Result};
use crate::scorers::concat_phrase;

pub const MANIFEST_VERSION: u64 = 1;
pub const DEFAULT_TEXT_TEMPLATE: &str = "a photo of a {name}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub key: String,
    pub uri: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub version: u64,
    pub checkpoint: String,
    /// Applied to category names only; phrases are encoded verbatim.
    pub text_template: String,
    pub categories: Vec<String>,
    pub phrases: Vec<String>,
    pub images: Vec<ManifestImage>,
    pub output_dir: String,
}

impl ExportManifest {
    /// Every category, every description phrase seen in the corpus, and every
    /// image. Phrases are sorted and deduplicated.
    pub fn from_corpus(
        corpus: &Corpus,
        checkpoint: &str,
        text_template: &str,
        output_dir: &str,
    ) -> Result<Self> {
        if text_template.matches("{name}").count() != 1 {
            return Err(Error::Config(
                "text template must contain {name} exactly once".into(),
            ));
        }
        let space = &corpus.space;
        let mut phrases = BTreeSet::new();
        for r in &corpus.records {
            for d in &r.descriptions {
                phrases.insert(concat_phrase(space.name(d.object), d)?);
            }
        }
        Ok(ExportManifest {
            version: MANIFEST_VERSION,
            checkpoint: checkpoint.to_string(),
            text_template: text_template.to_string(),
            categories: space.names().to_vec(),
            phrases: phrases.into_iter().collect(),
            images: corpus
                .records
                .iter()
                .map(|r| ManifestImage {
                    key: r.image_id.clone(),
                    uri: r.image_uri.clone(),
                })
                .collect(),
            output_dir: output_dir.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: ExportManifest =
            serde_json::from_str(text).map_err(|e| Error::json("export manifest", 0, &e))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::SchemaVersion {
                what: "export manifest",
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// All (key, kind) pairs the bundle must contain, in manifest order.
    pub fn expected_entries(&self) -> Vec<(&str, EntryKind)> {
        self.categories
            .iter()
            .map(|c| (c.as_str(), EntryKind::Category))
            .chain(self.phrases.iter().map(|p| (p.as_str(), EntryKind::Phrase)))
            .chain(
                self.images
                    .iter()
                    .map(|i| (i.key.as_str(), EntryKind::Image)),
            )
            .collect()
    }

    /// Entries the bundle lacks or stores under another kind.
    pub fn missing_from(&self, bundle: &EmbeddingBundle) -> Vec<(String, EntryKind)> {
        self.expected_entries()
            .into_iter()
            .filter(|(k, kind)| bundle.vector_of(k, *kind).is_err())
            .map(|(k, kind)| (k.to_string(), kind))
            .collect()
    }
}
