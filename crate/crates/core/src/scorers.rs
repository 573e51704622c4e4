//! Hallucination scorers. Each maps a candidate distractor to a score; only
//! the induced ranking is meaningful, not the absolute value.
//!
//! Category vectors are keyed by normalized category name, image vectors by
//! image id and phrase vectors by the exact [`concat_phrase`] output.

use serde::{Deserialize, Serialize};

use crate::corpus::{CategoryId, CategorySpace, DescriptionEntry, Placement};
use crate::embed::{EmbeddingBundle, EntryKind};
use crate::error::{Error, Result};

pub use crate::stats::CooccurrenceTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    NegativeCategory,
    ObjectDescription,
}

/// A negative category `d`, or a true object paired with a false description.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DistractorCandidate {
    pub kind: CandidateKind,
    /// The negative category, or the true object for description phrases.
    pub category: CategoryId,
    pub description: Option<String>,
    pub phrase: Option<String>,
}

impl DistractorCandidate {
    pub fn negative(category: CategoryId) -> Self {
        DistractorCandidate {
            kind: CandidateKind::NegativeCategory,
            category,
            description: None,
            phrase: None,
        }
    }

    pub fn described(object_name: &str, entry: &DescriptionEntry) -> Result<Self> {
        let phrase = concat_phrase(object_name, entry)?;
        Ok(DistractorCandidate {
            kind: CandidateKind::ObjectDescription,
            category: entry.object,
            description: Some(entry.text.clone()),
            phrase: Some(phrase),
        })
    }

    /// The text put in front of the model: the category name or the phrase.
    pub fn surface<'a>(&'a self, space: &'a CategorySpace) -> &'a str {
        match &self.phrase {
            Some(p) => p,
            None => space.name(self.category),
        }
    }
}

/// Joins object and description in the entry's placement order, single-spaced.
pub fn concat_phrase(object_name: &str, entry: &DescriptionEntry) -> Result<String> {
    let object: Vec<&str> = object_name.split_whitespace().collect();
    let desc: Vec<&str> = entry.text.split_whitespace().collect();
    if object.is_empty() {
        return Err(Error::EmptyInput("object name"));
    }
    if desc.is_empty() {
        return Err(Error::EmptyInput("description"));
    }
    let parts = match entry.placement {
        Placement::Before => [desc, object],
        Placement::After => [object, desc],
    };
    Ok(parts.concat().join(" "))
}

/// Text-text cosine between two category names.
pub fn h_sim(
    bundle: &EmbeddingBundle,
    space: &CategorySpace,
    d: CategoryId,
    p: CategoryId,
) -> Result<f64> {
    bundle.similarity(
        (space.name(d), EntryKind::Category),
        (space.name(p), EntryKind::Category),
    )
}

/// Image-text cosine between an image and a category name.
pub fn h_con(
    bundle: &EmbeddingBundle,
    space: &CategorySpace,
    image_id: &str,
    d: CategoryId,
) -> Result<f64> {
    bundle.similarity(
        (image_id, EntryKind::Image),
        (space.name(d), EntryKind::Category),
    )
}

/// Image-text cosine between an image and an object-description phrase.
pub fn h_attr(
    bundle: &EmbeddingBundle,
    image_id: &str,
    candidate: &DistractorCandidate,
) -> Result<f64> {
    let phrase = match (candidate.kind, &candidate.phrase) {
        (CandidateKind::ObjectDescription, Some(p)) => p,
        _ => {
            return Err(Error::Validation(
                "h_attr needs an object-description candidate".into(),
            ))
        }
    };
    bundle.similarity((image_id, EntryKind::Image), (phrase, EntryKind::Phrase))
}
