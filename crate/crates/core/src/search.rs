//! Top-k distractor search per image.
//!
//! Pairwise strategies (co-occurrence, similarity, description) score every
//! candidate against each sampled positive and keep the best anchor; the
//! content-aware strategy scores candidates against the image directly. The
//! merged `all` strategy concatenates the co-occurrence, similarity and
//! content-aware top-k lists in that order, skipping repeats.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    negatives_of, sample_positives, CategoryId, CategorySpace, Corpus, DescriptionIndex,
    ImageRecord, ReviewStatus, Reviews,
};
use crate::embed::EmbeddingBundle;
use crate::error::{Error, Result};
use crate::scorers::{h_attr, h_con, h_sim, CandidateKind, DistractorCandidate};
use crate::seeding;
use crate::stats::CooccurrenceTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Cooccurrence,
    Similarity,
    ContentAware,
    Description,
    All,
    /// Uniform negative sampling; the baseline the scored strategies are
    /// compared against.
    Random,
}

impl Strategy {
    pub const MERGE_ORDER: [Strategy; 3] = [
        Strategy::Cooccurrence,
        Strategy::Similarity,
        Strategy::ContentAware,
    ];

    pub fn is_pairwise(self) -> bool {
        matches!(
            self,
            Strategy::Cooccurrence | Strategy::Similarity | Strategy::Description
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cooccurrence => "cooccurrence",
            Strategy::Similarity => "similarity",
            Strategy::ContentAware => "content_aware",
            Strategy::Description => "description",
            Strategy::All => "all",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(
            match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
                "cooccurrence" | "co_occurrence" | "coo" => Strategy::Cooccurrence,
                "similarity" | "sim" => Strategy::Similarity,
                "content_aware" | "content" => Strategy::ContentAware,
                "description" | "attr" => Strategy::Description,
                "all" => Strategy::All,
                "random" => Strategy::Random,
                other => return Err(Error::Config(format!("unknown strategy '{other}'"))),
            },
        )
    }
}

/// The only tie rule: score descending, then category id ascending, then
/// phrase ascending (absent phrase first).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    ScoreCategoryPhrase,
}

/// Whether unreviewed description candidates may be used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Draft,
    VerifiedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub m: usize,
    pub gamma: f64,
    pub seed: u64,
    #[serde(default)]
    pub tiebreak: TieBreak,
    #[serde(default)]
    pub mode: RunMode,
}

impl SearchConfig {
    /// Six positives and six distractors, except the description strategy
    /// which uses three of each.
    pub fn new(strategy: Strategy) -> Self {
        let n = if strategy == Strategy::Description {
            3
        } else {
            6
        };
        SearchConfig {
            strategy,
            k: n,
            m: n,
            gamma: 1.0,
            seed: seeding::DEFAULT_SEED,
            tiebreak: TieBreak::default(),
            mode: RunMode::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDistractor {
    pub candidate: DistractorCandidate,
    pub score: f64,
    pub strategy: Strategy,
    /// The positive that produced the score, for pairwise strategies.
    pub anchor: Option<CategoryId>,
}

impl ScoredDistractor {
    fn dedup_key(&self) -> (CandidateKind, CategoryId, Option<String>) {
        (
            self.candidate.kind,
            self.candidate.category,
            self.candidate.phrase.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistractorSet {
    pub image_id: String,
    pub strategy: Strategy,
    pub positives_used: Vec<CategoryId>,
    pub distractors: Vec<ScoredDistractor>,
}

/// Total order used by [`top_k`].
pub fn rank_order(a: &ScoredDistractor, b: &ScoredDistractor) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.candidate.category.cmp(&b.candidate.category))
        .then(a.candidate.phrase.cmp(&b.candidate.phrase))
}

/// Per candidate, the maximum score over anchors and the anchor achieving it;
/// equal scores go to the lower anchor id.
pub fn aggregate_pairwise<K: Ord + Clone>(
    scores: &[(K, CategoryId, f64)],
) -> Result<BTreeMap<K, (f64, CategoryId)>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("pairwise scores"));
    }
    let mut best: BTreeMap<K, (f64, CategoryId)> = BTreeMap::new();
    for (cand, anchor, score) in scores {
        best.entry(cand.clone())
            .and_modify(|cur| {
                let better = match score.total_cmp(&cur.0) {
                    Ordering::Greater => true,
                    Ordering::Equal => *anchor < cur.1,
                    Ordering::Less => false,
                };
                if better {
                    *cur = (*score, *anchor);
                }
            })
            .or_insert((*score, *anchor));
    }
    Ok(best)
}

/// The `k` best candidates under [`rank_order`], best first.
pub fn top_k(mut candidates: Vec<ScoredDistractor>, k: usize) -> Result<Vec<ScoredDistractor>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyInput("candidates"));
    }
    candidates.sort_by(rank_order);
    candidates.truncate(k);
    Ok(candidates)
}

/// Keeps `ceil(gamma * |N|)` negatives chosen uniformly. One permutation is
/// drawn per seed and the result is its prefix, so smaller gammas give subsets
/// of larger ones.
pub fn restrict_space(
    negatives: &BTreeSet<CategoryId>,
    gamma: f64,
    seed: u64,
) -> Result<BTreeSet<CategoryId>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!(
            "gamma must be in (0, 1], got {gamma}"
        )));
    }
    if gamma == 1.0 {
        return Ok(negatives.clone());
    }
    let mut order: Vec<CategoryId> = negatives.iter().copied().collect();
    order.shuffle(&mut seeding::rng_for(seed, &["gamma"]));
    // guard against 0.7 * 10 = 7.000000000000001
    let keep = ((gamma * order.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    Ok(order.into_iter().take(keep).collect())
}

/// Everything a search may need. Strategies fail with a configuration error
/// naming the first missing input.
#[derive(Clone, Copy)]
pub struct SearchInputs<'a> {
    pub corpus: &'a Corpus,
    pub table: Option<&'a CooccurrenceTable>,
    pub bundle: Option<&'a EmbeddingBundle>,
    pub descriptions: Option<&'a DescriptionIndex>,
    pub reviews: Option<&'a Reviews>,
}

impl<'a> SearchInputs<'a> {
    pub fn new(corpus: &'a Corpus) -> Self {
        SearchInputs {
            corpus,
            table: None,
            bundle: None,
            descriptions: None,
            reviews: None,
        }
    }

    fn table(&self) -> Result<&'a CooccurrenceTable> {
        self.table
            .ok_or_else(|| Error::Config("cooccurrence strategy needs `table` (run stats)".into()))
    }

    fn bundle(&self, strategy: Strategy) -> Result<&'a EmbeddingBundle> {
        self.bundle
            .ok_or_else(|| Error::Config(format!("{strategy} strategy needs `bundle`")))
    }

    fn descriptions(&self) -> Result<&'a DescriptionIndex> {
        self.descriptions
            .ok_or_else(|| Error::Config("description strategy needs `descriptions`".into()))
    }

    pub fn check(&self, strategy: Strategy) -> Result<()> {
        match strategy {
            Strategy::Cooccurrence => self.table().map(drop),
            Strategy::Similarity | Strategy::ContentAware => self.bundle(strategy).map(drop),
            Strategy::Description => {
                self.descriptions()?;
                self.bundle(strategy).map(drop)
            }
            Strategy::All => {
                self.table()?;
                self.bundle(strategy).map(drop)
            }
            Strategy::Random => Ok(()),
        }
    }
}

fn space_for_image(
    record: &ImageRecord,
    space: &CategorySpace,
    config: &SearchConfig,
) -> Result<BTreeSet<CategoryId>> {
    let seed = seeding::sub_seed(config.seed, &["space", &record.image_id]);
    restrict_space(&negatives_of(record, space), config.gamma, seed)
}

fn pairwise(
    negatives: &BTreeSet<CategoryId>,
    anchors: &[CategoryId],
    strategy: Strategy,
    mut score: impl FnMut(CategoryId, CategoryId) -> Result<f64>,
) -> Result<Vec<ScoredDistractor>> {
    let mut table = Vec::with_capacity(negatives.len() * anchors.len());
    for &d in negatives {
        for &p in anchors {
            table.push((d, p, score(d, p)?));
        }
    }
    if table.is_empty() {
        return Ok(Vec::new());
    }
    Ok(aggregate_pairwise(&table)?
        .into_iter()
        .map(|(d, (s, p))| ScoredDistractor {
            candidate: DistractorCandidate::negative(d),
            score: s,
            strategy,
            anchor: Some(p),
        })
        .collect())
}

fn ranked(candidates: Vec<ScoredDistractor>, k: usize) -> Result<Vec<ScoredDistractor>> {
    if candidates.is_empty() {
        Ok(candidates)
    } else {
        top_k(candidates, k)
    }
}

/// Runs one strategy for one image.
pub fn search_strategy(
    record: &ImageRecord,
    config: &SearchConfig,
    inputs: &SearchInputs<'_>,
) -> Result<DistractorSet> {
    config.validate()?;
    inputs.check(config.strategy)?;
    if config.strategy == Strategy::All {
        return merge_all(record, config, inputs);
    }
    let space = &inputs.corpus.space;
    let positives_used = sample_positives(record, config.m, config.seed)?;
    let negatives = space_for_image(record, space, config)?;
    let strategy = config.strategy;

    let distractors = match strategy {
        Strategy::Cooccurrence => {
            let table = inputs.table()?;
            let scored = pairwise(&negatives, &positives_used, strategy, |d, p| {
                Ok(table.h_coo(d, p))
            })?;
            ranked(scored, config.k)?
        }
        Strategy::Similarity => {
            let bundle = inputs.bundle(strategy)?;
            let scored = pairwise(&negatives, &positives_used, strategy, |d, p| {
                h_sim(bundle, space, d, p)
            })?;
            ranked(scored, config.k)?
        }
        Strategy::ContentAware => {
            let bundle = inputs.bundle(strategy)?;
            let scored = negatives
                .iter()
                .map(|&d| {
                    Ok(ScoredDistractor {
                        candidate: DistractorCandidate::negative(d),
                        score: h_con(bundle, space, &record.image_id, d)?,
                        strategy,
                        anchor: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ranked(scored, config.k)?
        }
        Strategy::Description => {
            let scored = description_candidates(record, &positives_used, config, inputs)?;
            ranked(scored, config.k)?
        }
        Strategy::Random => {
            let mut order: Vec<CategoryId> = negatives.into_iter().collect();
            order.shuffle(&mut seeding::rng_for(
                config.seed,
                &["random", &record.image_id],
            ));
            order
                .into_iter()
                .take(config.k)
                .map(|d| ScoredDistractor {
                    candidate: DistractorCandidate::negative(d),
                    score: 0.0,
                    strategy,
                    anchor: None,
                })
                .collect()
        }
        Strategy::All => unreachable!("handled above"),
    };
    Ok(DistractorSet {
        image_id: record.image_id.clone(),
        strategy,
        positives_used,
        distractors,
    })
}

/// Scores every (positive, negative description) phrase for the image.
fn description_candidates(
    record: &ImageRecord,
    anchors: &[CategoryId],
    config: &SearchConfig,
    inputs: &SearchInputs<'_>,
) -> Result<Vec<ScoredDistractor>> {
    let index = inputs.descriptions()?;
    let bundle = inputs.bundle(Strategy::Description)?;
    let space = &inputs.corpus.space;
    let mut out = Vec::new();
    for &p in anchors {
        let mut pool = match index.pool(record, p) {
            Ok(pool) => pool,
            Err(Error::EmptyPool { .. }) => continue,
            Err(e) => return Err(e),
        };
        if let Some(reviews) = inputs.reviews {
            reviews.apply(&mut pool, space);
        }
        for c in &pool.candidates {
            let eligible = match (config.mode, c.review) {
                (_, ReviewStatus::Rejected) => false,
                (RunMode::VerifiedOnly, s) => s == ReviewStatus::Accepted,
                (RunMode::Draft, _) => true,
            };
            if !eligible {
                continue;
            }
            let entry = crate::corpus::DescriptionEntry {
                object: p,
                text: c.text.clone(),
                placement: c.placement,
            };
            let candidate = DistractorCandidate::described(space.name(p), &entry)?;
            let score = h_attr(bundle, &record.image_id, &candidate)?;
            out.push(ScoredDistractor {
                candidate,
                score,
                strategy: Strategy::Description,
                anchor: Some(p),
            });
        }
    }
    Ok(out)
}

/// Concatenates ranked lists in order, taking at most `k` unseen candidates
/// from each. A candidate found by several lists keeps its first attribution.
pub fn merge_sets(sets: &[DistractorSet], k: usize) -> DistractorSet {
    let mut seen = HashSet::new();
    let mut merged = Vec::new();
    for set in sets {
        let mut taken = 0;
        for d in &set.distractors {
            if taken == k {
                break;
            }
            if seen.insert(d.dedup_key()) {
                merged.push(d.clone());
                taken += 1;
            }
        }
    }
    DistractorSet {
        image_id: sets.first().map(|s| s.image_id.clone()).unwrap_or_default(),
        strategy: Strategy::All,
        positives_used: sets
            .first()
            .map(|s| s.positives_used.clone())
            .unwrap_or_default(),
        distractors: merged,
    }
}

pub fn merge_all(
    record: &ImageRecord,
    config: &SearchConfig,
    inputs: &SearchInputs<'_>,
) -> Result<DistractorSet> {
    let sets = Strategy::MERGE_ORDER
        .iter()
        .map(|&strategy| {
            let cfg = SearchConfig {
                strategy,
                ..config.clone()
            };
            search_strategy(record, &cfg, inputs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(merge_sets(&sets, config.k))
}

/// Searches every eligible image in parallel; output is in image-id order.
pub fn search_corpus(
    config: &SearchConfig,
    inputs: &SearchInputs<'_>,
) -> Result<Vec<DistractorSet>> {
    config.validate()?;
    inputs.check(config.strategy)?;
    inputs
        .corpus
        .records
        .par_iter()
        .filter(|r| r.is_eligible())
        .map(|r| search_strategy(r, config, inputs))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorWire {
    pub kind: CandidateKind,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<String>,
    pub rank: usize,
    /// Originating strategy, recorded for merged sets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorSetWire {
    pub image_id: String,
    pub strategy: Strategy,
    pub positives_used: Vec<String>,
    pub distractors: Vec<DistractorWire>,
}

impl DistractorSet {
    pub fn to_wire(&self, space: &CategorySpace) -> DistractorSetWire {
        DistractorSetWire {
            image_id: self.image_id.clone(),
            strategy: self.strategy,
            positives_used: self
                .positives_used
                .iter()
                .map(|p| space.name(*p).to_string())
                .collect(),
            distractors: self
                .distractors
                .iter()
                .enumerate()
                .map(|(i, d)| DistractorWire {
                    kind: d.candidate.kind,
                    category: space.name(d.candidate.category).to_string(),
                    description: d.candidate.description.clone(),
                    phrase: d.candidate.phrase.clone(),
                    score: d.score,
                    anchor: d.anchor.map(|a| space.name(a).to_string()),
                    rank: i + 1,
                    source: (self.strategy == Strategy::All).then_some(d.strategy),
                })
                .collect(),
        }
    }

    pub fn from_wire(wire: DistractorSetWire, space: &CategorySpace) -> Result<Self> {
        let id = |name: &str| {
            space.id(name).ok_or_else(|| {
                Error::Validation(format!(
                    "distractor set {}: unknown category '{name}'",
                    wire.image_id
                ))
            })
        };
        let positives_used = wire
            .positives_used
            .iter()
            .map(|p| id(p))
            .collect::<Result<Vec<_>>>()?;
        let mut distractors = Vec::with_capacity(wire.distractors.len());
        for (i, d) in wire.distractors.iter().enumerate() {
            if d.rank != i + 1 {
                return Err(Error::Validation(format!(
                    "distractor set {}: rank {} at position {}",
                    wire.image_id,
                    d.rank,
                    i + 1
                )));
            }
            let shape_ok = match d.kind {
                CandidateKind::NegativeCategory => d.description.is_none() && d.phrase.is_none(),
                CandidateKind::ObjectDescription => d.description.is_some() && d.phrase.is_some(),
            };
            if !shape_ok {
                return Err(Error::Validation(format!(
                    "distractor set {}: {:?} entry with wrong description/phrase fields",
                    wire.image_id, d.kind
                )));
            }
            distractors.push(ScoredDistractor {
                candidate: DistractorCandidate {
                    kind: d.kind,
                    category: id(&d.category)?,
                    description: d.description.clone(),
                    phrase: d.phrase.clone(),
                },
                score: d.score,
                strategy: d.source.unwrap_or(wire.strategy),
                anchor: d.anchor.as_deref().map(id).transpose()?,
            });
        }
        Ok(DistractorSet {
            image_id: wire.image_id,
            strategy: wire.strategy,
            positives_used,
            distractors,
        })
    }
}

pub const SEARCH_SCHEMA_VERSION: u64 = 1;

/// First line of a distractor-set file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHeader {
    pub schema_version: u64,
    pub run_config_digest: String,
}

impl SearchHeader {
    pub fn new(run_config_digest: impl Into<String>) -> Self {
        SearchHeader {
            schema_version: SEARCH_SCHEMA_VERSION,
            run_config_digest: run_config_digest.into(),
        }
    }
}

/// A header line, then one JSON record per set.
pub fn write_distractor_sets(
    header: &SearchHeader,
    sets: &[DistractorSet],
    space: &CategorySpace,
) -> String {
    let mut out = serde_json::to_string(header).expect("serializable");
    out.push('\n');
    for s in sets {
        out.push_str(&serde_json::to_string(&s.to_wire(space)).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn read_distractor_sets(
    text: &str,
    space: &CategorySpace,
) -> Result<(SearchHeader, Vec<DistractorSet>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or(Error::EmptyInput("distractor set file has no header"))?;
    let header: SearchHeader =
        serde_json::from_str(first).map_err(|e| Error::json("distractor set header", 1, &e))?;
    if header.schema_version != SEARCH_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            what: "distractor set file",
            found: header.schema_version,
            expected: SEARCH_SCHEMA_VERSION,
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let wire: DistractorSetWire =
            serde_json::from_str(line).map_err(|e| Error::json("distractor sets", i + 1, &e))?;
        out.push(DistractorSet::from_wire(wire, space)?);
    }
    Ok((header, out))
}
