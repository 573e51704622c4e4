//! Canonical annotation corpus: category space, per-image records, description
//! pools and the cleaning filters.
//!
//! The canonical on-disk form is two files: a JSON header listing the category
//! space in order, and a newline-delimited record file with one image per
//! line. The COCO-instances adapter produces the same in-memory shape.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeding;
use crate::text::normalize;

pub const CANONICAL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CategoryId(pub u32);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Ordered category names with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorySpace {
    names: Vec<String>,
    id_of: HashMap<String, CategoryId>,
}

impl CategorySpace {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = CategorySpace {
            names: Vec::new(),
            id_of: HashMap::new(),
        };
        for raw in names {
            let name = normalize(raw.as_ref());
            if name.is_empty() {
                return Err(Error::Validation("empty category name".into()));
            }
            let id = CategoryId(out.names.len() as u32);
            if out.id_of.insert(name.clone(), id).is_some() {
                return Err(Error::Validation(format!("duplicate category '{name}'")));
            }
            out.names.push(name);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Panics on an id from another space.
    pub fn name(&self, id: CategoryId) -> &str {
        &self.names[id.index()]
    }

    /// Looks up a name after normalizing it.
    pub fn id(&self, name: &str) -> Option<CategoryId> {
        self.id_of.get(&normalize(name)).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        (0..self.names.len() as u32).map(CategoryId)
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        id.index() < self.names.len()
    }
}

/// Where a description goes relative to the object name when forming a phrase.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Before,
    After,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptionEntry {
    pub object: CategoryId,
    pub text: String,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_uri: String,
    pub positives: BTreeSet<CategoryId>,
    pub descriptions: Vec<DescriptionEntry>,
}

impl ImageRecord {
    /// Images without positives are kept in the corpus but never searched.
    pub fn is_eligible(&self) -> bool {
        !self.positives.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub space: CategorySpace,
    /// Sorted by `image_id`, unique.
    pub records: Vec<ImageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Canonical,
    CocoInstances,
}

impl Corpus {
    /// Sorts records and checks the record invariants.
    pub fn new(space: CategorySpace, mut records: Vec<ImageRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        for pair in records.windows(2) {
            if pair[0].image_id == pair[1].image_id {
                return Err(Error::Validation(format!(
                    "duplicate image_id '{}'",
                    pair[0].image_id
                )));
            }
        }
        for r in &records {
            let bad = r.positives.iter().find(|id| !space.contains(**id));
            if let Some(id) = bad {
                return Err(Error::Validation(format!(
                    "image {}: category {id} outside the category space",
                    r.image_id
                )));
            }
            for d in &r.descriptions {
                if !r.positives.contains(&d.object) {
                    return Err(Error::Validation(format!(
                        "image {}: description for object {} that is not a positive",
                        r.image_id, d.object
                    )));
                }
                if d.text.trim().is_empty() {
                    return Err(Error::Validation(format!(
                        "image {}: empty description",
                        r.image_id
                    )));
                }
            }
        }
        Ok(Corpus { space, records })
    }

    pub fn record(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records
            .binary_search_by(|r| r.image_id.as_str().cmp(image_id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// SHA-256 over the canonical serialization; identifies the corpus in reports.
    pub fn content_hash(&self) -> String {
        let (header, body) = self.to_canonical();
        let mut h = Sha256::new();
        h.update(header.as_bytes());
        h.update(body.as_bytes());
        hex::encode(h.finalize())
    }

    /// Renders `(header, records)` in the canonical format.
    pub fn to_canonical(&self) -> (String, String) {
        let header = serde_json::to_string(&HeaderWire {
            version: CANONICAL_VERSION,
            categories: self.space.names.clone(),
        })
        .expect("header serializes");
        let mut body = String::new();
        for r in &self.records {
            let wire = RecordWire {
                image_id: r.image_id.clone(),
                image_uri: r.image_uri.clone(),
                positives: r
                    .positives
                    .iter()
                    .map(|id| self.space.name(*id).to_string())
                    .collect(),
                descriptions: r
                    .descriptions
                    .iter()
                    .map(|d| DescriptionWire {
                        object: self.space.name(d.object).to_string(),
                        text: d.text.clone(),
                        placement: Some(d.placement),
                    })
                    .collect(),
            };
            body.push_str(&serde_json::to_string(&wire).expect("record serializes"));
            body.push('\n');
        }
        (header + "\n", body)
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderWire {
    version: u64,
    categories: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    image_id: String,
    #[serde(default)]
    image_uri: String,
    #[serde(default)]
    positives: Vec<String>,
    #[serde(default)]
    descriptions: Vec<DescriptionWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionWire {
    object: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    placement: Option<Placement>,
}

/// `corpus.jsonl` -> `corpus.categories.json`.
pub fn header_path_for(records: &Path) -> PathBuf {
    records.with_extension("categories.json")
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    match format {
        CorpusFormat::Canonical => {
            let header = read(&header_path_for(path))?;
            parse_canonical(&header, &read(path)?)
        }
        CorpusFormat::CocoInstances => parse_coco_instances(&read(path)?),
    }
}

pub fn write_canonical(corpus: &Corpus, path: &Path) -> Result<()> {
    let (header, body) = corpus.to_canonical();
    let header_path = header_path_for(path);
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Collapses whitespace in description text without changing case.
fn clean_description(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn parse_canonical(header: &str, records: &str) -> Result<Corpus> {
    let head: HeaderWire =
        serde_json::from_str(header).map_err(|e| Error::json("corpus header", 0, &e))?;
    if head.version != CANONICAL_VERSION {
        return Err(Error::SchemaVersion {
            what: "corpus header",
            found: head.version,
            expected: CANONICAL_VERSION,
        });
    }
    let space = CategorySpace::new(&head.categories)?;
    let mut out = Vec::new();
    for (i, line) in records.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: RecordWire =
            serde_json::from_str(line).map_err(|e| Error::json("corpus records", i + 1, &e))?;
        out.push(record_from_wire(&space, wire)?);
    }
    Corpus::new(space, out)
}

fn record_from_wire(space: &CategorySpace, wire: RecordWire) -> Result<ImageRecord> {
    let lookup = |name: &str| {
        space.id(name).ok_or_else(|| {
            Error::Validation(format!(
                "image {}: unknown category '{}'",
                wire.image_id, name
            ))
        })
    };
    let mut positives = BTreeSet::new();
    for p in &wire.positives {
        positives.insert(lookup(p)?);
    }
    let mut descriptions = Vec::new();
    let mut seen = HashSet::new();
    for d in &wire.descriptions {
        let object = lookup(&d.object)?;
        let text = clean_description(&d.text);
        if text.is_empty() {
            return Err(Error::Validation(format!(
                "image {}: empty description for '{}'",
                wire.image_id, d.object
            )));
        }
        // A described object is present in the image.
        positives.insert(object);
        if seen.insert((object, normalize(&text))) {
            descriptions.push(DescriptionEntry {
                object,
                text,
                placement: d.placement.unwrap_or_default(),
            });
        }
    }
    Ok(ImageRecord {
        image_id: wire.image_id,
        image_uri: wire.image_uri,
        positives,
        descriptions,
    })
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: serde_json::Value,
    #[serde(default)]
    file_name: Option<String>,
    #[serde(default)]
    coco_url: Option<String>,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: serde_json::Value,
    category_id: i64,
    /// Not part of COCO proper; attribute-annotated exports may carry it.
    #[serde(default)]
    descriptions: Vec<CocoDescription>,
}

#[derive(Deserialize)]
struct CocoDescription {
    text: String,
    #[serde(default)]
    placement: Option<Placement>,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: i64,
    name: String,
}

fn coco_id(v: &serde_json::Value) -> Result<String> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        other => Err(Error::Validation(format!("unsupported image id {other}"))),
    }
}

/// Reads the standard `images`/`annotations`/`categories` layout. Categories
/// are ordered by their COCO id; repeated (image, category) annotations
/// collapse to one positive.
pub fn parse_coco_instances(json: &str) -> Result<Corpus> {
    let file: CocoFile =
        serde_json::from_str(json).map_err(|e| Error::json("coco instances", 0, &e))?;
    let mut cats: Vec<&CocoCategory> = file.categories.iter().collect();
    cats.sort_by_key(|c| c.id);
    for pair in cats.windows(2) {
        if pair[0].id == pair[1].id {
            return Err(Error::Validation(format!(
                "duplicate category id {}",
                pair[0].id
            )));
        }
    }
    let space = CategorySpace::new(cats.iter().map(|c| c.name.as_str()))?;
    let by_coco_id: HashMap<i64, CategoryId> = cats
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, CategoryId(i as u32)))
        .collect();

    let mut records: BTreeMap<String, ImageRecord> = BTreeMap::new();
    for img in &file.images {
        let image_id = coco_id(&img.id)?;
        let image_uri = img
            .file_name
            .clone()
            .or_else(|| img.coco_url.clone())
            .unwrap_or_default();
        let rec = ImageRecord {
            image_id: image_id.clone(),
            image_uri,
            positives: BTreeSet::new(),
            descriptions: Vec::new(),
        };
        if records.insert(image_id.clone(), rec).is_some() {
            return Err(Error::Validation(format!(
                "duplicate image_id '{image_id}'"
            )));
        }
    }
    let mut seen_desc: HashSet<(String, CategoryId, String)> = HashSet::new();
    for ann in &file.annotations {
        let image_id = coco_id(&ann.image_id)?;
        let category = *by_coco_id.get(&ann.category_id).ok_or_else(|| {
            Error::Validation(format!(
                "image {image_id}: unknown category id {}",
                ann.category_id
            ))
        })?;
        let rec = records.get_mut(&image_id).ok_or_else(|| {
            Error::Validation(format!("annotation references unknown image {image_id}"))
        })?;
        rec.positives.insert(category);
        for d in &ann.descriptions {
            let text = clean_description(&d.text);
            if text.is_empty() {
                return Err(Error::Validation(format!(
                    "image {image_id}: empty description"
                )));
            }
            if seen_desc.insert((image_id.clone(), category, normalize(&text))) {
                rec.descriptions.push(DescriptionEntry {
                    object: category,
                    text,
                    placement: d.placement.unwrap_or_default(),
                });
            }
        }
    }
    Corpus::new(space, records.into_values().collect())
}

/// Y \ P for one image.
pub fn negatives_of(record: &ImageRecord, space: &CategorySpace) -> BTreeSet<CategoryId> {
    space
        .ids()
        .filter(|id| !record.positives.contains(id))
        .collect()
}

/// Draws `min(m, |P|)` distinct positives uniformly without replacement. The
/// stream depends only on `seed` and the image id, so every strategy sees the
/// same sample for the same image.
pub fn sample_positives(record: &ImageRecord, m: usize, seed: u64) -> Result<Vec<CategoryId>> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    if !record.is_eligible() {
        return Err(Error::IneligibleImage(record.image_id.clone()));
    }
    let pool: Vec<CategoryId> = record.positives.iter().copied().collect();
    let amount = m.min(pool.len());
    let mut rng = seeding::rng_for(seed, &["positives", &record.image_id]);
    Ok(index::sample(&mut rng, pool.len(), amount)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    #[default]
    Unreviewed,
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolCandidate {
    pub text: String,
    pub placement: Placement,
    pub review: ReviewStatus,
}

/// Negative descriptions for one object in one image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptionPool {
    pub object: CategoryId,
    pub image_id: String,
    pub candidates: Vec<PoolCandidate>,
}

/// Every distinct description per object across a corpus, keyed by normalized
/// text. The first occurrence in record order supplies the surface text and
/// placement.
#[derive(Debug, Clone)]
pub struct DescriptionIndex {
    by_object: HashMap<CategoryId, BTreeMap<String, (String, Placement)>>,
}

impl DescriptionIndex {
    pub fn new(corpus: &Corpus) -> Self {
        let mut by_object: HashMap<CategoryId, BTreeMap<String, (String, Placement)>> =
            HashMap::new();
        for r in &corpus.records {
            for d in &r.descriptions {
                by_object
                    .entry(d.object)
                    .or_default()
                    .entry(normalize(&d.text))
                    .or_insert_with(|| (d.text.clone(), d.placement));
            }
        }
        DescriptionIndex { by_object }
    }

    pub fn distinct_count(&self, object: CategoryId) -> usize {
        self.by_object.get(&object).map_or(0, BTreeMap::len)
    }

    pub fn pool(&self, record: &ImageRecord, object: CategoryId) -> Result<DescriptionPool> {
        let empty = || Error::EmptyPool {
            image_id: record.image_id.clone(),
            object: object.to_string(),
        };
        let all = self.by_object.get(&object).ok_or_else(empty)?;
        let local: HashSet<String> = record
            .descriptions
            .iter()
            .filter(|d| d.object == object)
            .map(|d| normalize(&d.text))
            .collect();
        let candidates: Vec<PoolCandidate> = all
            .iter()
            .filter(|(key, _)| !local.contains(*key))
            .map(|(_, (text, placement))| PoolCandidate {
                text: text.clone(),
                placement: *placement,
                review: ReviewStatus::Unreviewed,
            })
            .collect();
        if candidates.is_empty() {
            return Err(empty());
        }
        Ok(DescriptionPool {
            object,
            image_id: record.image_id.clone(),
            candidates,
        })
    }
}

/// Union of the object's descriptions across the corpus minus the target
/// image's own. Builds a fresh index; use [`DescriptionIndex`] for many calls.
pub fn build_description_pool(
    corpus: &Corpus,
    image_id: &str,
    object: CategoryId,
) -> Result<DescriptionPool> {
    let record = corpus
        .record(image_id)
        .ok_or_else(|| Error::Validation(format!("unknown image_id '{image_id}'")))?;
    DescriptionIndex::new(corpus).pool(record, object)
}

/// Human review decisions for description candidates, keyed by
/// `(image_id, object name, normalized text)`.
#[derive(Debug, Clone, Default)]
pub struct Reviews {
    decisions: HashMap<(String, String, String), ReviewStatus>,
}

#[derive(Serialize, Deserialize)]
struct ReviewWire {
    image_id: String,
    object: String,
    text: String,
    status: ReviewStatus,
}

impl Reviews {
    /// Newline-delimited `{image_id, object, text, status}` records; later
    /// lines override earlier ones.
    pub fn parse(s: &str) -> Result<Self> {
        let mut decisions = HashMap::new();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let w: ReviewWire =
                serde_json::from_str(line).map_err(|e| Error::json("reviews", i + 1, &e))?;
            decisions.insert(
                (w.image_id, normalize(&w.object), normalize(&w.text)),
                w.status,
            );
        }
        Ok(Reviews { decisions })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn set(&mut self, image_id: &str, object: &str, text: &str, status: ReviewStatus) {
        self.decisions.insert(
            (image_id.to_string(), normalize(object), normalize(text)),
            status,
        );
    }

    pub fn apply(&self, pool: &mut DescriptionPool, space: &CategorySpace) {
        let object = space.name(pool.object).to_string();
        for c in &mut pool.candidates {
            let key = (pool.image_id.clone(), object.clone(), normalize(&c.text));
            if let Some(status) = self.decisions.get(&key) {
                c.review = *status;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_object_frequency: u64,
    pub min_descriptions_per_object: u64,
    pub min_objects_per_image: u64,
}

impl FilterConfig {
    pub const NONE: FilterConfig = FilterConfig {
        min_object_frequency: 0,
        min_descriptions_per_object: 0,
        min_objects_per_image: 0,
    };
    /// Visual Genome slice of the attribute corpus.
    pub const VISUAL_GENOME: FilterConfig = FilterConfig {
        min_object_frequency: 2000,
        min_descriptions_per_object: 50,
        min_objects_per_image: 10,
    };
    pub const OPEN_IMAGES: FilterConfig = FilterConfig {
        min_object_frequency: 1000,
        min_descriptions_per_object: 50,
        min_objects_per_image: 10,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub objects_kept: usize,
    /// Min and max distinct descriptions over kept objects.
    pub description_count_range: Option<(u64, u64)>,
    pub samples_kept: usize,
    pub rounds: usize,
}

/// Drops rare or under-described objects and images with too few surviving
/// objects, repeating until nothing changes so the result is a fixed point
/// (and filtering again is a no-op). Kept categories are re-indexed densely in
/// their original order.
pub fn apply_filters(corpus: &Corpus, config: &FilterConfig) -> Result<(Corpus, FilterStats)> {
    let n = corpus.space.len();
    let mut keep_obj = vec![true; n];
    let mut records: Vec<ImageRecord> = corpus.records.clone();
    let mut rounds = 0;
    loop {
        rounds += 1;
        let mut freq = vec![0u64; n];
        let mut descs: Vec<HashSet<String>> = vec![HashSet::new(); n];
        for r in &records {
            for p in &r.positives {
                freq[p.index()] += 1;
            }
            for d in &r.descriptions {
                descs[d.object.index()].insert(normalize(&d.text));
            }
        }
        let mut changed = false;
        for id in 0..n {
            let ok = freq[id] >= config.min_object_frequency
                && descs[id].len() as u64 >= config.min_descriptions_per_object;
            if keep_obj[id] && !ok {
                keep_obj[id] = false;
                changed = true;
            }
        }
        let before = records.len();
        records = records
            .into_iter()
            .filter_map(|mut r| {
                r.positives.retain(|p| keep_obj[p.index()]);
                r.descriptions.retain(|d| keep_obj[d.object.index()]);
                (r.positives.len() as u64 >= config.min_objects_per_image).then_some(r)
            })
            .collect();
        changed |= records.len() != before;
        if !changed {
            break;
        }
    }

    if !corpus.records.is_empty() && records.is_empty() {
        return Err(Error::EmptyFilterResult("image"));
    }
    if n > 0 && !keep_obj.iter().any(|k| *k) {
        return Err(Error::EmptyFilterResult("object"));
    }

    let mut remap = vec![None; n];
    let mut kept_names = Vec::new();
    for id in 0..n {
        if keep_obj[id] {
            remap[id] = Some(CategoryId(kept_names.len() as u32));
            kept_names.push(corpus.space.names[id].clone());
        }
    }
    let space = CategorySpace::new(&kept_names)?;
    for r in &mut records {
        r.positives = r
            .positives
            .iter()
            .filter_map(|p| remap[p.index()])
            .collect();
        for d in &mut r.descriptions {
            d.object = remap[d.object.index()].expect("kept object");
        }
    }
    let out = Corpus::new(space, records)?;
    let index = DescriptionIndex::new(&out);
    let counts: Vec<u64> = out
        .space
        .ids()
        .map(|id| index.distinct_count(id) as u64)
        .collect();
    let stats = FilterStats {
        objects_kept: out.space.len(),
        description_count_range: counts
            .iter()
            .min()
            .zip(counts.iter().max())
            .map(|(a, b)| (*a, *b)),
        samples_kept: out.records.len(),
        rounds,
    };
    Ok((out, stats))
}
