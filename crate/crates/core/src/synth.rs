//! Seeded synthetic corpora and embedding bundles with known structure.
//!
//! Categories belong to clusters; an image draws most of its objects from one
//! cluster, and its vector is the normalized sum of its objects' vectors plus
//! noise. Phrase vectors mix the object vector with an attribute vector. This
//! gives co-occurrence, similarity and content scores something to find.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CategoryId, CategorySpace, Corpus, DescriptionEntry, ImageRecord, Placement};
use crate::embed::{normalize_in_place, EmbeddingBundle, EntryKind, IndexEntry};
use crate::error::Result;
use crate::scorers::concat_phrase;
use crate::seeding;

const NAMES: &[&str] = &[
    "dog",
    "cat",
    "horse",
    "sheep",
    "cow",
    "bird",
    "car",
    "bus",
    "truck",
    "bicycle",
    "motorcycle",
    "train",
    "boat",
    "airplane",
    "chair",
    "table",
    "sofa",
    "bed",
    "lamp",
    "clock",
    "vase",
    "book",
    "bottle",
    "cup",
    "bowl",
    "fork",
    "knife",
    "spoon",
    "plate",
    "banana",
    "apple",
    "orange",
    "pizza",
    "cake",
    "sandwich",
    "tree",
    "bench",
    "fence",
    "ladder",
    "umbrella",
    "backpack",
    "handbag",
    "suitcase",
    "kite",
    "ball",
    "skateboard",
    "surfboard",
    "laptop",
    "keyboard",
    "phone",
    "television",
    "window",
    "door",
    "mirror",
    "pillow",
    "blanket",
    "towel",
    "sink",
    "toilet",
    "oven",
    "refrigerator",
    "microwave",
    "toaster",
    "helmet",
    "jacket",
    "shirt",
    "hat",
    "shoe",
    "glove",
    "scarf",
    "flower",
    "plant",
    "rock",
    "cloud",
    "mountain",
    "river",
    "bridge",
    "tower",
    "sign",
    "pole",
];

const ATTRIBUTES: &[&str] = &[
    "red", "blue", "wooden", "small", "large", "striped", "metal", "green", "old", "shiny",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_categories: usize,
    pub num_images: usize,
    pub num_clusters: usize,
    pub dim: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Chance that each object is drawn from the image's home cluster.
    pub cluster_affinity: f64,
    /// Chance that a present object carries a description.
    pub description_rate: f64,
    pub image_noise: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_categories: 20,
            num_images: 20,
            num_clusters: 4,
            dim: 32,
            objects_per_image: (2, 5),
            cluster_affinity: 0.8,
            description_rate: 0.5,
            image_noise: 0.3,
            seed: seeding::DEFAULT_SEED,
        }
    }
}

pub struct SynthWorld {
    pub corpus: Corpus,
    pub bundle: EmbeddingBundle,
}

fn category_name(i: usize) -> String {
    match NAMES.get(i) {
        Some(n) => (*n).to_string(),
        None => format!("object{i}"),
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..dim).map(|_| gaussian(rng)).collect();
    normalize_in_place(&mut v);
    v
}

fn mix(a: &[f32], b: &[f32], weight: f32) -> Vec<f32> {
    let mut v: Vec<f32> = a.iter().zip(b).map(|(x, y)| x + weight * y).collect();
    normalize_in_place(&mut v);
    v
}

pub fn generate(config: &SynthConfig) -> Result<SynthWorld> {
    let n = config.num_categories.max(2);
    let clusters = config.num_clusters.clamp(1, n);
    let mut rng = seeding::rng_for(config.seed, &["synth"]);

    let centers: Vec<Vec<f32>> = (0..clusters)
        .map(|_| random_unit(&mut rng, config.dim))
        .collect();
    let cluster_of: Vec<usize> = (0..n).map(|i| i % clusters).collect();
    let cat_vecs: Vec<Vec<f32>> = (0..n)
        .map(|i| {
            let noise = random_unit(&mut rng, config.dim);
            mix(&centers[cluster_of[i]], &noise, 0.6)
        })
        .collect();
    let attr_vecs: Vec<Vec<f32>> = ATTRIBUTES
        .iter()
        .map(|_| random_unit(&mut rng, config.dim))
        .collect();

    let space = CategorySpace::new((0..n).map(category_name))?;
    let members: Vec<Vec<usize>> = (0..clusters)
        .map(|c| (0..n).filter(|i| cluster_of[*i] == c).collect())
        .collect();

    let (lo, hi) = config.objects_per_image;
    let hi = hi.clamp(1, n);
    let lo = lo.clamp(1, hi);
    let mut records = Vec::with_capacity(config.num_images);
    let mut image_vecs = Vec::with_capacity(config.num_images);
    for img in 0..config.num_images {
        let home = rng.gen_range(0..clusters);
        let want = rng.gen_range(lo..=hi);
        let mut chosen = BTreeSet::new();
        while chosen.len() < want {
            let c = if rng.gen::<f64>() < config.cluster_affinity {
                *members[home]
                    .choose(&mut rng)
                    .expect("clusters are non-empty")
            } else {
                rng.gen_range(0..n)
            };
            chosen.insert(c);
        }
        let mut v = vec![0f32; config.dim];
        for c in &chosen {
            v.iter_mut().zip(&cat_vecs[*c]).for_each(|(a, b)| *a += b);
        }
        let noise = random_unit(&mut rng, config.dim);
        normalize_in_place(&mut v);
        image_vecs.push(mix(&v, &noise, config.image_noise));

        let mut descriptions = Vec::new();
        for c in &chosen {
            if rng.gen::<f64>() < config.description_rate {
                descriptions.push(DescriptionEntry {
                    object: CategoryId(*c as u32),
                    text: ATTRIBUTES.choose(&mut rng).expect("non-empty").to_string(),
                    placement: Placement::Before,
                });
            }
        }
        let image_id = format!("img{img:05}");
        records.push(ImageRecord {
            image_uri: format!("images/{image_id}.jpg"),
            image_id,
            positives: chosen.into_iter().map(|c| CategoryId(c as u32)).collect(),
            descriptions,
        });
    }

    let mut entries = Vec::new();
    let mut data = Vec::new();
    for (i, v) in cat_vecs.iter().enumerate() {
        entries.push(IndexEntry {
            key: space.name(CategoryId(i as u32)).to_string(),
            kind: EntryKind::Category,
        });
        data.extend_from_slice(v);
    }
    for (i, v) in cat_vecs.iter().enumerate() {
        for (a, av) in ATTRIBUTES.iter().zip(&attr_vecs) {
            let entry = DescriptionEntry {
                object: CategoryId(i as u32),
                text: (*a).to_string(),
                placement: Placement::Before,
            };
            entries.push(IndexEntry {
                key: concat_phrase(space.name(entry.object), &entry)?,
                kind: EntryKind::Phrase,
            });
            data.extend_from_slice(&mix(v, av, 0.7));
        }
    }
    for (r, v) in records.iter().zip(&image_vecs) {
        entries.push(IndexEntry {
            key: r.image_id.clone(),
            kind: EntryKind::Image,
        });
        data.extend_from_slice(v);
    }
    let bundle = EmbeddingBundle::new(
        config.dim,
        format!("synthetic-seed{}", config.seed),
        entries,
        data,
    )?;
    Ok(SynthWorld {
        corpus: Corpus::new(space, records)?,
        bundle,
    })
}
