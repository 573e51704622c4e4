#![allow(dead_code)]

pub mod stub;

use std::collections::BTreeSet;

use halprobe::corpus::{
    CategoryId, CategorySpace, Corpus, DescriptionEntry, ImageRecord, Placement,
};
use halprobe::embed::{EmbeddingBundle, EntryKind, IndexEntry};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const WORDS: &[&str] = &[
    "red", "blue", "old", "tiny", "wooden", "striped", "shiny", "bent",
];

/// `n_images` images over `n_cats` categories, each present with probability
/// `density`; each present object gets a description with probability 1/2.
pub fn random_corpus(r: &mut ChaCha8Rng, n_images: usize, n_cats: usize, density: f64) -> Corpus {
    let space = CategorySpace::new((0..n_cats).map(|i| format!("c{i}"))).unwrap();
    let records = (0..n_images)
        .map(|i| {
            let positives: BTreeSet<CategoryId> = (0..n_cats)
                .filter(|_| r.gen::<f64>() < density)
                .map(|c| CategoryId(c as u32))
                .collect();
            let descriptions = positives
                .iter()
                .filter_map(|p| {
                    r.gen_bool(0.5).then(|| DescriptionEntry {
                        object: *p,
                        text: WORDS[r.gen_range(0..WORDS.len())].to_string(),
                        placement: if r.gen_bool(0.8) {
                            Placement::Before
                        } else {
                            Placement::After
                        },
                    })
                })
                .collect();
            ImageRecord {
                image_id: format!("i{i:04}"),
                image_uri: format!("i{i:04}.jpg"),
                positives,
                descriptions,
            }
        })
        .collect();
    Corpus::new(space, records).unwrap()
}

pub fn unit(r: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit vectors for the given keys.
pub fn random_bundle(
    r: &mut ChaCha8Rng,
    dim: usize,
    keys: &[(String, EntryKind)],
) -> EmbeddingBundle {
    let mut data = Vec::new();
    let entries = keys
        .iter()
        .map(|(k, kind)| {
            data.extend(unit(r, dim));
            IndexEntry {
                key: k.clone(),
                kind: *kind,
            }
        })
        .collect();
    EmbeddingBundle::new(dim, "test", entries, data).unwrap()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += a[i] as f64 * b[i] as f64;
    }
    s
}

pub fn scalar_cosine(a: &[f32], b: &[f32]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}
