//! Writes the synthetic fixture corpus and embedding bundle.
//!
//! cargo run -p halprobe-cli --example make_fixture -- crates/cli/fixtures/tiny

use std::path::PathBuf;

use halprobe::corpus::write_canonical;
use halprobe::synth::{generate, SynthConfig};

fn main() -> anyhow::Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/cli/fixtures/tiny".into()),
    );
    std::fs::create_dir_all(&dir)?;
    let world = generate(&SynthConfig::default())?;
    write_canonical(&world.corpus, &dir.join("corpus.jsonl"))?;
    world.bundle.write(&dir.join("bundle"))?;
    println!(
        "{} images, {} categories, {} bundle entries",
        world.corpus.records.len(),
        world.corpus.space.len(),
        world.bundle.len()
    );
    Ok(())
}
