#![no_main]
use halprobe::embed::EmbeddingBundle;
use libfuzzer_sys::fuzz_target;

// Index JSON, a NUL byte, then the raw vectors.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|b| *b == 0).unwrap_or(data.len());
    let Ok(index) = std::str::from_utf8(&data[..split]) else {
        return;
    };
    let vectors = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(bundle) = EmbeddingBundle::from_parts(index, vectors) {
        let (i, v) = bundle.to_parts();
        assert!(EmbeddingBundle::from_parts(&i, &v).is_ok());
    }
});
