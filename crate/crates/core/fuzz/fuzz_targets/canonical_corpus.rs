#![no_main]
use halprobe::corpus::parse_canonical;
use libfuzzer_sys::fuzz_target;

// First line is the header, the rest are records.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (header, records) = text.split_once('\n').unwrap_or((text, ""));
    if let Ok(corpus) = parse_canonical(header, records) {
        let (h, r) = corpus.to_canonical();
        assert_eq!(parse_canonical(&h, &r).unwrap(), corpus);
    }
});
