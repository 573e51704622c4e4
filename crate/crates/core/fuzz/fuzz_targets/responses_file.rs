#![no_main]
use halprobe::evaluator::{parse_responses, render_responses};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((header, responses)) = parse_responses(text) {
        let back = parse_responses(&render_responses(&header, &responses)).unwrap();
        assert_eq!(back, (header, responses));
    }
});
