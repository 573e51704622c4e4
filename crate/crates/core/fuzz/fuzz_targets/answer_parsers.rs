#![no_main]
use halprobe::judge::{parse_binary, parse_multi_option};
use libfuzzer_sys::fuzz_target;

// First line lists candidates separated by '|'; the rest is the answer.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let (cands, answer) = text.split_once('\n').unwrap_or(("", text));
    let _ = parse_binary(answer);
    let cands: Vec<String> = cands.split('|').map(str::to_string).collect();
    if let Some(selected) = parse_multi_option(answer, &cands) {
        assert!(selected.iter().all(|s| cands.contains(s)));
    }
});
