#![no_main]
use halprobe::judge::parse_markdown_report;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_markdown_report(text);
    }
});
