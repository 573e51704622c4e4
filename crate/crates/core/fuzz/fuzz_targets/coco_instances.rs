#![no_main]
use halprobe::corpus::parse_coco_instances;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_coco_instances(text);
    }
});
