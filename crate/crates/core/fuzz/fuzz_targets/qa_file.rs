#![no_main]
use halprobe::qa::{parse_qa, render_qa};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok((header, items)) = parse_qa(text) {
        let (h, back) = parse_qa(&render_qa(&header, &items)).unwrap();
        assert_eq!(h, header);
        assert_eq!(back.len(), items.len());
    }
});
