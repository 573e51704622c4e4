#![no_main]
use halprobe::corpus::CategorySpace;
use halprobe::search::read_distractor_sets;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let space = CategorySpace::new(["dog", "cat", "car", "bus", "lamp", "tree"]).unwrap();
    let _ = read_distractor_sets(text, &space);
});
