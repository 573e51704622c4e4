#![no_main]
use halprobe::stats::CooccurrenceTable;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((table, hash)) = CooccurrenceTable::from_bytes(data) {
        assert_eq!(table.to_bytes(&hash), data);
    }
});
