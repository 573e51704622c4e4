#![no_main]
use halprobe::manifest::ExportManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = ExportManifest::parse(text) {
        assert_eq!(ExportManifest::parse(&m.to_json()).unwrap(), m);
    }
});
