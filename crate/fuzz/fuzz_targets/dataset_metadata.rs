#![no_main]

use dmliv::datagen::DatasetMetadata;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(meta) = DatasetMetadata::from_json(text) {
            let again = DatasetMetadata::from_json(&meta.to_json().expect("metadata serializes")).expect("round trip");
            assert_eq!(again.to_json().unwrap(), meta.to_json().unwrap());
        }
    }
});
