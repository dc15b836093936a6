#![no_main]

use dmliv::datagen::{DatasetMetadata, ObservationSet};
use libfuzzer_sys::fuzz_target;

// Input: optional sidecar JSON, a NUL byte, then the CSV body.
fuzz_target!(|data: &[u8]| {
    let (meta, body) = match data.iter().position(|&b| b == 0) {
        Some(i) => {
            (std::str::from_utf8(&data[..i]).ok().and_then(|t| DatasetMetadata::from_json(t).ok()), &data[i + 1..])
        }
        None => (None, data),
    };
    if let Ok(obs) = ObservationSet::from_csv_reader(body, meta.as_ref()) {
        let mut out = Vec::new();
        obs.write_csv(&mut out).expect("parsed data writes back");
        let again = ObservationSet::from_csv_reader(out.as_slice(), meta.as_ref()).expect("written data parses");
        assert_eq!(again.len(), obs.len());
    }
});
