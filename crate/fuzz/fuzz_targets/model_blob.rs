#![no_main]

use dmliv::estimation::EstimateRecord;
use dmliv::learners::{from_blob, CounterfactualModel, DensityModel, Regressor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = from_blob::<Regressor>("regressor", text);
    let _ = from_blob::<DensityModel>("density", text);
    let _ = from_blob::<CounterfactualModel>("counterfactual", text);
    let _ = EstimateRecord::from_json(text);
});
