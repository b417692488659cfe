#![no_main]

use libfuzzer_sys::fuzz_target;
use skintone::sreds::{project_sreds, DiffuseFeature, SredsModel};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = SredsModel::from_json_str(text) {
            let _ = project_sreds(&model, &DiffuseFeature { vector: [0.2, 0.2, 0.2] });
        }
    }
});
