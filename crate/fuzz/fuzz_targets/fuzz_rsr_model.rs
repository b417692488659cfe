#![no_main]

use libfuzzer_sys::fuzz_target;
use skintone::rsr::RsrModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(model) = RsrModel::from_json_str(text) {
            // anything that validates must also score without panicking
            let _ = skintone::rsr::score_rsr(&model, [0.3, 0.3, 0.3]);
        }
    }
});
