#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // image bytes come straight from dataset directories; decoding must
    // never panic on malformed files
    let _ = skintone::ingestion::decode_image(data);
});
