#![no_main]

use libfuzzer_sys::fuzz_target;
use skintone::analysis::ScoreTable;

fuzz_target!(|data: &[u8]| {
    let _ = ScoreTable::read_csv(data);
});
