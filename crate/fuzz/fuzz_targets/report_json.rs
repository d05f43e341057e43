#![no_main]

use alh_compactify::harness::ExperimentReport;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = ExperimentReport::from_json(data);
});
