#![no_main]

use dsslic::weights::WeightsFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = WeightsFile::parse(data) {
        let bytes = w.to_bytes().expect("parsed weights serialize");
        assert_eq!(WeightsFile::parse(&bytes).expect("reparse"), w);
    }
});
