#![no_main]

use dsslic::codec::{LayeredBitstream, ParseMode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let strict = LayeredBitstream::parse(data);
    if let Ok(p) = LayeredBitstream::parse_with(data, ParseMode::Resilient) {
        let bytes = p.bitstream.serialize().expect("kept prefix serializes");
        assert!(bytes.len() <= data.len());
        if p.dropped_layers.is_empty() {
            assert_eq!(strict.ok(), Some(p.bitstream));
        }
    } else {
        assert!(strict.is_err());
    }
});
