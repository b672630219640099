#![no_main]

use dsslic::codec::LayeredBitstream;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(b) = LayeredBitstream::parse(data) {
        // anything accepted must reserialize to the same bytes
        let bytes = b.serialize().expect("parsed container serializes");
        assert_eq!(bytes, data);
        assert_eq!(b.layer_sizes().total(), data.len());
    }
});
