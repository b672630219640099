#![no_main]

use dsslic::codec::{decode_label_layer, PngCodec};
use libfuzzer_sys::fuzz_target;

// [num_labels, height, width, png...]
fuzz_target!(|data: &[u8]| {
    let [n, h, w, png @ ..] = data else {
        return;
    };
    let (n, h, w) = (*n as usize, *h as usize, *w as usize);
    if let Ok(s) = decode_label_layer(&PngCodec, png, h, w, n) {
        assert_eq!((s.height(), s.width()), (h, w));
        assert!(s.labels().iter().all(|&l| (l as usize) < n));
    }
});
