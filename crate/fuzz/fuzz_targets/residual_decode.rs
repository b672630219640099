#![no_main]

use dsslic::codec::{minmax_denormalize, ResidualCodec, UniformQuantizer};
use libfuzzer_sys::fuzz_target;

// [quality, height, width, png...]
fuzz_target!(|data: &[u8]| {
    let [q, h, w, png @ ..] = data else {
        return;
    };
    if let Ok(img) = UniformQuantizer.decode(png, *q, *w as u32, *h as u32) {
        assert_eq!(img.dimensions(), (*w as u32, *h as u32));
        let r = minmax_denormalize(img.as_raw(), -255.0, 255.0).expect("valid range");
        assert!(r.iter().all(|v| v.abs() <= 255.0 + 1e-9));
    }
});
