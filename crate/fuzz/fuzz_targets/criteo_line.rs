#![no_main]

use libfuzzer_sys::fuzz_target;
use ttrec_harness::criteo::parse_criteo_line;

const HASH_SIZES: [u64; 26] = [1 << 10; 26];

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(rec) = parse_criteo_line(line, 1, &HASH_SIZES) {
        assert!(rec.label == 0.0 || rec.label == 1.0);
        assert!(rec.dense.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!(rec.categorical.iter().zip(HASH_SIZES).all(|(&c, n)| c < n));
    }
});
