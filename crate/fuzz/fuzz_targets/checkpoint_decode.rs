#![no_main]

use libfuzzer_sys::fuzz_target;
use ttrec_core::Checkpoint;

fuzz_target!(|data: &[u8]| {
    // Anything that decodes must re-encode to a container that decodes the same.
    if let Ok(c) = Checkpoint::from_bytes(data) {
        let bytes = c.to_bytes();
        let again = Checkpoint::from_bytes(&bytes).expect("re-encoded checkpoint decodes");
        assert!(again.bit_eq(&c));
        assert_eq!(again.to_bytes(), bytes);
        for t in c.tables() {
            let _ = c.table::<f32>(&t.name);
            let _ = c.table::<f64>(&t.name);
        }
    }
});
