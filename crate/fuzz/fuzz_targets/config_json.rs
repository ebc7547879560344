#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

const MAX_INPUT: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    if let Ok(config) = io::read_config(data) {
        // A validated configuration has only finite numbers in it, so the
        // serde round trip must reproduce it exactly and still validate.
        let text = serde_json::to_string(&config).expect("validated config must serialize");
        let again = io::read_config(text.as_bytes()).expect("reserialized config must parse");
        assert_eq!(again, config);
    }
});
