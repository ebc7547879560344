#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

const MAX_INPUT: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    if let Ok(block) = io::read_named_csv(data) {
        let text = io::write_named_csv(&block);
        let again = io::read_named_csv(text.as_bytes()).expect("rewritten draw file must parse");
        assert_eq!(again, block);
    }
});
