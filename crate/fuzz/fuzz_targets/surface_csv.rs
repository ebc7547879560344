#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

const MAX_INPUT: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    if let Ok(rows) = io::read_surface(data) {
        let text = io::write_surface(&rows);
        let again = io::read_surface(text.as_bytes()).expect("rewritten surface must parse");
        assert_eq!(again, rows);
    }
});
