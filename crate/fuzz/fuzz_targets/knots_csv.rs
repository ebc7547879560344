#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

const MAX_INPUT: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    if let Ok(knots) = io::read_knots(data) {
        let text = io::write_knots(&knots);
        let again = io::read_knots(text.as_bytes()).expect("rewritten knot file must parse");
        assert_eq!(again.points(), knots.points());
    }
});
