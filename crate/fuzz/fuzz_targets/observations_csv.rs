#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

// Cap input size so pathological header widths keep exec times sane.
const MAX_INPUT: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    if let Ok(dataset) = io::read_observations(data) {
        // Anything the reader accepts must survive a write/read cycle
        // unchanged; floats are written with 17 significant digits so the
        // comparison is exact.
        let text = io::write_observations(&dataset);
        let again = io::read_observations(text.as_bytes()).expect("rewritten dataset must parse");
        assert_eq!(again.observations(), dataset.observations());
    }
});
