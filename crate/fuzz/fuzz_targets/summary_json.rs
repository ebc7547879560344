#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

const MAX_INPUT: usize = 1 << 16;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    if let Ok(summary) = io::read_summary(data) {
        // JSON number syntax can still overflow to infinity (1e999), and
        // non-finite floats do not survive serialization, so only the
        // finite case is required to round-trip.
        let finite = summary.parameters.iter().all(|p| {
            [p.mean, p.sd, p.q025, p.q975].iter().all(|v| v.is_finite())
        });
        if finite {
            let text = io::write_summary(&summary).expect("finite summary must serialize");
            let again = io::read_summary(text.as_bytes()).expect("rewritten summary must parse");
            assert_eq!(again, summary);
        }
    }
});
