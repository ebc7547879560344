#![no_main]

use libfuzzer_sys::fuzz_target;
use stzip::io;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = io::parse_lattice_spec(text) {
        assert!(spec.x0 <= spec.x1 && spec.y0 <= spec.y1);
        assert!(spec.resolution > 0.0);
        // Materialize the grid only when it is small; the parser's own
        // budget check bounds it at four million points, which is more
        // than a fuzz iteration should allocate.
        let nx = ((spec.x1 - spec.x0) / spec.resolution + 0.5).floor() as usize + 1;
        let ny = ((spec.y1 - spec.y0) / spec.resolution + 0.5).floor() as usize + 1;
        if nx.saturating_mul(ny) <= 10_000 {
            assert_eq!(spec.points().len(), nx * ny);
        }
    }
});
