#![no_main]

use droplet::contour;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dump) = contour::parse_dump(text) {
        for c in &dump.contours {
            assert!(c.vertices.len() >= 4 && c.vertices.len() % 2 == 0);
        }
    }
});
