#![no_main]

use droplet::snapshot;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok((cfg, bc)) = snapshot::parse(text) {
        // anything accepted must survive a write/parse cycle unchanged
        let again = snapshot::write(&cfg, &bc).expect("parsed snapshot writes");
        let (cfg2, bc2) = snapshot::parse(&again).expect("written snapshot parses");
        assert_eq!(cfg2.to_occupancy(), cfg.to_occupancy());
        assert_eq!(bc2, bc);
    }
});
