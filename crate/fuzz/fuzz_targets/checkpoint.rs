#![no_main]

use droplet::mc::{Chain, Checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cp) = Checkpoint::parse(text) {
        if let Ok(mut chain) = Chain::restore(&cp) {
            if chain.region().len() <= 4096 {
                chain.sweep();
            }
        }
    }
});
