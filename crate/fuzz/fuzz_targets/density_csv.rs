#![no_main]

use brodinger_core::io::parse_density_csv;
use brodinger_core::TorusGrid;
use libfuzzer_sys::fuzz_target;

// first byte picks the grid, the rest is the table
fuzz_target!(|data: &[u8]| {
    let Some((&head, rest)) = data.split_first() else {
        return;
    };
    let d = 1 + (head & 1) as usize;
    let m = 1 + (head >> 1) as usize % 32;
    let Ok(grid) = TorusGrid::new(d, m) else {
        return;
    };
    if let Ok(text) = std::str::from_utf8(rest) {
        let _ = parse_density_csv(text, grid);
    }
});
