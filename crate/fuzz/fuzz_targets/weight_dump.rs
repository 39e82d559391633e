#![no_main]

use libfuzzer_sys::fuzz_target;
use randprune_cli::hist::{histogram, read_dump, write_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(dump) = read_dump(data) {
        let rows = histogram(&dump, 7);
        assert_eq!(rows.len(), 7 * dump.layers.len());
        let mut out = Vec::new();
        write_dump(&mut out, &dump).unwrap();
        assert_eq!(read_dump(out.as_slice()).unwrap(), dump);
    }
});
