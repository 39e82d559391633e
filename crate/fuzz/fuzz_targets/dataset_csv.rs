#![no_main]

use libfuzzer_sys::fuzz_target;
use randprune::data::{read_csv, LabelColumn};

fuzz_target!(|data: &[u8]| {
    for label in [LabelColumn::Name("label".into()), LabelColumn::Index(0)] {
        if let Ok(ds) = read_csv(data, &label) {
            assert_eq!(ds.inputs().rows(), ds.labels().len());
            assert!(ds.labels().iter().all(|&l| l < ds.class_count()));
        }
    }
});
