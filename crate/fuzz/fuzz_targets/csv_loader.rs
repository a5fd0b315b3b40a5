#![no_main]

use clicklab::data::{read_csv, FeatureSchema, SequenceField, SparseField};
use libfuzzer_sys::fuzz_target;

fn schema() -> FeatureSchema {
    FeatureSchema {
        sparse: vec![
            SparseField {
                name: "item".to_string(),
                cardinality: 40,
            },
            SparseField {
                name: "user".to_string(),
                cardinality: 25,
            },
        ],
        dense: vec!["x0".to_string()],
        sequence: vec![SequenceField {
            name: "hist".to_string(),
            cardinality: 40,
            max_len: 5,
        }],
        user_id: "user".to_string(),
    }
}

fuzz_target!(|data: &[u8]| {
    // Arbitrary bytes must parse to a dataset or an error, never panic.
    if let Ok(ds) = read_csv(data, &schema()) {
        // anything that parsed must satisfy the dataset invariants
        ds.check_invariants().expect("parsed dataset violates invariants");
    }
});
