#![no_main]

use eopt::data::{decode_dataset, encode_dataset, DatasetView};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let view = DatasetView::parse(data);
    if let Ok(ds) = decode_dataset(data) {
        assert!(view.is_ok());
        let again = decode_dataset(&encode_dataset(&ds)).expect("re-encoded dataset decodes");
        assert_eq!(again.n_index(), ds.n_index());
        assert_eq!(again.date_offsets(), ds.date_offsets());
    }
});
