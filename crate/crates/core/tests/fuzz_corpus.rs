//! The checked-in fuzz seeds decode cleanly and survive truncation.

use std::fs;
use std::path::{Path, PathBuf};

use eopt::data::{decode_dataset, parse_labels};
use eopt::forecasting::parse_trajectories;
use eopt::kv::KeyValues;
use eopt::model::decode_checkpoint;
use eopt::training::LossLog;

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files
}

fn text(path: &Path) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn binary_seeds_decode_and_truncations_fail() {
    for path in seeds("dataset_decode") {
        let bytes = fs::read(&path).unwrap();
        decode_dataset(&bytes).unwrap();
        assert!(decode_dataset(&bytes[..bytes.len() - 1]).is_err());
    }
    for path in seeds("checkpoint_decode") {
        let bytes = fs::read(&path).unwrap();
        decode_checkpoint(&bytes).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() / 2]).is_err());
    }
}

#[test]
fn text_seeds_parse() {
    for path in seeds("kv_parse") {
        KeyValues::parse(&text(&path)).unwrap();
    }
    for path in seeds("labels_parse") {
        assert!(!parse_labels(&text(&path)).unwrap().is_empty());
    }
    for path in seeds("trajectories_parse") {
        assert!(!parse_trajectories(&text(&path)).unwrap().is_empty());
    }
    for path in seeds("loss_log_parse") {
        assert!(!LossLog::parse_csv(&text(&path)).unwrap().rows.is_empty());
    }
}
