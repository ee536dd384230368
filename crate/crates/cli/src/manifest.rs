//! Run manifests: the resolved settings of a run plus bookkeeping keys.
//!
//! A manifest is itself a valid `--config` file for the same subcommand;
//! the `manifest.` keys are skipped on load.

use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use eopt::error::Result;
use eopt::io::write_atomic;

pub const MANIFEST_PREFIX: &str = "manifest.";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: Option<u64>,
    pub dataset_sha256: Option<String>,
    pub inputs: Vec<(String, PathBuf)>,
    pub outputs: Vec<(String, PathBuf)>,
    pub config: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: Vec<(String, String)>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            seed: None,
            dataset_sha256: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config,
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# eopt run manifest; usable as --config for the same subcommand\n");
        let mut line = |k: &str, v: &str| out.push_str(&format!("{MANIFEST_PREFIX}{k} = {v}\n"));
        line("subcommand", &self.subcommand);
        line("version", VERSION);
        if let Some(seed) = self.seed {
            line("seed", &seed.to_string());
        }
        if let Some(sum) = &self.dataset_sha256 {
            line("dataset_sha256", sum);
        }
        for (k, p) in &self.inputs {
            line(&format!("input.{k}"), &p.display().to_string());
        }
        for (k, p) in &self.outputs {
            line(&format!("output.{k}"), &p.display().to_string());
        }
        for (k, v) in &self.config {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    io::copy(&mut File::open(path)?, &mut hasher)?;
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// `<path>.manifest`
pub fn beside(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use eopt::kv::KeyValues;

    #[test]
    fn render_parses_as_config() {
        let mut m = RunManifest::new("forecast", vec![("horizon".into(), "30".into())]);
        m.seed = Some(4);
        m.inputs.push(("data".into(), "d.eopt".into()));
        let mut kv = KeyValues::parse(&m.render()).unwrap();
        assert_eq!(kv.take::<String>("manifest.subcommand").unwrap().as_deref(), Some("forecast"));
        assert_eq!(kv.take::<u32>("horizon").unwrap(), Some(30));
        assert_eq!(beside(Path::new("a/p.csv")), PathBuf::from("a/p.csv.manifest"));
    }

    #[test]
    fn sha256_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
