//! Run manifests: what was run, on which inputs, producing which files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qcinf_core::error::{QcError, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Every flag after defaults and environment overrides are applied.
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_seconds: Option<f64>,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn new(command: &str, flags: serde_json::Value, seed: Option<u64>, threads: usize) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            flags,
            seed,
            threads,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            wall_seconds: None,
            exit_code: 0,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| QcError::Io(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    /// Writes `contents` to `path` and records it as an output.
    pub fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        std::fs::write(&path, contents).map_err(|e| QcError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(path);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

/// `<prefix><suffix>`, keeping any directory part of the prefix.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes_append_to_the_prefix() {
        assert_eq!(with_suffix(Path::new("out/run"), ".csv"), PathBuf::from("out/run.csv"));
        assert_eq!(with_suffix(Path::new("a.b"), ".json"), PathBuf::from("a.b.json"));
    }

    #[test]
    fn inputs_are_hashed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        std::fs::write(&path, "abc").unwrap();
        let mut m = RunManifest::new("test", serde_json::json!({}), None, 1);
        m.add_input(&path).unwrap();
        let h = m.inputs.values().next().unwrap();
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(!m.to_json().contains("wall_seconds"));
    }
}
