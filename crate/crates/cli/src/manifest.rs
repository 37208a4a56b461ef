//! Run manifests: content digests of inputs and outputs plus the exact
//! configuration and seed, so a rerun can be verified byte for byte.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = File::open(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> RunManifest {
        RunManifest {
            tool: "koopman".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Record an input under the path the user supplied.
    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Record an output under its bare file name, so manifests agree across
    /// output directories.
    pub fn add_output(&mut self, path: &Path) -> Result<(), CliError> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.push(FileDigest {
            path: name,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("manifest.json");
        let mut file = File::create(&path)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        let text = serde_json::to_string_pretty(self)?;
        file.write_all(text.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        std::fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_file(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_roundtrips_and_strips_output_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("input.csv");
        std::fs::write(&data, b"x\n1\n").unwrap();
        let product = dir.path().join("model.json");
        std::fs::write(&product, b"{}").unwrap();

        let mut manifest = RunManifest::new("train", 7);
        manifest.add_input(&data).unwrap();
        manifest.add_output(&product).unwrap();
        manifest.write(dir.path()).unwrap();

        let text = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.command, "train");
        assert_eq!(back.seed, 7);
        assert_eq!(back.outputs[0].path, "model.json");
        assert!(back.inputs[0].path.ends_with("input.csv"));
        assert_eq!(back.inputs[0].sha256.len(), 64);
    }
}
