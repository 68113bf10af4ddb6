//! Provenance attached to every emitted report.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to rerun the computation that produced a report.
///
/// Wall-clock times are deliberately left out so that reports are
/// byte-for-byte reproducible; they go to the log instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new<C: Serialize>(config: &C, seed: Option<u64>) -> Self {
        let config = serde_json::to_value(config).expect("config serializes");
        let bytes = serde_json::to_vec(&config).expect("value serializes");
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: Vec::new(),
            config,
            config_sha256: sha256_hex(&bytes),
            seed,
            inputs: Vec::new(),
        }
    }

    pub fn with_command(mut self, argv: &[String]) -> Self {
        self.command = argv.to_vec();
        self
    }

    pub fn add_input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn config_hash_is_stable() {
        let a = RunManifest::new(&serde_json::json!({"seed": 7, "reps": 10}), Some(7));
        let b = RunManifest::new(&serde_json::json!({"seed": 7, "reps": 10}), Some(7));
        assert_eq!(a, b);
        assert_eq!(a.config_sha256.len(), 64);
    }
}
