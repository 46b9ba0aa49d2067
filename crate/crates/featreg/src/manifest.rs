//! Run manifest: everything needed to repeat a CLI invocation.

use std::collections::BTreeMap;
use std::path::Path;

use featreg_core::{EncoderConfig, LossBreakdown, RegistrationConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::synth::SynthConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

impl FileRecord {
    pub fn new(role: &str, path: &Path, bytes: &[u8]) -> Self {
        Self {
            role: role.to_owned(),
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegistrationConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub tool_version: String,
    pub config: ConfigSnapshot,
    pub inputs: Vec<FileRecord>,
    pub seed: Option<u64>,
    /// Worker threads; `None` means the rayon default (all cores).
    pub threads: Option<usize>,
    /// Wall-clock milliseconds per stage. The only field that varies between
    /// otherwise identical runs.
    pub timings_ms: BTreeMap<String, f64>,
    pub outputs: Vec<FileRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity_loss: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<LossBreakdown>,
}

impl RunManifest {
    pub fn new(command: &str, threads: Option<usize>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: ConfigSnapshot {
                encoder: None,
                registration: None,
                synth: None,
            },
            inputs: Vec::new(),
            seed: None,
            threads,
            timings_ms: BTreeMap::new(),
            outputs: Vec::new(),
            identity_loss: None,
            final_loss: None,
        }
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
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn json_round_trip() {
        let mut m = RunManifest::new("register", Some(1));
        m.config.registration = Some(RegistrationConfig::default());
        m.timings_ms.insert("encode".into(), 1.5);
        let text = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        assert!(text.contains("\"lambda\":1.0"));
    }
}
