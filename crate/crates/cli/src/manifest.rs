//! Run manifests: enough to re-run a command and check its outputs byte for byte.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{CommandKind, Output};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Seconds since the Unix epoch.
pub fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    /// Fully resolved config, flags already merged.
    pub config: serde_json::Value,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(kind: &CommandKind, output: &Output, started: f64) -> Self {
        let inputs = output
            .inputs
            .iter()
            .map(|p| FileDigest {
                path: p.clone(),
                // Inputs were read moments ago; an unreadable one leaves an empty digest.
                sha256: std::fs::read(p).map(|b| sha256_hex(&b)).unwrap_or_default(),
            })
            .collect();
        let outputs = output
            .files
            .iter()
            .map(|(name, bytes)| FileDigest {
                path: PathBuf::from(name),
                sha256: sha256_hex(bytes),
            })
            .collect();
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: kind.name().to_string(),
            seed: kind.seed(),
            config: kind.config_json(),
            started_unix: started,
            finished_unix: now(),
            inputs,
            outputs,
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn command_kind(&self) -> anyhow::Result<CommandKind> {
        CommandKind::from_parts(&self.command, self.config.clone())
            .with_context(|| format!("manifest config for '{}'", self.command))
    }

    /// Fails when an input file changed since the recorded run.
    pub fn verify_inputs(&self) -> anyhow::Result<()> {
        for input in &self.inputs {
            let bytes = std::fs::read(&input.path)
                .with_context(|| format!("reading input {}", input.path.display()))?;
            if sha256_hex(&bytes) != input.sha256 {
                bail!(
                    "input {} changed since the recorded run",
                    input.path.display()
                );
            }
        }
        Ok(())
    }

    /// Names of outputs missing from `other` or whose digests differ.
    pub fn output_differences(&self, other: &RunManifest) -> Vec<String> {
        let mut diffs: Vec<String> = self
            .outputs
            .iter()
            .filter(|o| !other.outputs.iter().any(|f| f == *o))
            .map(|o| o.path.display().to_string())
            .collect();
        diffs.extend(
            other
                .outputs
                .iter()
                .filter(|f| !self.outputs.iter().any(|o| o.path == f.path))
                .map(|f| format!("{} (unexpected)", f.path.display())),
        );
        diffs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::FuseConfig;

    #[test]
    fn digest_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trips_and_diffs() {
        let kind = CommandKind::Fuse(FuseConfig::default());
        let out = Output {
            files: vec![
                ("a.json".into(), b"1".to_vec()),
                ("b.json".into(), b"2".to_vec()),
            ],
            ..Output::default()
        };
        let m = RunManifest::new(&kind, &out, now());
        let back: RunManifest = serde_json::from_slice(&m.to_json()).unwrap();
        assert_eq!(back.command_kind().unwrap(), kind);
        assert!(m.output_differences(&back).is_empty());

        let changed = Output {
            files: vec![
                ("a.json".into(), b"1".to_vec()),
                ("b.json".into(), b"3".to_vec()),
            ],
            ..Output::default()
        };
        let other = RunManifest::new(&kind, &changed, now());
        assert_eq!(m.output_differences(&other), vec!["b.json".to_string()]);
    }
}
