//! Run manifests: every output directory records how its artifacts were made.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliResult;

/// Provenance record written as `manifest.json` next to each run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    /// Full command line, program name included.
    pub command_line: String,
    /// FNV-1a hash of the command line, hex-encoded; identifies the configuration.
    pub config_hash: String,
    /// Master seed the command ran with, when it consumes randomness.
    pub master_seed: Option<u64>,
    /// Version of the tool that produced the outputs.
    pub tool_version: String,
    /// Wall-clock time of the run, seconds since the Unix epoch.
    pub timestamp_epoch_seconds: u64,
    /// Paths of the artifacts, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

/// 64-bit FNV-1a over raw bytes; stable, dependency-free content hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |hash, &b| (hash ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Writes `manifest.json` into `out_dir` describing the current invocation.
///
/// `outputs` are the artifact paths the command produced; they are stored
/// relative to `out_dir` so the directory can be moved wholesale.
pub fn write_manifest(
    out_dir: &Path,
    master_seed: Option<u64>,
    outputs: &[&PathBuf],
) -> CliResult<PathBuf> {
    let command_line: Vec<String> = std::env::args().collect();
    let command_line = command_line.join(" ");
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = RunManifest {
        config_hash: format!("{:016x}", fnv1a64(command_line.as_bytes())),
        command_line,
        master_seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp_epoch_seconds: timestamp,
        outputs: outputs
            .iter()
            .map(|p| {
                p.strip_prefix(out_dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
    };
    let path = out_dir.join("manifest.json");
    let mut body = serde_json::to_string_pretty(&manifest)
        .expect("manifest serialization cannot fail");
    body.push('\n');
    std::fs::write(&path, body)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a64_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325, "empty input");
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c, "single byte");
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8, "multi byte");
    }

    #[test]
    fn manifest_outputs_are_relative() {
        let dir = tempfile::tempdir().expect("create temp dir");
        let artifact = dir.path().join("table.csv");
        let path = write_manifest(dir.path(), Some(7), &[&artifact]).expect("write manifest");
        let body = std::fs::read_to_string(path).expect("read manifest back");
        let value: serde_json::Value = serde_json::from_str(&body).expect("valid json");
        assert_eq!(
            value["outputs"][0], "table.csv",
            "artifact path should be relative to the manifest directory"
        );
        assert_eq!(value["master_seed"], 7, "seed should round-trip");
    }
}
