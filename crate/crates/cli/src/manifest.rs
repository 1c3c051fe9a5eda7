//! Run manifests: a JSON sidecar written next to every output, recording the
//! inputs (with content hashes), the configuration, and the output hashes.
//! `rerun` re-executes the recorded command and checks that the produced
//! bytes still hash to the recorded values.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version of the emitted CSV/JSON column schemas. Recorded in every
/// manifest; bump on any column or format change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const TOOL_NAME: &str = "factorcli";

/// A file path together with the SHA-256 of its contents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileRef {
    pub fn new(path: PathBuf, bytes: &[u8]) -> Self {
        FileRef {
            sha256: sha256_hex(bytes),
            path,
        }
    }
}

/// The manifest field set is fixed: fields that do not apply to a command are
/// serialized as null rather than omitted, so every manifest has the same
/// shape. `created_unix` is informational and is not compared on rerun.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub csv_schema: u32,
    pub created_unix: u64,
    pub command: String,
    pub model: FileRef,
    pub data: Option<FileRef>,
    pub rep: Option<String>,
    pub reps: Option<Vec<String>>,
    pub policy: Option<String>,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub steps: Option<usize>,
    pub format: Option<String>,
    pub query: Option<Vec<String>>,
    pub evidence: Option<Vec<String>>,
    pub out: PathBuf,
    pub outputs: Vec<FileRef>,
}

impl Manifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text.into_bytes()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Sidecar path for an output path or prefix: `out.csv.manifest.json` next to
/// `out.csv`. A plain append keeps the rule uniform for the prefix-style
/// outputs of `compare-reps`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = OsString::from(out.as_os_str());
    s.push(".manifest.json");
    PathBuf::from(s)
}
