//! Run manifests: a JSON record of what was run and what it produced.
//!
//! Every pipeline command writes `manifest.json` into its output directory.
//! The manifest carries a `config_hash` (canonical hash of the parsed config,
//! invariant under TOML key reordering), the seed and generator, integrator
//! settings, the artifact list with per-file SHA-256 hashes, wall times, and
//! a `content_hash` over everything except the wall times — two runs of the
//! same config produce the same `content_hash` even though their timings
//! differ.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use coevolve_core::trajectory::TimeGrid;

use crate::{CliError, CliResult};

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Serialize a JSON value with object keys sorted, independent of the map
/// implementation behind `serde_json`.
pub fn canonical_json_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => "null".into(),
        serde_json::Value::Bool(b) => b.to_string(),
        serde_json::Value::Number(n) => n.to_string(),
        serde_json::Value::String(s) => {
            serde_json::to_string(s).expect("strings serialize")
        }
        serde_json::Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(canonical_json_string).collect();
            format!("[{}]", inner.join(","))
        }
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys
                .into_iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        serde_json::to_string(k).expect("strings serialize"),
                        canonical_json_string(&map[k])
                    )
                })
                .collect();
            format!("{{{}}}", inner.join(","))
        }
    }
}

/// Convert a parsed TOML document into JSON for canonical hashing.
pub fn toml_to_json(v: &toml::Value) -> serde_json::Value {
    match v {
        toml::Value::String(s) => serde_json::Value::String(s.clone()),
        toml::Value::Integer(i) => serde_json::Value::from(*i),
        toml::Value::Float(f) => serde_json::Value::from(*f),
        toml::Value::Boolean(b) => serde_json::Value::Bool(*b),
        toml::Value::Datetime(d) => serde_json::Value::String(d.to_string()),
        toml::Value::Array(items) => {
            serde_json::Value::Array(items.iter().map(toml_to_json).collect())
        }
        toml::Value::Table(table) => {
            let mut map = serde_json::Map::new();
            for (k, val) in table {
                map.insert(k.clone(), toml_to_json(val));
            }
            serde_json::Value::Object(map)
        }
    }
}

/// Canonical hash of a parsed config: stable under key reordering and
/// formatting changes that leave the parsed data identical.
pub fn config_hash(raw: &toml::Value) -> String {
    sha256_hex(canonical_json_string(&toml_to_json(raw)).as_bytes())
}

/// One produced file: its name inside the output directory and its hash.
#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
}

/// Integrator settings recorded for reproducibility.
#[derive(Debug, Clone, Serialize)]
pub struct IntegratorInfo {
    pub scheme: String,
    pub t_end: f64,
    pub steps: usize,
}

/// The run manifest; see the module docs for hashing semantics.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub generator: String,
    pub library_version: String,
    pub integrator: IntegratorInfo,
    pub artifacts: Vec<ArtifactRecord>,
    pub content_hash: String,
    pub wall_times_ms: BTreeMap<String, u64>,
}

impl Manifest {
    /// Assemble a manifest and fill in its `content_hash`. Artifacts are
    /// sorted by path so the hash does not depend on emission order.
    pub fn build(
        command: &str,
        config_hash: String,
        seed: u64,
        grid: TimeGrid,
        mut artifacts: Vec<ArtifactRecord>,
        wall_times_ms: BTreeMap<String, u64>,
    ) -> Manifest {
        artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let mut m = Manifest {
            command: command.into(),
            config_hash,
            seed,
            generator: "chacha8".into(),
            library_version: env!("CARGO_PKG_VERSION").into(),
            integrator: IntegratorInfo {
                scheme: "heun".into(),
                t_end: grid.t_end(),
                steps: grid.steps(),
            },
            artifacts,
            content_hash: String::new(),
            wall_times_ms,
        };
        m.content_hash = m.compute_content_hash();
        m
    }

    /// Hash of the manifest content excluding wall times (and the hash field
    /// itself).
    pub fn compute_content_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        let obj = v.as_object_mut().expect("manifest is an object");
        obj.remove("wall_times_ms");
        obj.remove("content_hash");
        sha256_hex(canonical_json_string(&v).as_bytes())
    }

    /// Write `manifest.json` into `out_dir` and return its path.
    pub fn write(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, format!("{text}\n"))?;
        Ok(path)
    }
}

/// Hash a just-written artifact file inside `out_dir`.
pub fn artifact_record(out_dir: &Path, name: &str) -> CliResult<ArtifactRecord> {
    let bytes = std::fs::read(out_dir.join(name))?;
    Ok(ArtifactRecord {
        path: name.into(),
        sha256: sha256_hex(&bytes),
    })
}
