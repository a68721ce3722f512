//! Output plumbing: metadata headers and file/stdout writers.
//!
//! Every output embeds the crate version, the resolved invocation, and the
//! seed, so any result is re-derivable from its own metadata. JSON uses
//! sorted keys and CSV comment headers use sorted insertion, keeping repeated
//! runs byte-identical.

use std::io::Write;
use std::path::{Path, PathBuf};

use riskboot::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Ordered metadata block echoed into every output.
#[derive(Debug, Clone, Default)]
pub struct Meta {
    entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new(command: &str) -> Self {
        let mut meta = Meta::default();
        meta.push("version", VERSION);
        meta.push("command", command);
        meta
    }

    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// `# key: value` lines for CSV outputs.
    pub fn csv_header(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }

    /// Metadata as a JSON object (string-valued, insertion order preserved
    /// by sorted serialization of distinct keys).
    pub fn json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        serde_json::Value::Object(map)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to the path, or stdout when no path is given.
pub fn write_output(path: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir).map_err(|e| io_err(p, e))?;
                }
            }
            std::fs::write(p, bytes).map_err(|e| io_err(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

/// Serializes a JSON document (pretty, trailing newline).
pub fn json_bytes(value: &serde_json::Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("JSON serialization");
    bytes.push(b'\n');
    bytes
}
