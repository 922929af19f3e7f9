//! Run manifest written into every output directory.
//!
//! ```text
//! command: train
//! config: configs/lru.txt
//! seed: 7
//! out: runs/lru
//! config_hash: 3f1c...
//! args: --agent tabular --max-steps 2000000
//! ```
//!
//! The hash is SHA-256 over `blob <len>\0<config text>`, the content hash
//! git uses for file objects.

use std::fmt::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{CliError, IoContext, Result};

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub seed: u64,
    pub out_dir: String,
    pub config_hash: String,
    /// Command-specific arguments, space separated.
    pub args: String,
}

pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "config: {}", self.config_path);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "out: {}", self.out_dir);
        let _ = writeln!(s, "config_hash: {}", self.config_hash);
        let _ = writeln!(s, "args: {}", self.args);
        s
    }

    #[cfg_attr(not(test), allow(dead_code))]
    pub fn parse(text: &str) -> Result<Self> {
        let mut fields = text.lines().filter(|l| !l.trim().is_empty()).map(|l| {
            l.split_once(": ")
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .or_else(|| l.strip_suffix(':').map(|k| (k.to_string(), String::new())))
                .ok_or_else(|| CliError::Usage(format!("manifest: malformed line `{l}`")))
        });
        let mut take = |key: &str| -> Result<String> {
            let (k, v) = fields.next().ok_or_else(|| CliError::Usage(format!("manifest: missing `{key}`")))??;
            if k != key {
                return Err(CliError::Usage(format!("manifest: expected `{key}`, found `{k}`")));
            }
            Ok(v)
        };
        Ok(Self {
            command: take("command")?,
            config_path: take("config")?,
            seed: take("seed")?.parse().map_err(|_| CliError::Usage("manifest: bad seed".into()))?,
            out_dir: take("out")?,
            config_hash: take("config_hash")?,
            args: take("args")?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, self.render()).at(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_blob_format() {
        // `printf 'hello\n' | git hash-object --object-format=sha256 --stdin`
        assert_eq!(
            content_hash("hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn round_trips() {
        let m = RunManifest {
            command: "search".into(),
            config_path: "preset:toy".into(),
            seed: 3,
            out_dir: "out".into(),
            config_hash: content_hash("x"),
            args: String::new(),
        };
        assert_eq!(RunManifest::parse(&m.render()).unwrap(), m);
    }
}
