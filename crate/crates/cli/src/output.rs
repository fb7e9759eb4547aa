//! Output directory bookkeeping: every written file is hashed into `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use poslab::datagen::fmt_f64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    config: &'a serde_json::Value,
    files: &'a BTreeMap<String, FileEntry>,
}

pub struct Output {
    dir: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_owned(), message: e.to_string() })?;
        Ok(Output { dir: dir.to_owned(), files: BTreeMap::new() })
    }

    /// Writes `bytes` to `rel` (forward slashes) under the output directory.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Io { path: parent.to_owned(), message: e.to_string() })?;
        }
        std::fs::write(&path, bytes).map_err(|e| CliError::Io { path: path.clone(), message: e.to_string() })?;
        log::info!("wrote {}", path.display());
        self.files.insert(rel.to_owned(), FileEntry { sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        self.write(rel, &to_json(value))
    }

    /// Writes `manifest.json`, which lists every other file with its checksum.
    pub fn finish(self, command: &str, seed: u64, config: &serde_json::Value) -> Result<(), CliError> {
        let manifest = Manifest {
            tool: "poslab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            files: &self.files,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, to_json(&manifest)).map_err(|e| CliError::Io { path, message: e.to_string() })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("outputs are plain data");
    v.push(b'\n');
    v
}

/// CSV table with a header row; floats use 17 significant digits.
pub struct Csv {
    text: String,
}

pub enum Cell {
    F(f64),
    U(u64),
    B(bool),
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        Csv { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = Cell>) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            first = false;
            match c {
                Cell::F(x) => self.text.push_str(&fmt_f64(x)),
                Cell::U(u) => {
                    let _ = write!(self.text, "{u}");
                }
                Cell::B(b) => self.text.push_str(if b { "1" } else { "0" }),
            }
        }
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// `prefix0, prefix1, ...` column names.
pub fn coords(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

/// Subdirectory prefix of trial `t` when a run has several trials.
pub fn trial_prefix(trials: usize, t: usize) -> String {
    if trials > 1 {
        format!("trial_{t:03}/")
    } else {
        String::new()
    }
}
