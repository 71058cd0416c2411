//! The JSON footer every command prints last.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const FOOTER_FORMAT: &str = "latent-terms-provenance/1";

#[derive(Debug, Serialize)]
pub struct Footer {
    format: &'static str,
    tool_version: &'static str,
    command: String,
    inputs: BTreeMap<String, String>,
    params: BTreeMap<String, Value>,
    outputs: BTreeMap<String, Value>,
}

impl Footer {
    pub fn new(command: &str) -> Self {
        Self {
            format: FOOTER_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    /// Records the SHA-256 of a file, or of every file in a directory in
    /// name order.
    pub fn input(&mut self, name: &str, path: &Path) -> io::Result<()> {
        self.inputs
            .insert(name.to_owned(), format!("sha256:{}", digest_path(path)?));
        Ok(())
    }

    pub fn param(&mut self, name: &str, value: impl Serialize) {
        self.params.insert(
            name.to_owned(),
            serde_json::to_value(value).expect("serializable"),
        );
    }

    pub fn output(&mut self, name: &str, value: impl Serialize) {
        self.outputs.insert(
            name.to_owned(),
            serde_json::to_value(value).expect("serializable"),
        );
    }

    pub fn print(&self) {
        crate::outln!("{}", serde_json::to_string(self).expect("serializable"));
    }
}

pub fn digest_path(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    if path.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<io::Result<_>>()?;
        names.sort();
        for p in names.iter().filter(|p| p.is_file()) {
            hasher.update(p.file_name().unwrap().as_encoded_bytes());
            hasher.update([0]);
            hash_file(p, &mut hasher)?;
        }
    } else {
        hash_file(path, &mut hasher)?;
    }
    Ok(hex::encode(hasher.finalize()))
}

fn hash_file(path: &Path, hasher: &mut Sha256) -> io::Result<()> {
    let mut file = File::open(path)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}
