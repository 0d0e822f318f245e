use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Record of one command invocation, written next to its artifacts. Holds
/// no timestamps so identical runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub args: Vec<String>,
    pub config_digest: String,
    pub stub_endpoint: bool,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub struct Tracker {
    base: PathBuf,
    manifest: RunManifest,
}

impl Tracker {
    pub fn new(base: &Path, command: &str, args: Vec<String>, config_digest: &str, stub: bool) -> Self {
        Self {
            base: base.to_path_buf(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                args,
                config_digest: config_digest.to_string(),
                stub_endpoint: stub,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.base).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    pub fn input(&mut self, p: &Path) -> Result<()> {
        let d = digest_file(p)?;
        self.manifest.inputs.insert(self.rel(p), d);
        Ok(())
    }

    pub fn output(&mut self, p: &Path) -> Result<()> {
        let d = digest_file(p)?;
        self.manifest.outputs.insert(self.rel(p), d);
        Ok(())
    }

    pub fn finish(self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(format!("{}.run.json", self.manifest.command));
        write_json(&path, &self.manifest)?;
        Ok(path)
    }
}

pub fn digest_file(p: &Path) -> Result<String> {
    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut body = serde_json::to_vec_pretty(value)?;
    body.push(b'\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w =
        BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}
