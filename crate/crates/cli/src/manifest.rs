//! Run manifests: what was run, on which inputs, and what came out.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "rdcusum";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, with the seed made explicit.
    pub args: Vec<String>,
    pub base_seed: u64,
    /// SHA-256 over version, command, args and input hashes.
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileHash {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// `args` with `--seed <seed>` appended unless a seed flag is present.
pub fn with_explicit_seed(args: &[String], seed: u64) -> Vec<String> {
    let mut out = args.to_vec();
    if !args.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
        out.push("--seed".into());
        out.push(seed.to_string());
    }
    out
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, base_seed: u64, inputs: Vec<FileHash>, started_unix: u64) -> Self {
        let mut m = Self {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            base_seed,
            config_sha256: String::new(),
            inputs,
            outputs: Vec::new(),
            started_unix,
            finished_unix: 0,
        };
        m.config_sha256 = m.config_hash();
        m
    }

    pub fn config_hash(&self) -> String {
        let key = serde_json::json!({
            "version": self.version,
            "command": self.command,
            "args": self.args,
            "inputs": self.inputs.iter().map(|i| &i.sha256).collect::<Vec<_>>(),
        });
        sha256_hex(key.to_string().as_bytes())
    }

    /// Hashes `outputs` and writes the manifest next to the first one.
    pub fn finish(mut self, outputs: &[&Path]) -> Result<PathBuf> {
        self.outputs = outputs.iter().map(|p| hash_file(p)).collect::<Result<_>>()?;
        self.finished_unix = now_unix();
        let path = manifest_path(outputs[0]);
        let text = serde_json::to_string_pretty(&self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.tool != TOOL {
            bail!("{} is not an {TOOL} manifest", path.display());
        }
        if m.config_hash() != m.config_sha256 {
            bail!("{}: config hash does not match the recorded arguments", path.display());
        }
        Ok(m)
    }
}

/// Replaces the value of `--out` in `args` with `out`.
pub fn redirect_output(args: &[String], out: &Path) -> Result<Vec<String>> {
    let mut res = Vec::with_capacity(args.len());
    let mut found = false;
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
            res.push(a.clone());
            res.push(out.display().to_string());
            found = true;
        } else if a.starts_with("--out=") {
            res.push(format!("--out={}", out.display()));
            found = true;
        } else {
            res.push(a.clone());
        }
    }
    if !found {
        bail!("recorded arguments have no --out flag");
    }
    Ok(res)
}
