//! `run.json`: what a subcommand was run with and what it produced.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_RECORD: &str = "run.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    /// Wall-clock measurements; not expected to reproduce.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub timing: bool,
}

impl FileHash {
    pub fn file(root: &Path, rel: &str) -> anyhow::Result<Self> {
        Ok(Self {
            path: rel.to_string(),
            sha256: sha256_file(&root.join(rel))?,
            timing: false,
        })
    }

    pub fn input(path: &Path) -> anyhow::Result<Self> {
        let sha256 = if path.is_dir() {
            sha256_tree(path)?
        } else {
            sha256_file(path)?
        };
        Ok(Self {
            path: path.display().to_string(),
            sha256,
            timing: false,
        })
    }

    /// Hash over every file below `root/rel`, in path order.
    pub fn tree(root: &Path, rel: &str) -> anyhow::Result<Self> {
        Ok(Self {
            path: rel.to_string(),
            sha256: sha256_tree(&root.join(rel))?,
            timing: false,
        })
    }

    pub fn timing(mut self) -> Self {
        self.timing = true;
        self
    }
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Run records themselves are left out so a tree can be hashed while it is
/// being described.
pub fn sha256_tree(root: &Path) -> anyhow::Result<String> {
    let mut files = Vec::new();
    collect(root, &mut files)?;
    files.retain(|p| p.file_name().is_none_or(|n| n != RUN_RECORD));
    let mut rel: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let r = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            (r, p)
        })
        .collect();
    rel.sort();
    let mut h = Sha256::new();
    for (name, path) in rel {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(sha256_file(&path)?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Serialize)]
pub struct RunRecord<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config: &'a T,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn write_record<T: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    config: &T,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
) -> anyhow::Result<PathBuf> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        inputs,
        outputs,
    };
    let path = out_dir.join(RUN_RECORD);
    fs::write(&path, serde_json::to_string_pretty(&record)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
