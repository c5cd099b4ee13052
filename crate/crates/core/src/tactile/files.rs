//! On-disk layout of a dataset:
//!
//! ```text
//! <root>/dataset.json
//! <root>/trial<id>_sub<k>_slip<mm>/<agent>_<opening mm>_<frame>.emb
//! ```
//!
//! An `.emb` file is an 8-byte header (`b"TEMB"` then a little-endian `u32`
//! version) followed by little-endian `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::protocol::{FramePair, ProtocolConfig, TrialRecord, FRAMES_PER_SUBTRIAL};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TEMB";
const EMB_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "dataset.json";

pub fn trial_dir_name(r: &TrialRecord) -> String {
    format!(
        "trial{}_sub{}_slip{:.3}",
        r.trial_id, r.subtrial_index, r.slippage_opening
    )
}

pub fn frame_file_name(agent: usize, opening: f64, frame: usize) -> String {
    format!("{agent}_{opening:.3}_{frame:02}.emb")
}

/// `trial<id>_sub<k>_slip<mm>` → (id, k, mm).
pub fn parse_trial_dir_name(name: &str) -> Result<(usize, usize, f64)> {
    let bad = || Error::MalformedName(name.to_string());
    let mut parts = name.split('_');
    let id = parts
        .next()
        .and_then(|p| p.strip_prefix("trial"))
        .and_then(|p| p.parse().ok())
        .ok_or_else(bad)?;
    let sub = parts
        .next()
        .and_then(|p| p.strip_prefix("sub"))
        .and_then(|p| p.parse().ok())
        .ok_or_else(bad)?;
    let slip = parts
        .next()
        .and_then(|p| p.strip_prefix("slip"))
        .and_then(|p| p.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    Ok((id, sub, slip))
}

/// `<agent>_<opening>_<frame>.emb` → (agent, opening, frame).
pub fn parse_frame_file_name(name: &str) -> Result<(usize, f64, usize)> {
    let bad = || Error::MalformedName(name.to_string());
    let stem = name.strip_suffix(".emb").ok_or_else(bad)?;
    let parts: Vec<&str> = stem.split('_').collect();
    let [agent, opening, frame] = parts[..] else {
        return Err(bad());
    };
    let agent: usize = agent.parse().map_err(|_| bad())?;
    if !(agent == 1 || agent == 2) {
        return Err(bad());
    }
    let opening: f64 = opening.parse().map_err(|_| bad())?;
    if !opening.is_finite() {
        return Err(bad());
    }
    let frame = frame.parse().map_err(|_| bad())?;
    Ok((agent, opening, frame))
}

pub fn encode_emb(values: &DVector<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&EMB_VERSION.to_le_bytes());
    for v in values.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_emb(bytes: &[u8], path: &Path) -> Result<DVector<f32>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC || bytes[4..8] != EMB_VERSION.to_le_bytes() {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    let body = &bytes[8..];
    if !body.len().is_multiple_of(4) {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} payload bytes is not a whole number of f32",
            path.display(),
            body.len()
        )));
    }
    Ok(DVector::from_iterator(
        body.len() / 4,
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
    ))
}

pub fn write_trial(root: &Path, record: &TrialRecord) -> Result<PathBuf> {
    record.validate()?;
    let dir = root.join(trial_dir_name(record));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for frame in &record.frames {
        for agent in 0..2 {
            let path = dir.join(frame_file_name(agent + 1, frame.openings[agent], frame.index));
            fs::write(&path, encode_emb(&frame.embeddings[agent])).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(dir)
}

pub fn read_trial(dir: &Path) -> Result<TrialRecord> {
    let dir_name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::MalformedName(dir.display().to_string()))?;
    let (trial_id, subtrial_index, slippage_opening) = parse_trial_dir_name(dir_name)?;

    let mut frames: BTreeMap<usize, [Option<(f64, DVector<f32>)>; 2]> = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name();
        let name = name.to_str().ok_or_else(|| Error::MalformedName(path.display().to_string()))?;
        if !name.ends_with(".emb") {
            continue;
        }
        let (agent, opening, index) = parse_frame_file_name(name)?;
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let values = decode_emb(&bytes, &path)?;
        let slot = &mut frames.entry(index).or_default()[agent - 1];
        if slot.is_some() {
            return Err(Error::MalformedName(format!("duplicate frame file {name}")));
        }
        *slot = Some((opening, values));
    }

    if frames.len() != FRAMES_PER_SUBTRIAL {
        return Err(Error::InvalidProtocol(format!(
            "{}: {} frames, expected {FRAMES_PER_SUBTRIAL}",
            dir.display(),
            frames.len()
        )));
    }
    let mut pairs = Vec::with_capacity(FRAMES_PER_SUBTRIAL);
    for (k, (index, slots)) in frames.into_iter().enumerate() {
        if index != k {
            return Err(Error::InvalidProtocol(format!("missing frame {k} in {}", dir.display())));
        }
        let [Some((p1, f1)), Some((p2, f2))] = slots else {
            return Err(Error::InvalidProtocol(format!(
                "frame {k} in {} lacks one agent",
                dir.display()
            )));
        };
        if f1.len() != f2.len() {
            return Err(Error::ShapeMismatch(format!(
                "frame {k} in {}: embedding sizes {} and {}",
                dir.display(),
                f1.len(),
                f2.len()
            )));
        }
        pairs.push(FramePair {
            index,
            embeddings: [f1, f2],
            openings: [p1, p2],
        });
    }
    let range = |i: usize| pairs[FRAMES_PER_SUBTRIAL - 1].openings[i] - pairs[0].openings[i];
    let active_agent = match (range(0) > 0.0, range(1) > 0.0) {
        (true, false) => 1,
        (false, true) => 2,
        _ => {
            return Err(Error::InvalidProtocol(format!(
                "{}: cannot tell which gripper was active",
                dir.display()
            )))
        }
    };
    let record = TrialRecord {
        trial_id,
        subtrial_index,
        slippage_opening,
        active_agent,
        frames: pairs,
    };
    record.validate()?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dir: String,
    pub trial_id: usize,
    pub subtrial_index: usize,
    pub slippage_opening: f64,
    pub active_agent: usize,
    pub object: String,
}

/// Index of a generated dataset, consumed by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub embed_dim: usize,
    pub seed: u64,
    pub encoder_seed: u64,
    pub noise_sigma: f64,
    pub shear_gain: f64,
    pub protocol: ProtocolConfig,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn frame_interval(&self) -> f64 {
        self.protocol.frame_interval
    }
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads every sub-trial listed in the manifest and cross-checks labels
/// and roles.
pub fn read_dataset(root: &Path) -> Result<(Manifest, Vec<TrialRecord>)> {
    let manifest = read_manifest(root)?;
    let mut records = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let r = read_trial(&root.join(&entry.dir))?;
        if r.trial_id != entry.trial_id
            || r.subtrial_index != entry.subtrial_index
            || r.active_agent != entry.active_agent
            || r.slippage_opening != entry.slippage_opening
        {
            return Err(Error::InvalidProtocol(format!(
                "{}: contents disagree with the manifest",
                entry.dir
            )));
        }
        if r.frames[0].embeddings[0].len() != manifest.embed_dim {
            return Err(Error::ShapeMismatch(format!(
                "{}: embeddings of size {}, manifest says {}",
                entry.dir,
                r.frames[0].embeddings[0].len(),
                manifest.embed_dim
            )));
        }
        records.push(r);
    }
    Ok((manifest, records))
}
