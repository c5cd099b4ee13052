mod encoder;
mod files;
mod protocol;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encoder::{ContactState, SyntheticEncoder};
pub use files::{
    decode_emb, encode_emb, frame_file_name, parse_frame_file_name, parse_trial_dir_name,
    read_dataset, read_manifest, read_trial, trial_dir_name, write_manifest, write_trial, Manifest,
    ManifestEntry, MANIFEST_NAME,
};
pub use protocol::{
    generate_trial, quantize_mm, trial_rng, FramePair, ProtocolConfig, TrialRecord,
    FRAMES_PER_SUBTRIAL, SUBTRIALS_PER_TRIAL,
};

use crate::error::{Error, Result};
use crate::sim::{object_by_name, object_menu};

pub const DEFAULT_ENCODER_SEED: u64 = 7;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.01;
pub const DEFAULT_SHEAR_GAIN: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub trials: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub encoder_seed: u64,
    pub noise_sigma: f64,
    pub shear_gain: f64,
    /// Objects cycled across trials.
    pub objects: Vec<String>,
    pub protocol: ProtocolConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            trials: 200,
            seed: 0,
            embed_dim: 20,
            encoder_seed: DEFAULT_ENCODER_SEED,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            shear_gain: DEFAULT_SHEAR_GAIN,
            objects: object_menu().into_iter().map(|o| o.name).collect(),
            protocol: ProtocolConfig::default(),
        }
    }
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<(Manifest, Vec<TrialRecord>)> {
    if cfg.objects.is_empty() {
        return Err(Error::Config("dataset needs at least one object".into()));
    }
    let objects = cfg
        .objects
        .iter()
        .map(|n| object_by_name(n))
        .collect::<Result<Vec<_>>>()?;
    let encoder = SyntheticEncoder::new(cfg.embed_dim, cfg.noise_sigma, cfg.encoder_seed).with_shear_gain(cfg.shear_gain);
    let mut records = Vec::with_capacity(cfg.trials * SUBTRIALS_PER_TRIAL);
    let mut entries = Vec::with_capacity(records.capacity());
    for trial in 0..cfg.trials {
        let object = &objects[trial % objects.len()];
        for r in generate_trial(object, &cfg.protocol, &encoder, trial, cfg.seed)? {
            entries.push(ManifestEntry {
                dir: trial_dir_name(&r),
                trial_id: r.trial_id,
                subtrial_index: r.subtrial_index,
                slippage_opening: r.slippage_opening,
                active_agent: r.active_agent,
                object: object.name.clone(),
            });
            records.push(r);
        }
    }
    let manifest = Manifest {
        version: 1,
        embed_dim: cfg.embed_dim,
        seed: cfg.seed,
        encoder_seed: cfg.encoder_seed,
        noise_sigma: cfg.noise_sigma,
        shear_gain: cfg.shear_gain,
        protocol: cfg.protocol.clone(),
        entries,
    };
    Ok((manifest, records))
}

/// Writes records and manifest under `root`. An existing dataset is only
/// replaced when `force` is set.
pub fn write_dataset(root: &Path, manifest: &Manifest, records: &[TrialRecord], force: bool) -> Result<()> {
    if root.join(MANIFEST_NAME).exists() {
        if !force {
            return Err(Error::Config(format!(
                "{} already holds a dataset (use force to replace it)",
                root.display()
            )));
        }
        let old = read_manifest(root)?;
        for e in &old.entries {
            let dir = root.join(&e.dir);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|err| Error::io(&dir, err))?;
            }
        }
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for r in records {
        write_trial(root, r)?;
    }
    write_manifest(root, manifest)
}
