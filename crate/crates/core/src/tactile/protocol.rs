//! Synthetic data collection: one gripper opens toward slippage while the
//! other holds, then the roles swap.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::SyntheticEncoder;
use crate::error::{Error, Result};
use crate::sim::ObjectModel;

pub const FRAMES_PER_SUBTRIAL: usize = 25;
pub const SUBTRIALS_PER_TRIAL: usize = 4;

/// Openings are recorded at this resolution (mm).
pub fn quantize_mm(v: f64) -> f64 {
    (v * 1e3).round() / 1e3
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub index: usize,
    /// Agent 1 then agent 2.
    pub embeddings: [DVector<f32>; 2],
    pub openings: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub subtrial_index: usize,
    pub slippage_opening: f64,
    /// 1 or 2.
    pub active_agent: usize,
    pub frames: Vec<FramePair>,
}

impl TrialRecord {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != FRAMES_PER_SUBTRIAL {
            return Err(Error::InvalidProtocol(format!(
                "trial {} sub {}: {} frames, expected {FRAMES_PER_SUBTRIAL}",
                self.trial_id,
                self.subtrial_index,
                self.frames.len()
            )));
        }
        if !(self.active_agent == 1 || self.active_agent == 2) {
            return Err(Error::InvalidProtocol(format!(
                "active agent {} is not 1 or 2",
                self.active_agent
            )));
        }
        let a = self.active_agent - 1;
        for (k, w) in self.frames.windows(2).enumerate() {
            if w[1].openings[a] < w[0].openings[a] {
                return Err(Error::InvalidProtocol(format!(
                    "active opening decreases at frame {}",
                    k + 1
                )));
            }
        }
        for (k, f) in self.frames.iter().enumerate() {
            if f.index != k {
                return Err(Error::InvalidProtocol(format!("frame {k} carries index {}", f.index)));
            }
            if f.embeddings[0].len() != f.embeddings[1].len() {
                return Err(Error::ShapeMismatch("agents disagree on embedding size".into()));
            }
        }
        Ok(())
    }

    /// Opening velocities by finite differences over the frame spacing
    /// (one-sided at the ends).
    pub fn velocities(&self, frame_interval: f64) -> Vec<[f64; 2]> {
        let n = self.frames.len();
        (0..n)
            .map(|k| {
                let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
                let span = (hi - lo) as f64 * frame_interval;
                std::array::from_fn(|i| {
                    if span == 0.0 {
                        0.0
                    } else {
                        (self.frames[hi].openings[i] - self.frames[lo].openings[i]) / span
                    }
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Nominal starting opening; `None` derives it from the object.
    pub base_initial_opening: Option<f64>,
    /// Nominal slippage opening; `None` uses the object's slip onset.
    pub base_slip_opening: Option<f64>,
    pub init_jitter: f64,
    pub slip_jitter: f64,
    /// Distance between derived initial and slippage openings (mm).
    pub initial_gap: f64,
    /// Time between saved frames (s).
    pub frame_interval: f64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            base_initial_opening: None,
            base_slip_opening: None,
            init_jitter: 0.7,
            slip_jitter: 0.35,
            initial_gap: 2.5,
            frame_interval: 0.04,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_jitter >= 0.0 && self.slip_jitter >= 0.0) {
            return Err(Error::InvalidProtocol("jitter must be non-negative".into()));
        }
        if !(self.frame_interval > 0.0) {
            return Err(Error::InvalidProtocol("frame interval must be positive".into()));
        }
        Ok(())
    }

    pub fn bases(&self, object: &ObjectModel) -> (f64, f64) {
        let slip = self
            .base_slip_opening
            .unwrap_or_else(|| 0.5 * (object.onset(0) + object.onset(1)));
        let init = self.base_initial_opening.unwrap_or(slip - self.initial_gap);
        // On the 1 µm grid, so quantized jittered openings never leave the
        // jitter band.
        (quantize_mm(init), quantize_mm(slip))
    }
}

/// Deterministic per-trial stream, split from the dataset seed.
pub fn trial_rng(seed: u64, trial_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id as u64 + 1);
    rng
}

fn jitter<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width == 0.0 {
        0.0
    } else {
        rng.random_range(-half_width..=half_width)
    }
}

/// Four sub-trials with alternating roles. Odd trials start with agent 2
/// active so roles also alternate between trials.
pub fn generate_trial(
    object: &ObjectModel,
    protocol: &ProtocolConfig,
    encoder: &SyntheticEncoder,
    trial_id: usize,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    protocol.validate()?;
    object.validate()?;
    let (base_init, base_slip) = protocol.bases(object);
    let mut rng = trial_rng(seed, trial_id);
    let mut out = Vec::with_capacity(SUBTRIALS_PER_TRIAL);
    for sub in 0..SUBTRIALS_PER_TRIAL {
        let active = (trial_id + sub) % 2;
        let init = quantize_mm(base_init + jitter(&mut rng, protocol.init_jitter));
        let hold = quantize_mm(base_init + jitter(&mut rng, protocol.init_jitter));
        let slip = quantize_mm(base_slip + jitter(&mut rng, protocol.slip_jitter));
        if slip <= init {
            return Err(Error::InvalidProtocol(format!(
                "trial {trial_id} sub {sub}: slippage opening {slip} not above initial {init}"
            )));
        }
        let world = object.with_onset(slip);
        let frames = (0..FRAMES_PER_SUBTRIAL)
            .map(|k| {
                let frac = k as f64 / (FRAMES_PER_SUBTRIAL - 1) as f64;
                let moving = quantize_mm(init + (slip - init) * frac);
                let mut openings = [hold; 2];
                openings[active] = moving;
                let t = k as f64 * protocol.frame_interval;
                let contact = world.contact(openings, t);
                FramePair {
                    index: k,
                    embeddings: std::array::from_fn(|i| encoder.encode(&contact[i]).map(|v| v as f32)),
                    openings,
                }
            })
            .collect();
        out.push(TrialRecord {
            trial_id,
            subtrial_index: sub,
            slippage_opening: slip,
            active_agent: active + 1,
            frames,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::object_by_name;

    #[test]
    fn zero_jitter_is_linear() {
        let object = object_by_name("rigid_tube").unwrap();
        let protocol = ProtocolConfig {
            init_jitter: 0.0,
            slip_jitter: 0.0,
            base_initial_opening: Some(35.0),
            base_slip_opening: Some(37.4),
            ..ProtocolConfig::default()
        };
        let enc = SyntheticEncoder::new(8, 0.0, 1);
        let subs = generate_trial(&object, &protocol, &enc, 0, 3).unwrap();
        assert_eq!(subs.len(), 4);
        let r = &subs[0];
        assert_eq!(r.active_agent, 1);
        assert_eq!(subs[1].active_agent, 2);
        for (k, f) in r.frames.iter().enumerate() {
            assert!((f.openings[0] - (35.0 + 0.1 * k as f64)).abs() < 1e-9);
            assert_eq!(f.openings[1], 35.0);
        }
        r.validate().unwrap();
    }

    #[test]
    fn inverted_protocol_is_rejected() {
        let object = object_by_name("rigid_tube").unwrap();
        let protocol = ProtocolConfig {
            base_initial_opening: Some(38.0),
            base_slip_opening: Some(37.0),
            init_jitter: 0.0,
            slip_jitter: 0.0,
            ..ProtocolConfig::default()
        };
        let enc = SyntheticEncoder::new(4, 0.0, 1);
        assert!(matches!(
            generate_trial(&object, &protocol, &enc, 0, 0),
            Err(Error::InvalidProtocol(_))
        ));
    }

    #[test]
    fn finite_difference_velocities() {
        let object = object_by_name("rigid_tube").unwrap();
        let protocol = ProtocolConfig {
            init_jitter: 0.0,
            slip_jitter: 0.0,
            base_initial_opening: Some(35.0),
            base_slip_opening: Some(37.4),
            frame_interval: 0.05,
            ..ProtocolConfig::default()
        };
        let enc = SyntheticEncoder::new(4, 0.0, 1);
        let r = &generate_trial(&object, &protocol, &enc, 1, 0).unwrap()[0];
        assert_eq!(r.active_agent, 2);
        for v in r.velocities(0.05) {
            assert!((v[1] - 2.0).abs() < 1e-9);
            assert_eq!(v[0], 0.0);
        }
    }
}
