use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// What a gel sensor touches: indentation, tangential load and material.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactState {
    /// Gel indentation (mm), never negative.
    pub depth: f64,
    /// Tangential load proxy (mm), signed.
    pub shear: f64,
    /// κ (N/mm).
    pub material_stiffness: f64,
    pub slipping: bool,
}

impl ContactState {
    pub fn none(material_stiffness: f64) -> Self {
        Self {
            depth: 0.0,
            shear: 0.0,
            material_stiffness,
            slipping: false,
        }
    }
}

/// Frozen stand-in for an image encoder:
/// `f = tanh(κ·depth)·w_depth + shear·w_shear + η`.
///
/// The noise `η` is a pure function of the seed and the quantized contact,
/// so repeated observations of the same contact are bitwise identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEncoder {
    w_depth: DVector<f64>,
    w_shear: DVector<f64>,
    shear_gain: f64,
    noise_sigma: f64,
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn quantize(v: f64) -> u64 {
    (v * 1e3).round() as i64 as u64
}

impl SyntheticEncoder {
    /// Projection directions are seeded Gaussian draws normalized to unit
    /// length, with the shear direction orthogonalized against depth.
    pub fn new(embed_dim: usize, noise_sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x656e_636f_6465_72));
        let mut draw = || {
            let v = DVector::from_fn(embed_dim, |_, _| StandardNormal.sample(&mut rng));
            let n: f64 = v.norm();
            v / n
        };
        let w_depth = draw();
        let raw = draw();
        let w_shear = if embed_dim > 1 {
            let v = &raw - &w_depth * w_depth.dot(&raw);
            let n = v.norm();
            v / n
        } else {
            raw
        };
        Self {
            w_depth,
            w_shear,
            shear_gain: 1.0,
            noise_sigma,
            seed,
        }
    }

    /// Scales the shear projection to length `gain` (embedding units per
    /// mm of shear).
    pub fn with_shear_gain(mut self, gain: f64) -> Self {
        self.w_shear *= gain / self.shear_gain;
        self.shear_gain = gain;
        self
    }

    pub fn shear_gain(&self) -> f64 {
        self.shear_gain
    }

    pub fn embed_dim(&self) -> usize {
        self.w_depth.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn depth_direction(&self) -> &DVector<f64> {
        &self.w_depth
    }

    pub fn shear_direction(&self) -> &DVector<f64> {
        &self.w_shear
    }

    pub fn encode(&self, c: &ContactState) -> DVector<f64> {
        let mut f = &self.w_depth * (c.material_stiffness * c.depth).tanh() + &self.w_shear * c.shear;
        if self.noise_sigma > 0.0 {
            let key = [c.depth, c.shear, c.material_stiffness]
                .iter()
                .fold(splitmix(self.seed), |h, v| splitmix(h ^ quantize(*v)));
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            for v in f.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += self.noise_sigma * z;
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contact(depth: f64, shear: f64) -> ContactState {
        ContactState {
            depth,
            shear,
            material_stiffness: 2.0,
            slipping: false,
        }
    }

    #[test]
    fn no_contact_is_silent() {
        let enc = SyntheticEncoder::new(20, 0.0, 4);
        assert_eq!(enc.encode(&ContactState::none(1.0)).amax(), 0.0);
    }

    #[test]
    fn saturates_toward_depth_direction() {
        let enc = SyntheticEncoder::new(20, 0.0, 4);
        let f = enc.encode(&contact(1e3, 0.0));
        assert!((f - enc.depth_direction()).norm() < 1e-12);
        let f = enc.encode(&contact(1e3, 0.5));
        assert!(((f - enc.depth_direction()).norm() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn noise_is_keyed_by_contact() {
        let enc = SyntheticEncoder::new(20, 0.05, 9);
        let a = enc.encode(&contact(0.7, -0.2));
        let b = enc.encode(&contact(0.7, -0.2));
        assert_eq!(a, b);
        let c = enc.encode(&contact(0.7, -0.3));
        assert_ne!(a, c);
        let other = SyntheticEncoder::new(20, 0.05, 10);
        assert_ne!(a, other.encode(&contact(0.7, -0.2)));
    }

    #[test]
    fn norm_grows_with_depth() {
        let enc = SyntheticEncoder::new(20, 0.0, 1);
        let norms: Vec<f64> = (0..100)
            .map(|i| enc.encode(&contact(3.0 * i as f64 / 99.0, 0.0)).norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] > w[0]));
    }
}
