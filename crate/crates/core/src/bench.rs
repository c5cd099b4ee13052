//! Batched forward-pass timing: one coupled two-agent problem against two
//! decoupled single-agent problems on the same inputs.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifting::GripperState;
use crate::mpc::{MpcConfig, MpcInput, MpcParams, PreparedLayer};
use crate::sim::object_menu;
use crate::tactile::{SyntheticEncoder, DEFAULT_ENCODER_SEED, DEFAULT_NOISE_SIGMA, DEFAULT_SHEAR_GAIN};

pub const DEFAULT_BATCH_SIZES: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
const OUTLIER_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repetitions: usize,
    pub warmups: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: DEFAULT_BATCH_SIZES.to_vec(),
            repetitions: 20,
            warmups: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub batch_size: usize,
    /// Median seconds per batch.
    pub multi_rt: f64,
    pub single_rt: f64,
    pub increase_pct: f64,
    pub repetitions: usize,
    pub warmups: usize,
    /// Repetitions slower than three times the median.
    pub multi_outliers: usize,
    pub single_outliers: usize,
    /// Solves that did not converge during timed repetitions.
    pub failures: usize,
}

/// Deployment-like inputs: openings near each menu object's slip onset,
/// small velocities, embeddings from the synthetic encoder.
pub fn bench_inputs(n: usize, cfg: &MpcConfig, seed: u64) -> Vec<MpcInput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = SyntheticEncoder::new(cfg.embed_dim, DEFAULT_NOISE_SIGMA, DEFAULT_ENCODER_SEED)
        .with_shear_gain(DEFAULT_SHEAR_GAIN);
    let menu = object_menu();
    (0..n)
        .map(|k| {
            let object = &menu[k % menu.len()];
            let openings: [f64; 2] = std::array::from_fn(|i| object.onset(i) - rng.random_range(0.0..2.0));
            let contact = object.contact(openings, 0.0);
            MpcInput {
                states: std::array::from_fn(|i| GripperState::new(openings[i], rng.random_range(-5.0..5.0))),
                embeddings: std::array::from_fn(|i| encoder.encode(&contact[i])),
            }
        })
        .collect()
}

fn hash_inputs(inputs: &[&MpcInput]) -> u64 {
    let mut h = DefaultHasher::new();
    for input in inputs {
        for i in 0..2 {
            input.states[i].p.to_bits().hash(&mut h);
            input.states[i].v.to_bits().hash(&mut h);
            for v in input.embeddings[i].iter() {
                v.to_bits().hash(&mut h);
            }
        }
    }
    h.finish()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn outliers(v: &[f64], med: f64) -> usize {
    v.iter().filter(|&&t| t > OUTLIER_FACTOR * med).count()
}

/// Times both arms over every batch size. Each repetition runs the two
/// arms back to back (order alternating) on the same inputs.
pub fn run_bench(opts: &BenchConfig, cfg: &MpcConfig, params: &MpcParams) -> Result<Vec<BenchResult>> {
    if opts.batch_sizes.contains(&0) {
        return Err(Error::Config("batch sizes must be at least 1".into()));
    }
    if opts.repetitions == 0 {
        return Err(Error::Config("need at least one repetition".into()));
    }
    let multi = PreparedLayer::new(params, cfg)?;
    let single = PreparedLayer::new(&params.decoupled(), cfg)?;
    let largest = opts.batch_sizes.iter().copied().max().unwrap_or(0);
    let inputs = bench_inputs(largest, cfg, opts.seed);

    let mut results = Vec::with_capacity(opts.batch_sizes.len());
    for &b in &opts.batch_sizes {
        let batch = &inputs[..b];
        let mut failures = 0;
        let run_multi = |failures: &mut usize| -> Result<(f64, u64)> {
            let start = Instant::now();
            let mut seen = Vec::with_capacity(b);
            for input in batch {
                seen.push(input);
                match multi.forward(input, None) {
                    Ok(_) => {}
                    Err(Error::SolverFailed { .. }) => *failures += 1,
                    Err(e) => return Err(e),
                }
            }
            let t = start.elapsed().as_secs_f64();
            Ok((t, hash_inputs(&seen)))
        };
        let run_single = |failures: &mut usize| -> Result<(f64, u64)> {
            let start = Instant::now();
            let mut seen = Vec::with_capacity(b);
            for input in batch {
                seen.push(input);
                for agent in 0..2 {
                    match single.forward_single(agent, input.states[agent], &input.embeddings[agent], None) {
                        Ok(_) => {}
                        Err(Error::SolverFailed { .. }) => *failures += 1,
                        Err(e) => return Err(e),
                    }
                }
            }
            let t = start.elapsed().as_secs_f64();
            Ok((t, hash_inputs(&seen)))
        };
        let mut multi_times = Vec::with_capacity(opts.repetitions);
        let mut single_times = Vec::with_capacity(opts.repetitions);
        for rep in 0..opts.warmups + opts.repetitions {
            let mut scratch = 0;
            let counter = if rep < opts.warmups { &mut scratch } else { &mut failures };
            let (m, s) = if rep % 2 == 0 {
                let m = run_multi(counter)?;
                (m, run_single(counter)?)
            } else {
                let s = run_single(counter)?;
                (run_multi(counter)?, s)
            };
            if m.1 != s.1 {
                return Err(Error::Config("benchmark arms consumed different inputs".into()));
            }
            if rep >= opts.warmups {
                multi_times.push(m.0);
                single_times.push(s.0);
            }
        }
        let multi_rt = median(&multi_times);
        let single_rt = median(&single_times);
        results.push(BenchResult {
            batch_size: b,
            multi_rt,
            single_rt,
            increase_pct: 100.0 * (multi_rt - single_rt) / single_rt,
            repetitions: opts.repetitions,
            warmups: opts.warmups,
            multi_outliers: outliers(&multi_times, multi_rt),
            single_outliers: outliers(&single_times, single_rt),
            failures,
        });
    }
    Ok(results)
}

pub fn write_bench_csv<W: Write>(out: W, results: &[BenchResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["batch_size", "multi_rt", "single_rt", "increase_pct"])
        .map_err(Error::csv)?;
    for r in results {
        w.write_record([
            r.batch_size.to_string(),
            format!("{:.6}", r.multi_rt),
            format!("{:.6}", r.single_rt),
            format!("{:.2}", r.increase_pct),
        ])
        .map_err(Error::csv)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_seeded() {
        let cfg = MpcConfig::default();
        let a = bench_inputs(4, &cfg, 3);
        let b = bench_inputs(4, &cfg, 3);
        assert_eq!(a, b);
        assert_ne!(hash_inputs(&[&a[0]]), hash_inputs(&[&a[1]]));
    }

    #[test]
    fn medians_and_outliers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(outliers(&[1.0, 1.0, 3.5], 1.0), 1);
    }
}
