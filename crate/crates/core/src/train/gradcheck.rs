use serde::{Deserialize, Serialize};

use super::{loss, loss_gradient, Sample};
use crate::error::Result;
use crate::mpc::{MpcConfig, MpcInput, MpcParams, OutputGradient, PreparedLayer, TiePolicy};

pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// (block name, max relative error) for each parameter block and the
    /// two input embeddings.
    pub blocks: Vec<(String, f64)>,
    pub max_error: f64,
    pub passed: bool,
}

/// Max absolute difference relative to the largest magnitude in either
/// vector.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |acc, (a, n)| acc.max((a - n).abs()))
        / scale
}

fn sample_loss(params: &MpcParams, cfg: &MpcConfig, input: &MpcInput, sample: &Sample, s: f64) -> Result<f64> {
    let out = PreparedLayer::new(params, cfg)?.forward(input, None)?;
    loss(&out.predicted_openings, &sample.targets, s)
}

/// Analytic vs central-difference gradient of the training loss on one
/// sample. Degenerate samples are rejected with `DegenerateActiveSet`.
pub fn grad_check(
    cfg: &MpcConfig,
    params: &MpcParams,
    sample: &Sample,
    terminal_scale: f64,
    step: f64,
) -> Result<GradCheckReport> {
    let layer = PreparedLayer::new(params, cfg)?;
    let out = layer.forward(&sample.input, None)?;
    let grad = OutputGradient {
        openings: loss_gradient(&out.predicted_openings, &sample.targets, terminal_scale)?,
        a_star: [0.0; 2],
    };
    let g = layer.backward(&sample.input, &out, &grad, TiePolicy::Reject)?;

    let m = params.embed_dim();
    let flat = params.to_flat();
    let analytic = g.params.to_flat();
    let mut numeric = vec![0.0; flat.len()];
    for k in 0..flat.len() {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[k] += step;
        minus[k] -= step;
        let lp = sample_loss(&MpcParams::from_flat(m, &plus)?, cfg, &sample.input, sample, terminal_scale)?;
        let lm = sample_loss(&MpcParams::from_flat(m, &minus)?, cfg, &sample.input, sample, terminal_scale)?;
        numeric[k] = (lp - lm) / (2.0 * step);
    }
    let tri = m * (m + 1) / 2;
    let bounds = [
        ("A_f", 0, m),
        ("C_f", m, 2 * m),
        ("Q1", 2 * m, 2 * m + tri),
        ("Q2", 2 * m + tri, 2 * m + 2 * tri),
        ("Qc", 2 * m + 2 * tri, 2 * m + 2 * tri + m * m),
        ("alpha", flat.len() - 1, flat.len()),
    ];
    let mut blocks: Vec<(String, f64)> = bounds
        .iter()
        .map(|&(name, lo, hi)| (name.to_string(), rel_error(&analytic[lo..hi], &numeric[lo..hi])))
        .collect();

    for agent in 0..2 {
        let mut num = vec![0.0; m];
        for j in 0..m {
            let mut plus = sample.input.clone();
            let mut minus = sample.input.clone();
            plus.embeddings[agent][j] += step;
            minus.embeddings[agent][j] -= step;
            let lp = sample_loss(params, cfg, &plus, sample, terminal_scale)?;
            let lm = sample_loss(params, cfg, &minus, sample, terminal_scale)?;
            num[j] = (lp - lm) / (2.0 * step);
        }
        blocks.push((
            format!("embedding {}", agent + 1),
            rel_error(g.embeddings[agent].as_slice(), &num),
        ));
    }
    let max_error = blocks.iter().map(|b| b.1).fold(0.0, f64::max);
    Ok(GradCheckReport {
        blocks,
        max_error,
        passed: max_error <= GRAD_CHECK_TOL,
    })
}
