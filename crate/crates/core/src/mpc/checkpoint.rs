use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::params::{min_eigenvalue, tactile_penalty, MpcConfig, MpcParams};
use crate::error::{Error, Result};

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Matrix {
    rows: usize,
    cols: usize,
    /// Row-major.
    data: Vec<f64>,
}

impl Matrix {
    fn from(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.transpose().iter().copied().collect(),
        }
    }

    fn into_dmatrix(self, what: &str) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {} values for {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// One parameter set shared by both agents, with the configuration it was
/// trained under.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: MpcConfig,
    a_f: Vec<f64>,
    c_f: Vec<f64>,
    q1: Matrix,
    q2: Matrix,
    qc: Matrix,
    alpha: f64,
}

pub fn checkpoint_to_json(params: &MpcParams, cfg: &MpcConfig) -> Result<String> {
    let ck = Checkpoint {
        version: VERSION,
        config: cfg.clone(),
        a_f: params.a_f.iter().copied().collect(),
        c_f: params.c_f.iter().copied().collect(),
        q1: Matrix::from(&params.q1),
        q2: Matrix::from(&params.q2),
        qc: Matrix::from(&params.qc),
        alpha: params.alpha,
    };
    Ok(serde_json::to_string_pretty(&ck)?)
}

pub fn checkpoint_from_json(text: &str) -> Result<(MpcParams, MpcConfig)> {
    let ck: Checkpoint = serde_json::from_str(text)?;
    if ck.version != VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint version {}",
            ck.version
        )));
    }
    let cfg = ck.config;
    cfg.validate()?;
    let params = MpcParams {
        a_f: DVector::from_vec(ck.a_f),
        c_f: DVector::from_vec(ck.c_f),
        q1: ck.q1.into_dmatrix("Q1")?,
        q2: ck.q2.into_dmatrix("Q2")?,
        qc: ck.qc.into_dmatrix("Qc")?,
        alpha: ck.alpha,
    };
    params.validate(&cfg)?;
    let qf = tactile_penalty(&params, &cfg)?.matrix;
    let lmin = min_eigenvalue(&qf);
    if lmin < cfg.eps / 2.0 {
        return Err(Error::Config(format!(
            "tactile penalty not positive definite (min eigenvalue {lmin:e})"
        )));
    }
    Ok((params, cfg))
}

pub fn save_checkpoint(path: &Path, params: &MpcParams, cfg: &MpcConfig) -> Result<()> {
    let text = checkpoint_to_json(params, cfg)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MpcParams, MpcConfig)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_round_trip_is_exact() {
        let cfg = MpcConfig {
            embed_dim: 4,
            ..MpcConfig::default()
        };
        let p = MpcParams::random(4, &mut ChaCha8Rng::seed_from_u64(1));
        let text = checkpoint_to_json(&p, &cfg).unwrap();
        let (back, cfg2) = checkpoint_from_json(&text).unwrap();
        assert_eq!(back, p);
        assert_eq!(cfg2, cfg);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let cfg = MpcConfig {
            embed_dim: 4,
            ..MpcConfig::default()
        };
        let p = MpcParams::random(3, &mut ChaCha8Rng::seed_from_u64(1));
        let text = checkpoint_to_json(&p, &cfg).unwrap();
        assert!(checkpoint_from_json(&text).is_err());
    }
}
