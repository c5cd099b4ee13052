use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::qp::SolverSettings;

/// Box limits on opening (mm), opening velocity (mm/s) and acceleration
/// (mm/s²), applied at every step of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub p_min: f64,
    pub p_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        // Robotiq 2F-85 stroke
        Self {
            p_min: 0.0,
            p_max: 85.0,
            v_min: -150.0,
            v_max: 150.0,
            a_min: -5000.0,
            a_max: 5000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub embed_dim: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
    pub q_v: f64,
    pub q_a: f64,
    /// Terminal cost amplification.
    pub p_q: f64,
    /// Floor on the smallest eigenvalue of the assembled tactile penalty.
    pub eps: f64,
    pub bounds: Bounds,
    pub solver: SolverSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 15,
            embed_dim: 20,
            dt: 0.01,
            q_v: 200.0,
            q_a: 1.0,
            p_q: 5.0,
            eps: 1e-4,
            bounds: Bounds::default(),
            solver: SolverSettings::default(),
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveDt(self.dt));
        }
        for (name, v) in [("q_v", self.q_v), ("q_a", self.q_a), ("p_q", self.p_q), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be strictly positive")));
            }
        }
        let b = &self.bounds;
        if !(b.p_min < b.p_max && b.v_min < b.v_max && b.a_min < b.a_max) {
            return Err(Error::Config("bounds must be ordered".into()));
        }
        self.solver.validate()
    }

    /// Weight of the stage at step `k` (1..=N); the terminal step carries
    /// the amplification `p_q`.
    pub(crate) fn stage_weight(&self, k: usize) -> f64 {
        if k == self.horizon {
            self.p_q
        } else {
            1.0
        }
    }
}

/// Learnable quantities, shared by both agents.
///
/// `q1` and `q2` are lower-triangular factors of the per-agent tactile
/// penalty blocks; `qc` is the unconstrained cross-agent block and `alpha`
/// scales it.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcParams {
    pub a_f: DVector<f64>,
    pub c_f: DVector<f64>,
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
    pub qc: DMatrix<f64>,
    pub alpha: f64,
}

impl MpcParams {
    pub fn zeros(m: usize) -> Self {
        Self {
            a_f: DVector::zeros(m),
            c_f: DVector::zeros(m),
            q1: DMatrix::zeros(m, m),
            q2: DMatrix::zeros(m, m),
            qc: DMatrix::zeros(m, m),
            alpha: 0.0,
        }
    }

    /// Seeded initialization: small dynamics vectors, diagonal-dominant
    /// penalty factors and a weak coupling block.
    pub fn random<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        };
        let mut p = Self::zeros(m);
        for i in 0..m {
            p.a_f[i] = normal(0.05);
            p.c_f[i] = normal(0.05);
        }
        for q in [&mut p.q1, &mut p.q2] {
            for i in 0..m {
                for j in 0..=i {
                    q[(i, j)] = if i == j { 1.0 + normal(0.1) } else { normal(0.1) };
                }
            }
        }
        for v in p.qc.iter_mut() {
            *v = normal(0.1);
        }
        p.alpha = 0.1;
        p
    }

    pub fn embed_dim(&self) -> usize {
        self.a_f.len()
    }

    pub fn validate(&self, cfg: &MpcConfig) -> Result<()> {
        let m = cfg.embed_dim;
        check_len("A_f", m, self.a_f.len())?;
        check_len("C_f", m, self.c_f.len())?;
        for (name, q) in [("Q1", &self.q1), ("Q2", &self.q2), ("Qc", &self.qc)] {
            if q.nrows() != m || q.ncols() != m {
                return Err(Error::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {m}x{m}",
                    q.nrows(),
                    q.ncols()
                )));
            }
        }
        check_finite("A_f", self.a_f.iter())?;
        check_finite("C_f", self.c_f.iter())?;
        check_finite("Q1", self.q1.iter())?;
        check_finite("Q2", self.q2.iter())?;
        check_finite("Qc", self.qc.iter())?;
        check_finite("alpha", [self.alpha].iter())?;
        Ok(())
    }

    /// Zeroes the strictly upper triangles of the factor blocks.
    pub fn project_lower(&mut self) {
        for q in [&mut self.q1, &mut self.q2] {
            for j in 0..q.ncols() {
                for i in 0..j {
                    q[(i, j)] = 0.0;
                }
            }
        }
    }

    /// The single-agent special case: no dynamic coupling and no
    /// cross-agent penalty.
    pub fn decoupled(&self) -> Self {
        let mut out = self.clone();
        out.c_f.fill(0.0);
        out.alpha = 0.0;
        out
    }

    /// Exchanges the roles of the two agents.
    pub fn swapped(&self) -> Self {
        let mut out = self.clone();
        std::mem::swap(&mut out.q1, &mut out.q2);
        out.qc = self.qc.transpose();
        out
    }

    pub fn num_values(&self) -> usize {
        let m = self.embed_dim();
        2 * m + 2 * (m * (m + 1) / 2) + m * m + 1
    }

    /// Flattens the free parameters (lower triangles only for the factors).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        out.extend(self.a_f.iter());
        out.extend(self.c_f.iter());
        for q in [&self.q1, &self.q2] {
            for i in 0..q.nrows() {
                for j in 0..=i {
                    out.push(q[(i, j)]);
                }
            }
        }
        for i in 0..self.qc.nrows() {
            for j in 0..self.qc.ncols() {
                out.push(self.qc[(i, j)]);
            }
        }
        out.push(self.alpha);
        out
    }

    pub fn from_flat(m: usize, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(m);
        check_len("flat parameters", p.num_values(), flat.len())?;
        let mut it = flat.iter().copied();
        let mut next = || it.next().unwrap_or(0.0);
        for i in 0..m {
            p.a_f[i] = next();
        }
        for i in 0..m {
            p.c_f[i] = next();
        }
        for q in [&mut p.q1, &mut p.q2] {
            for i in 0..m {
                for j in 0..=i {
                    q[(i, j)] = next();
                }
            }
        }
        for i in 0..m {
            for j in 0..m {
                p.qc[(i, j)] = next();
            }
        }
        p.alpha = next();
        Ok(p)
    }
}

/// The assembled tactile penalty and the information needed to
/// differentiate through its eigenvalue floor.
#[derive(Debug, Clone)]
pub struct TactilePenalty {
    pub matrix: DMatrix<f64>,
    /// Multiple of the identity added to reach the eigenvalue floor.
    pub shift: f64,
    /// Eigenvector of the smallest eigenvalue before the shift, when the
    /// shift is active.
    pub min_vector: Option<DVector<f64>>,
}

/// `[[Q1Q1ᵀ, αQc], [αQcᵀ, Q2Q2ᵀ]]`, symmetrized and shifted so its smallest
/// eigenvalue is at least `eps`.
pub fn assemble_qf(params: &MpcParams, cfg: &MpcConfig) -> Result<DMatrix<f64>> {
    Ok(tactile_penalty(params, cfg)?.matrix)
}

pub fn tactile_penalty(params: &MpcParams, cfg: &MpcConfig) -> Result<TactilePenalty> {
    params.validate(cfg)?;
    let m = cfg.embed_dim;
    let mut s = DMatrix::zeros(2 * m, 2 * m);
    s.view_mut((0, 0), (m, m))
        .copy_from(&(&params.q1 * params.q1.transpose()));
    s.view_mut((m, m), (m, m))
        .copy_from(&(&params.q2 * params.q2.transpose()));
    let off = &params.qc * params.alpha;
    s.view_mut((0, m), (m, m)).copy_from(&off);
    s.view_mut((m, 0), (m, m)).copy_from(&off.transpose());
    let s = (&s + s.transpose()) * 0.5;

    // Cheap certificate that no shift is needed.
    let mut probe = s.clone();
    for i in 0..2 * m {
        probe[(i, i)] -= cfg.eps;
    }
    if Cholesky::new(probe).is_some() {
        return Ok(TactilePenalty {
            matrix: s,
            shift: 0.0,
            min_vector: None,
        });
    }
    let eig = SymmetricEigen::new(s.clone());
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let shift = (cfg.eps - lmin).max(0.0);
    let mut matrix = s;
    for i in 0..2 * m {
        matrix[(i, i)] += shift;
    }
    Ok(TactilePenalty {
        matrix,
        shift,
        min_vector: (shift > 0.0).then(|| eig.eigenvectors.column(imin).into_owned()),
    })
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
