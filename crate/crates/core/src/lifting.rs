//! Gripper dynamics and their horizon-condensed form.
//!
//! Everything is expressed in the stacked acceleration vector
//! `x = [a¹₀ … a¹_{N−1}, a²₀ … a²_{N−1}]`.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::mpc::{MpcConfig, MpcParams};

/// Opening (mm) and opening velocity (mm/s) of one gripper.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GripperState {
    pub p: f64,
    pub v: f64,
}

impl GripperState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleIntegrator {
    dt: f64,
    a_g: Matrix2<f64>,
    b_g: Vector2<f64>,
}

pub fn make_double_integrator(dt: f64) -> Result<DoubleIntegrator> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::NonPositiveDt(dt));
    }
    Ok(DoubleIntegrator {
        dt,
        a_g: Matrix2::new(1.0, dt, 0.0, 1.0),
        b_g: Vector2::new(0.5 * dt * dt, dt),
    })
}

impl DoubleIntegrator {
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state_matrix(&self) -> &Matrix2<f64> {
        &self.a_g
    }

    pub fn input_matrix(&self) -> &Vector2<f64> {
        &self.b_g
    }

    pub fn step(&self, s: GripperState, a: f64) -> GripperState {
        let dt = self.dt;
        GripperState {
            p: s.p + dt * s.v + 0.5 * dt * dt * a,
            v: s.v + dt * a,
        }
    }
}

/// `f_own + A_f·v_own + C_f·v_other`.
pub fn step_embedding(
    params: &MpcParams,
    f_own: &DVector<f64>,
    v_own: f64,
    v_other: f64,
) -> Result<DVector<f64>> {
    check_len("embedding", params.a_f.len(), f_own.len())?;
    check_len("C_f", params.a_f.len(), params.c_f.len())?;
    Ok(f_own + &params.a_f * v_own + &params.c_f * v_other)
}

/// Per-agent acceleration sequences over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub agents: [Vec<f64>; 2],
}

impl ActionSequence {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            agents: [vec![0.0; horizon], vec![0.0; horizon]],
        }
    }

    pub fn horizon(&self) -> usize {
        self.agents[0].len()
    }

    pub fn from_stacked(x: &DVector<f64>) -> Result<Self> {
        if !x.len().is_multiple_of(2) {
            return Err(Error::DimensionMismatch {
                what: "stacked actions",
                expected: x.len() + 1,
                got: x.len(),
            });
        }
        let n = x.len() / 2;
        Ok(Self {
            agents: [
                x.rows(0, n).iter().copied().collect(),
                x.rows(n, n).iter().copied().collect(),
            ],
        })
    }

    pub fn stacked(&self) -> Result<DVector<f64>> {
        let n = self.horizon();
        check_len("agent-2 actions", n, self.agents[1].len())?;
        check_finite("actions", self.agents.iter().flatten())?;
        Ok(DVector::from_iterator(
            2 * n,
            self.agents[0].iter().chain(self.agents[1].iter()).copied(),
        ))
    }
}

/// The state-independent pieces of the condensed maps, per agent.
///
/// Row `r` of `velocity`/`position` gives step `r + 1`; row `k` of
/// `cumulative` gives the weights of each action in `Σ_{j<k} v_j`
/// (excluding the `k·v₀` part), for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftTemplate {
    pub horizon: usize,
    pub dt: f64,
    pub velocity: DMatrix<f64>,
    pub position: DMatrix<f64>,
    pub cumulative: DMatrix<f64>,
}

impl LiftTemplate {
    pub fn new(horizon: usize, dt: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NonPositiveDt(dt));
        }
        let n = horizon;
        let velocity = DMatrix::from_fn(n, n, |r, j| if j <= r { dt } else { 0.0 });
        let position = DMatrix::from_fn(n, n, |r, j| {
            if j <= r {
                dt * dt * ((r - j) as f64 + 0.5)
            } else {
                0.0
            }
        });
        let cumulative = DMatrix::from_fn(n + 1, n, |k, l| {
            if l + 1 < k {
                dt * (k - 1 - l) as f64
            } else {
                0.0
            }
        });
        Ok(Self {
            horizon,
            dt,
            velocity,
            position,
            cumulative,
        })
    }
}

/// Condensed two-agent trajectories: positions and velocities at steps
/// `1..=N` (agent-major), embeddings at steps `0..=N` (time-major, each
/// block `[f¹_k; f²_k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSystem {
    pub horizon: usize,
    pub embed_dim: usize,
    pub sv: DMatrix<f64>,
    pub sp: DMatrix<f64>,
    pub sf: DMatrix<f64>,
    pub p_offset: DVector<f64>,
    pub v_offset: DVector<f64>,
    pub f_offset: DVector<f64>,
}

/// Trajectories produced by a lifted system (or by direct rollout).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub positions: DVector<f64>,
    pub velocities: DVector<f64>,
    pub embeddings: DVector<f64>,
}

fn block_diag2(block: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(block);
    out.view_mut((r, c), (r, c)).copy_from(block);
    out
}

pub fn build_lifted(
    params: &MpcParams,
    cfg: &MpcConfig,
    states: [GripperState; 2],
    embeddings: [&DVector<f64>; 2],
) -> Result<LiftedSystem> {
    let template = LiftTemplate::new(cfg.horizon, cfg.dt)?;
    lift_with(&template, params, states, embeddings)
}

pub fn lift_with(
    t: &LiftTemplate,
    params: &MpcParams,
    states: [GripperState; 2],
    embeddings: [&DVector<f64>; 2],
) -> Result<LiftedSystem> {
    let m = params.a_f.len();
    check_len("C_f", m, params.c_f.len())?;
    check_len("agent-1 embedding", m, embeddings[0].len())?;
    check_len("agent-2 embedding", m, embeddings[1].len())?;
    check_finite("gripper state", states.iter().flat_map(|s| [s.p, s.v]))?;
    check_finite("embedding", embeddings.iter().flat_map(|e| e.iter()))?;
    let n = t.horizon;

    let sv = block_diag2(&t.velocity);
    let sp = block_diag2(&t.position);
    let mut p_offset = DVector::zeros(2 * n);
    let mut v_offset = DVector::zeros(2 * n);
    for (i, s) in states.iter().enumerate() {
        for r in 0..n {
            p_offset[i * n + r] = s.p + (r + 1) as f64 * t.dt * s.v;
            v_offset[i * n + r] = s.v;
        }
    }

    let mut sf = DMatrix::zeros(2 * m * (n + 1), 2 * n);
    let mut f_offset = DVector::zeros(2 * m * (n + 1));
    for k in 0..=n {
        for i in 0..2 {
            let other = 1 - i;
            let row0 = k * 2 * m + i * m;
            let own_cum = k as f64 * states[i].v;
            let other_cum = k as f64 * states[other].v;
            for e in 0..m {
                f_offset[row0 + e] =
                    embeddings[i][e] + params.a_f[e] * own_cum + params.c_f[e] * other_cum;
            }
            for l in 0..n {
                let w = t.cumulative[(k, l)];
                if w == 0.0 {
                    continue;
                }
                for e in 0..m {
                    sf[(row0 + e, i * n + l)] = params.a_f[e] * w;
                    sf[(row0 + e, other * n + l)] = params.c_f[e] * w;
                }
            }
        }
    }
    Ok(LiftedSystem {
        horizon: n,
        embed_dim: m,
        sv,
        sp,
        sf,
        p_offset,
        v_offset,
        f_offset,
    })
}

impl LiftedSystem {
    pub fn trajectories(&self, x: &DVector<f64>) -> Result<Trajectories> {
        check_len("stacked actions", 2 * self.horizon, x.len())?;
        Ok(Trajectories {
            positions: &self.sp * x + &self.p_offset,
            velocities: &self.sv * x + &self.v_offset,
            embeddings: &self.sf * x + &self.f_offset,
        })
    }

    /// Positions of `agent` at steps `1..=N`.
    pub fn openings(&self, x: &DVector<f64>, agent: usize) -> Result<DVector<f64>> {
        check_len("stacked actions", 2 * self.horizon, x.len())?;
        let n = self.horizon;
        let rows = self.sp.rows(agent * n, n);
        Ok(rows * x + self.p_offset.rows(agent * n, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrator_matrices() {
        let d = make_double_integrator(1.0).unwrap();
        assert_eq!(*d.state_matrix(), Matrix2::new(1.0, 1.0, 0.0, 1.0));
        assert_eq!(*d.input_matrix(), Vector2::new(0.5, 1.0));
        let d = make_double_integrator(0.1).unwrap();
        assert!((d.input_matrix()[0] - 0.005).abs() < 1e-15);
        assert_eq!(d.input_matrix()[1], 0.1);
        assert!(matches!(make_double_integrator(0.0), Err(Error::NonPositiveDt(_))));
        assert!(make_double_integrator(-0.5).is_err());
    }

    #[test]
    fn single_steps() {
        let d = make_double_integrator(0.01).unwrap();
        let s = d.step(GripperState::new(10.0, 2.0), 5.0);
        assert!((s.p - 10.02025).abs() < 1e-12);
        assert!((s.v - 2.05).abs() < 1e-12);
        let d = make_double_integrator(1.0).unwrap();
        assert_eq!(d.step(GripperState::default(), 0.0), GripperState::default());
        assert_eq!(d.step(GripperState::default(), 2.0), GripperState::new(1.0, 2.0));
        let d = make_double_integrator(0.5).unwrap();
        assert_eq!(d.step(GripperState::new(4.0, -1.0), 3.0), GripperState::new(3.875, 0.5));
    }

    #[test]
    fn embedding_step_basis() {
        let mut p = MpcParams::zeros(4);
        p.a_f[0] = 1.0;
        p.c_f[1] = 1.0;
        let f = step_embedding(&p, &DVector::zeros(4), 2.0, 3.0).unwrap();
        assert_eq!(f.as_slice(), &[2.0, 3.0, 0.0, 0.0]);
        let f0 = DVector::from_element(4, 0.7);
        assert_eq!(step_embedding(&p, &f0, 0.0, 0.0).unwrap(), f0);
        assert!(step_embedding(&p, &DVector::zeros(3), 0.0, 0.0).is_err());
    }

    #[test]
    fn one_step_horizon_blocks() {
        let dt = 0.01;
        let cfg = MpcConfig {
            horizon: 1,
            embed_dim: 2,
            dt,
            ..MpcConfig::default()
        };
        let p = MpcParams::zeros(2);
        let f = DVector::zeros(2);
        let lifted = build_lifted(&p, &cfg, [GripperState::default(); 2], [&f, &f]).unwrap();
        assert_eq!(lifted.sp, DMatrix::from_diagonal_element(2, 2, 0.5 * dt * dt));
        assert_eq!(lifted.sv, DMatrix::from_diagonal_element(2, 2, dt));
    }

    #[test]
    fn stacked_round_trip() {
        let x = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let seq = ActionSequence::from_stacked(&x).unwrap();
        assert_eq!(seq.agents[1], vec![3.0, 4.0]);
        assert_eq!(seq.stacked().unwrap(), x);
    }
}
