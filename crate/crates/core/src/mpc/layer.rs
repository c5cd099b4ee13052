//! Condensed two-agent MPC: QP assembly, forward solve and the adjoint
//! backward pass.
//!
//! With `x = [a¹; a²]` the tactile prediction at step `k` is
//! `F_k = F⁰_k + B·[c_kᵀa¹, c_kᵀa²]ᵀ` where `B = [[A_f, C_f], [C_f, A_f]]`
//! (one column per acting agent) and `c_k` are the cumulative-velocity
//! weights from [`LiftTemplate`]. Hence
//!
//! ```text
//! P = I ⊗ H + G ⊗ K,   G = BᵀQ_fB,
//! H = 2(Q_a·I + Q_v·Σ w_k s_k s_kᵀ),   K = 2·Σ w_k c_k c_kᵀ
//! ```
//!
//! which is exactly the structure the solver exploits.

use nalgebra::{DMatrix, DVector};

use super::params::{tactile_penalty, MpcConfig, MpcParams, TactilePenalty};
use crate::error::{check_finite, check_len, Error, Result};
use crate::lifting::{GripperState, LiftTemplate};
use crate::qp::{self, AgentKron, BoundState, QpProblem, QpSolution};

/// Observation fed to the layer, in fixed agent order.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcInput {
    pub states: [GripperState; 2],
    pub embeddings: [DVector<f64>; 2],
}

impl MpcInput {
    pub fn swapped(&self) -> Self {
        Self {
            states: [self.states[1], self.states[0]],
            embeddings: [self.embeddings[1].clone(), self.embeddings[0].clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Full objective value including the state-only constant.
    pub cost: f64,
    pub active_constraints: usize,
}

#[derive(Debug, Clone)]
pub struct MpcOutput {
    pub a_star: [f64; 2],
    /// Openings at steps `1..=N`, per agent.
    pub predicted_openings: [DVector<f64>; 2],
    pub qp: QpSolution,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct SingleOutput {
    pub a_star: f64,
    pub predicted_openings: DVector<f64>,
    pub qp: QpSolution,
    pub diagnostics: Diagnostics,
}

/// Upstream gradient with respect to the layer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    pub openings: [DVector<f64>; 2],
    pub a_star: [f64; 2],
}

impl OutputGradient {
    pub fn zeros(horizon: usize) -> Self {
        Self {
            openings: [DVector::zeros(horizon), DVector::zeros(horizon)],
            a_star: [0.0; 2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MpcGradients {
    /// Same layout as the parameters; the factor blocks carry gradients on
    /// their lower triangles only.
    pub params: MpcParams,
    pub embeddings: [DVector<f64>; 2],
    /// Set when a weakly active constraint was resolved toward "active".
    pub degenerate: bool,
}

/// How to treat weakly active constraints in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TiePolicy {
    #[default]
    Reject,
    TowardActive,
}

/// A QP together with the state-only part of the objective.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub problem: QpProblem,
    pub constant: f64,
}

impl Assembly {
    pub fn cost(&self, x: &DVector<f64>) -> f64 {
        self.problem.objective(x) + self.constant
    }
}

/// Parameter-dependent quantities computed once and shared by every
/// forward/backward call with the same parameters.
#[derive(Debug, Clone)]
pub struct PreparedLayer {
    cfg: MpcConfig,
    params: MpcParams,
    penalty: TactilePenalty,
    template: LiftTemplate,
    weights: Vec<f64>,
    own: DMatrix<f64>,
    shared: DMatrix<f64>,
    block_a: DMatrix<f64>,
    /// `Q_f·B`, 2M × 2.
    qf_b: DMatrix<f64>,
    /// `BᵀQ_fB`.
    gram: DMatrix<f64>,
}

impl PreparedLayer {
    pub fn new(params: &MpcParams, cfg: &MpcConfig) -> Result<Self> {
        cfg.validate()?;
        let penalty = tactile_penalty(params, cfg)?;
        let template = LiftTemplate::new(cfg.horizon, cfg.dt)?;
        let n = cfg.horizon;
        let m = cfg.embed_dim;
        let weights: Vec<f64> = (0..=n)
            .map(|k| if k == 0 { 1.0 } else { cfg.stage_weight(k) })
            .collect();

        let mut own = DMatrix::from_diagonal_element(n, n, cfg.q_a);
        for k in 1..=n {
            let s = template.velocity.row(k - 1);
            own += s.transpose() * s * (cfg.q_v * weights[k]);
        }
        own *= 2.0;
        let mut shared = DMatrix::zeros(n, n);
        for k in 0..=n {
            let c = template.cumulative.row(k);
            shared += c.transpose() * c * weights[k];
        }
        shared *= 2.0;

        let mut block_a = DMatrix::zeros(3 * n, n);
        block_a.view_mut((0, 0), (n, n)).copy_from(&template.position);
        block_a.view_mut((n, 0), (n, n)).copy_from(&template.velocity);
        block_a
            .view_mut((2 * n, 0), (n, n))
            .fill_with_identity();

        let mut b = DMatrix::zeros(2 * m, 2);
        b.view_mut((0, 0), (m, 1)).copy_from(&params.a_f);
        b.view_mut((m, 0), (m, 1)).copy_from(&params.c_f);
        b.view_mut((0, 1), (m, 1)).copy_from(&params.c_f);
        b.view_mut((m, 1), (m, 1)).copy_from(&params.a_f);
        let qf_b = &penalty.matrix * &b;
        let gram = b.transpose() * &qf_b;
        let gram = (&gram + gram.transpose()) * 0.5;

        Ok(Self {
            cfg: cfg.clone(),
            params: params.clone(),
            penalty,
            template,
            weights,
            own,
            shared,
            block_a,
            qf_b,
            gram,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn params(&self) -> &MpcParams {
        &self.params
    }

    pub fn tactile_penalty(&self) -> &DMatrix<f64> {
        &self.penalty.matrix
    }

    fn check_input(&self, input: &MpcInput) -> Result<()> {
        let m = self.cfg.embed_dim;
        check_len("agent-1 embedding", m, input.embeddings[0].len())?;
        check_len("agent-2 embedding", m, input.embeddings[1].len())?;
        check_finite("embedding", input.embeddings.iter().flat_map(|e| e.iter()))?;
        check_finite(
            "gripper state",
            input.states.iter().flat_map(|s| [s.p, s.v]),
        )
    }

    fn agent_bounds(&self, s: GripperState) -> (DVector<f64>, DVector<f64>) {
        let n = self.cfg.horizon;
        let b = &self.cfg.bounds;
        let dt = self.cfg.dt;
        let mut l = DVector::zeros(3 * n);
        let mut u = DVector::zeros(3 * n);
        for r in 0..n {
            let drift = s.p + (r + 1) as f64 * dt * s.v;
            l[r] = b.p_min - drift;
            u[r] = b.p_max - drift;
            l[n + r] = b.v_min - s.v;
            u[n + r] = b.v_max - s.v;
            l[2 * n + r] = b.a_min;
            u[2 * n + r] = b.a_max;
        }
        (l, u)
    }

    /// Linear cost of one agent given the projections `Q_fB`-weighted
    /// offsets: `proj0` for the embeddings and `proj_v` per unit of
    /// accumulated velocity.
    fn agent_linear(&self, v0: f64, proj0: f64, proj_v: f64) -> DVector<f64> {
        let n = self.cfg.horizon;
        let mut q = DVector::zeros(n);
        for k in 1..=n {
            let w = self.weights[k];
            q += self.template.velocity.row(k - 1).transpose() * (self.cfg.q_v * w * v0);
            q += self.template.cumulative.row(k).transpose() * (w * (proj0 + k as f64 * proj_v));
        }
        q * 2.0
    }

    /// `Σ_k w_k (a + k·b + k²·c)`.
    fn weighted_poly(&self, a: f64, b: f64, c: f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let k = k as f64;
                w * (a + k * b + k * k * c)
            })
            .sum()
    }

    pub fn build_qp(&self, input: &MpcInput) -> Result<Assembly> {
        self.check_input(input)?;
        let m = self.cfg.embed_dim;
        let f0 = stack(&input.embeddings[0], &input.embeddings[1]);
        let v0 = DVector::from_row_slice(&[input.states[0].v, input.states[1].v]);
        // F⁰_k = f0 + k·B·v0
        let proj0 = self.qf_b.tr_mul(&f0);
        let proj_v = &self.gram * &v0;

        let mut q = DVector::zeros(2 * self.cfg.horizon);
        let mut l = DVector::zeros(6 * self.cfg.horizon);
        let mut u = DVector::zeros(6 * self.cfg.horizon);
        let n = self.cfg.horizon;
        for i in 0..2 {
            q.rows_mut(i * n, n)
                .copy_from(&self.agent_linear(v0[i], proj0[i], proj_v[i]));
            let (li, ui) = self.agent_bounds(input.states[i]);
            l.rows_mut(i * 3 * n, 3 * n).copy_from(&li);
            u.rows_mut(i * 3 * n, 3 * n).copy_from(&ui);
        }
        let f0_qf_f0 = f0.dot(&(&self.penalty.matrix * &f0));
        let constant = self.weighted_poly(
            f0_qf_f0 + self.cfg.q_v * v0.norm_squared(),
            2.0 * proj0.dot(&v0),
            v0.dot(&proj_v),
        );
        debug_assert_eq!(f0.len(), 2 * m);

        let structure = AgentKron {
            coupling: self.gram.clone(),
            own: self.own.clone(),
            shared: self.shared.clone(),
            block_a: self.block_a.clone(),
        };
        Ok(Assembly {
            problem: QpProblem::from_structure(structure, q, l, u)?,
            constant,
        })
    }

    /// The single-agent problem of `agent`, built from the diagonal penalty
    /// block and the own-velocity sensitivity only.
    pub fn build_single_qp(
        &self,
        agent: usize,
        state: GripperState,
        embedding: &DVector<f64>,
    ) -> Result<Assembly> {
        if agent > 1 {
            return Err(Error::Config(format!("agent index {agent} out of range")));
        }
        let m = self.cfg.embed_dim;
        check_len("embedding", m, embedding.len())?;
        check_finite("embedding", embedding.iter())?;
        check_finite("gripper state", [state.p, state.v].iter())?;
        let block = self.penalty.matrix.view((agent * m, agent * m), (m, m));
        let qf_b = block * &self.params.a_f;
        let gram = self.params.a_f.dot(&qf_b);
        let proj0 = qf_b.dot(embedding);
        let proj_v = gram * state.v;
        let q = self.agent_linear(state.v, proj0, proj_v);
        let (l, u) = self.agent_bounds(state);
        let constant = self.weighted_poly(
            embedding.dot(&(block * embedding)) + self.cfg.q_v * state.v * state.v,
            2.0 * proj0 * state.v,
            state.v * proj_v,
        );
        let structure = AgentKron {
            coupling: DMatrix::from_element(1, 1, gram),
            own: self.own.clone(),
            shared: self.shared.clone(),
            block_a: self.block_a.clone(),
        };
        Ok(Assembly {
            problem: QpProblem::from_structure(structure, q, l, u)?,
            constant,
        })
    }

    fn solve(&self, assembly: &Assembly, warm: Option<&QpSolution>) -> Result<QpSolution> {
        let warm = warm.filter(|w| w.x.len() == assembly.problem.n() && w.y.len() == assembly.problem.m());
        let sol = qp::solve(&assembly.problem, &self.cfg.solver, warm)?;
        if !sol.is_solved() {
            return Err(Error::SolverFailed {
                status: sol.status,
                iterations: sol.iterations,
                primal: sol.primal_residual,
                dual: sol.dual_residual,
            });
        }
        Ok(sol)
    }

    fn count_active(&self, problem: &QpProblem, x: &DVector<f64>) -> usize {
        qp::active_set(problem, x, self.active_tol())
            .iter()
            .filter(|s| **s != BoundState::Inactive)
            .count()
    }

    fn active_tol(&self) -> f64 {
        10.0 * self.cfg.solver.eps_abs
    }

    fn openings(&self, x: &DVector<f64>, p0: f64, v0: f64) -> DVector<f64> {
        let n = self.cfg.horizon;
        let dt = self.cfg.dt;
        let mut p = &self.template.position * x;
        for r in 0..n {
            p[r] += p0 + (r + 1) as f64 * dt * v0;
        }
        p
    }

    pub fn forward(&self, input: &MpcInput, warm: Option<&QpSolution>) -> Result<MpcOutput> {
        let assembly = self.build_qp(input)?;
        let sol = self.solve(&assembly, warm)?;
        let n = self.cfg.horizon;
        let x1 = sol.x.rows(0, n).into_owned();
        let x2 = sol.x.rows(n, n).into_owned();
        let predicted_openings = [
            self.openings(&x1, input.states[0].p, input.states[0].v),
            self.openings(&x2, input.states[1].p, input.states[1].v),
        ];
        let diagnostics = Diagnostics {
            cost: assembly.cost(&sol.x),
            active_constraints: self.count_active(&assembly.problem, &sol.x),
        };
        Ok(MpcOutput {
            a_star: [sol.x[0], sol.x[n]],
            predicted_openings,
            qp: sol,
            diagnostics,
        })
    }

    pub fn forward_single(
        &self,
        agent: usize,
        state: GripperState,
        embedding: &DVector<f64>,
        warm: Option<&QpSolution>,
    ) -> Result<SingleOutput> {
        let assembly = self.build_single_qp(agent, state, embedding)?;
        let sol = self.solve(&assembly, warm)?;
        let diagnostics = Diagnostics {
            cost: assembly.cost(&sol.x),
            active_constraints: self.count_active(&assembly.problem, &sol.x),
        };
        Ok(SingleOutput {
            a_star: sol.x[0],
            predicted_openings: self.openings(&sol.x, state.p, state.v),
            qp: sol,
            diagnostics,
        })
    }

    /// Rows whose activity cannot be decided from the solution.
    fn weak_rows(&self, problem: &QpProblem, sol: &QpSolution) -> Vec<usize> {
        let ax = problem.a() * &sol.x;
        let tol = self.active_tol();
        let y_scale = sol.y.amax().max(1.0);
        (0..problem.m())
            .filter(|&i| {
                let margin = (ax[i] - problem.l()[i]).min(problem.u()[i] - ax[i]);
                if margin <= tol {
                    sol.y[i].abs() <= 1e-6 * y_scale
                } else {
                    margin <= WEAK_MARGIN
                }
            })
            .collect()
    }

    pub fn backward(
        &self,
        input: &MpcInput,
        output: &MpcOutput,
        grad: &OutputGradient,
        policy: TiePolicy,
    ) -> Result<MpcGradients> {
        let n = self.cfg.horizon;
        let m = self.cfg.embed_dim;
        check_len("opening gradient", n, grad.openings[0].len())?;
        check_len("opening gradient", n, grad.openings[1].len())?;
        if !output.qp.is_solved() {
            return Err(Error::SolverFailed {
                status: output.qp.status,
                iterations: output.qp.iterations,
                primal: output.qp.primal_residual,
                dual: output.qp.dual_residual,
            });
        }
        let assembly = self.build_qp(input)?;
        let problem = &assembly.problem;
        let weak = self.weak_rows(problem, &output.qp);
        if !weak.is_empty() && policy == TiePolicy::Reject {
            return Err(Error::DegenerateActiveSet { rows: weak });
        }

        let mut g = DVector::zeros(2 * n);
        for i in 0..2 {
            let gi = self.template.position.tr_mul(&grad.openings[i]);
            g.rows_mut(i * n, n).copy_from(&gi);
            g[i * n] += grad.a_star[i];
        }
        // Weak rows within the activity band count as active; rows outside
        // it are left inactive under either policy.
        let adj = qp::sensitivity(problem, &output.qp, &g, self.active_tol())?;
        let lambda = adj.lambda;

        let x = &output.qp.x;
        let mut cum = [DVector::zeros(n + 1), DVector::zeros(n + 1)];
        let mut cum_l = [DVector::zeros(n + 1), DVector::zeros(n + 1)];
        for i in 0..2 {
            cum[i] = &self.template.cumulative * x.rows(i * n, n);
            for k in 0..=n {
                cum[i][k] += k as f64 * input.states[i].v;
            }
            cum_l[i] = &self.template.cumulative * lambda.rows(i * n, n);
        }

        let p = &self.params;
        let qf = &self.penalty.matrix;
        let mut d_af = DVector::zeros(m);
        let mut d_cf = DVector::zeros(m);
        let mut d_f0 = [DVector::zeros(m), DVector::zeros(m)];
        let mut g_q = DMatrix::zeros(2 * m, 2 * m);
        let mut f = DVector::zeros(2 * m);
        let mut fl = DVector::zeros(2 * m);
        for k in 0..=n {
            let w = self.weights[k];
            for i in 0..2 {
                let o = 1 - i;
                f.rows_mut(i * m, m).copy_from(
                    &(&input.embeddings[i] + &p.a_f * cum[i][k] + &p.c_f * cum[o][k]),
                );
                fl.rows_mut(i * m, m)
                    .copy_from(&(&p.a_f * cum_l[i][k] + &p.c_f * cum_l[o][k]));
            }
            let gk = qf * &f;
            let hk = qf * &fl;
            for i in 0..2 {
                let o = 1 - i;
                let gi = gk.rows(i * m, m);
                let hi = hk.rows(i * m, m);
                d_af += (gi * cum_l[i][k] + hi * cum[i][k]) * (-2.0 * w);
                d_cf += (gi * cum_l[o][k] + hi * cum[o][k]) * (-2.0 * w);
                d_f0[i] += hi * (-2.0 * w);
            }
            g_q.ger(-w, &fl, &f, 1.0);
            g_q.ger(-w, &f, &fl, 1.0);
        }
        if let Some(v) = &self.penalty.min_vector {
            let tr = g_q.trace();
            g_q.ger(-tr, v, v, 1.0);
        }

        let gs11 = g_q.view((0, 0), (m, m));
        let gs22 = g_q.view((m, m), (m, m));
        let gs12 = g_q.view((0, m), (m, m)).into_owned();
        let mut d_q1 = gs11 * &p.q1 * 2.0;
        let mut d_q2 = gs22 * &p.q2 * 2.0;
        for j in 0..m {
            for i in 0..j {
                d_q1[(i, j)] = 0.0;
                d_q2[(i, j)] = 0.0;
            }
        }
        let d_qc = &gs12 * (2.0 * p.alpha);
        let d_alpha = 2.0 * gs12.dot(&p.qc);

        Ok(MpcGradients {
            params: MpcParams {
                a_f: d_af,
                c_f: d_cf,
                q1: d_q1,
                q2: d_q2,
                qc: d_qc,
                alpha: d_alpha,
            },
            embeddings: d_f0,
            degenerate: !weak.is_empty(),
        })
    }
}

/// Inactive rows closer than this to a bound make the active set ambiguous.
const WEAK_MARGIN: f64 = 1e-4;

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

pub fn build_qp(params: &MpcParams, cfg: &MpcConfig, input: &MpcInput) -> Result<QpProblem> {
    Ok(PreparedLayer::new(params, cfg)?.build_qp(input)?.problem)
}

pub fn forward(
    params: &MpcParams,
    cfg: &MpcConfig,
    input: &MpcInput,
    warm: Option<&QpSolution>,
) -> Result<MpcOutput> {
    PreparedLayer::new(params, cfg)?.forward(input, warm)
}

pub fn backward(
    params: &MpcParams,
    cfg: &MpcConfig,
    input: &MpcInput,
    output: &MpcOutput,
    grad: &OutputGradient,
) -> Result<MpcGradients> {
    PreparedLayer::new(params, cfg)?.backward(input, output, grad, TiePolicy::Reject)
}
