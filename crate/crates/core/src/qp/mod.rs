//! Convex quadratic programs in the form
//!
//! ```text
//! minimize    ½ xᵀPx + qᵀx
//! subject to  l ≤ Ax ≤ u
//! ```
//!
//! solved with an operator-splitting ADMM (the OSQP iteration) followed by
//! active-set polishing. Problems built by the MPC layer can carry an
//! [`AgentKron`] structure hint, which lets the linear algebra run per agent
//! instead of on the full dense matrices.

mod admm;
mod dump;
mod kkt;
mod operator;
mod scaling;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

pub use admm::solve;
pub use dump::{parse_dump, write_dump};
pub use kkt::{sensitivity, solve_equality_kkt, QpAdjoint};

/// Block structure shared by multi-agent problems whose agents use one set
/// of parameters:
///
/// ```text
/// P = I ⊗ own + coupling ⊗ shared,   A = I ⊗ block_a
/// ```
///
/// with the decision vector stacked agent-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentKron {
    pub coupling: DMatrix<f64>,
    pub own: DMatrix<f64>,
    pub shared: DMatrix<f64>,
    pub block_a: DMatrix<f64>,
}

impl AgentKron {
    pub fn agents(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn block_n(&self) -> usize {
        self.own.nrows()
    }

    pub fn block_m(&self) -> usize {
        self.block_a.nrows()
    }

    pub fn dense_p(&self) -> DMatrix<f64> {
        let (na, nb) = (self.agents(), self.block_n());
        let mut p = DMatrix::zeros(na * nb, na * nb);
        for i in 0..na {
            for j in 0..na {
                let mut blk = self.shared.scale(self.coupling[(i, j)]);
                if i == j {
                    blk += &self.own;
                }
                p.view_mut((i * nb, j * nb), (nb, nb)).copy_from(&blk);
            }
        }
        p
    }

    pub fn dense_a(&self) -> DMatrix<f64> {
        let (na, nb, mb) = (self.agents(), self.block_n(), self.block_m());
        let mut a = DMatrix::zeros(na * mb, na * nb);
        for i in 0..na {
            a.view_mut((i * mb, i * nb), (mb, nb))
                .copy_from(&self.block_a);
        }
        a
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    structure: Option<AgentKron>,
}

impl QpProblem {
    /// Validates shapes and finiteness and symmetrizes `p`.
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let n = q.len();
        let m = l.len();
        check_len("P rows", n, p.nrows())?;
        check_len("P cols", n, p.ncols())?;
        check_len("A cols", n, a.ncols())?;
        check_len("A rows", m, a.nrows())?;
        check_len("u", m, u.len())?;
        check_finite("P", p.iter())?;
        check_finite("q", q.iter())?;
        check_finite("A", a.iter())?;
        check_finite("l", l.iter())?;
        check_finite("u", u.iter())?;
        if let Some(i) = (0..m).find(|&i| l[i] > u[i]) {
            return Err(Error::Config(format!(
                "lower bound exceeds upper bound at row {i} ({} > {})",
                l[i], u[i]
            )));
        }
        let p = (&p + p.transpose()) * 0.5;
        Ok(Self {
            p,
            q,
            a,
            l,
            u,
            structure: None,
        })
    }

    /// Builds the problem from a structure hint; `P` and `A` are expanded
    /// densely so every consumer still sees the plain standard form.
    pub fn from_structure(
        structure: AgentKron,
        q: DVector<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self> {
        let na = structure.agents();
        check_len("coupling cols", na, structure.coupling.ncols())?;
        check_len("shared rows", structure.block_n(), structure.shared.nrows())?;
        check_len("block_a cols", structure.block_n(), structure.block_a.ncols())?;
        let mut problem = Self::new(structure.dense_p(), q, structure.dense_a(), l, u)?;
        problem.structure = Some(structure);
        Ok(problem)
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn l(&self) -> &DVector<f64> {
        &self.l
    }

    pub fn u(&self) -> &DVector<f64> {
        &self.u
    }

    pub fn structure(&self) -> Option<&AgentKron> {
        self.structure.as_ref()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    /// Multiplies `(P, q)` by a positive factor. The minimizer is unchanged.
    pub fn scale_cost(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.p *= factor;
        out.q *= factor;
        if let Some(s) = out.structure.as_mut() {
            s.own *= factor;
            s.shared *= factor;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    /// True when the returned point came from solving the KKT system of the
    /// identified active set rather than from the ADMM iterates.
    pub polished: bool,
}

impl QpSolution {
    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub rho: f64,
    pub sigma: f64,
    pub max_iter: usize,
    pub warm_start: bool,
    /// Over-relaxation factor of the ADMM iteration.
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    /// Consecutive iterations with an unchanged active-set guess before an
    /// early polish is attempted.
    pub polish_stable: usize,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            rho: 0.1,
            sigma: 1e-6,
            max_iter: 4000,
            warm_start: true,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            scaling_iters: 10,
            polish: true,
            polish_stable: 4,
            eps_prim_inf: 1e-5,
            eps_dual_inf: 1e-5,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_abs", self.eps_abs),
            ("eps_rel", self.eps_rel),
            ("rho", self.rho),
            ("sigma", self.sigma),
            ("alpha", self.alpha),
            ("eps_prim_inf", self.eps_prim_inf),
            ("eps_dual_inf", self.eps_dual_inf),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("solver setting {name} must be positive")));
            }
        }
        if self.alpha >= 2.0 {
            return Err(Error::Config("solver alpha must be below 2".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("solver max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub primal: f64,
    pub dual: f64,
    pub comp: f64,
}

/// Primal infeasibility `dist(Ax, [l, u])`, stationarity `‖Px + q + Aᵀy‖`
/// and box complementarity, all in the ∞-norm.
pub fn kkt_residuals(problem: &QpProblem, sol: &QpSolution) -> Result<KktResiduals> {
    residuals_at(problem, &sol.x, &sol.y)
}

pub(crate) fn residuals_at(
    problem: &QpProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
) -> Result<KktResiduals> {
    check_len("x", problem.n(), x.len())?;
    check_len("y", problem.m(), y.len())?;
    let ax = problem.a() * x;
    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    for i in 0..problem.m() {
        let (lo, hi) = (problem.l[i], problem.u[i]);
        primal = primal.max(lo - ax[i]).max(ax[i] - hi);
        let upper_gap = (hi - ax[i]).max(0.0);
        let lower_gap = (ax[i] - lo).max(0.0);
        comp = comp
            .max(y[i].max(0.0).min(upper_gap))
            .max((-y[i]).max(0.0).min(lower_gap));
    }
    let stat = problem.p() * x + problem.q() + problem.a().tr_mul(y);
    Ok(KktResiduals {
        primal,
        dual: stat.amax(),
        comp,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Inactive,
    Lower,
    Upper,
    /// `l = u`; always active.
    Equality,
}

/// Classifies each row by its distance to the nearest bound.
pub fn active_set(problem: &QpProblem, x: &DVector<f64>, tol: f64) -> Vec<BoundState> {
    let ax = problem.a() * x;
    (0..problem.m())
        .map(|i| {
            let (lo, hi) = (problem.l[i], problem.u[i]);
            if lo == hi {
                BoundState::Equality
            } else if hi - ax[i] <= tol {
                BoundState::Upper
            } else if ax[i] - lo <= tol {
                BoundState::Lower
            } else {
                BoundState::Inactive
            }
        })
        .collect()
}
