//! Equality-constrained KKT systems
//!
//! ```text
//! [ P   A_Sᵀ ] [x]   [r1]
//! [ A_S  0   ] [y] = [r2]
//! ```
//!
//! for a fixed set `S` of active rows. Used to polish ADMM iterates and to
//! differentiate a solution through its active set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, LU};

use super::{operator::Operator, BoundState, QpProblem, QpSolution};
use crate::error::{check_len, Error, Result};

const REFINE_STEPS: usize = 3;

enum Method {
    Schur {
        op: Operator,
        /// `P⁻¹ A_Sᵀ`
        w: DMatrix<f64>,
        schur: Cholesky<f64, Dyn>,
    },
    Lu(LU<f64, Dyn, Dyn>),
}

pub(crate) struct EqualityKkt<'a> {
    problem: &'a QpProblem,
    a_s: DMatrix<f64>,
    method: Method,
}

impl<'a> EqualityKkt<'a> {
    pub(crate) fn new(problem: &'a QpProblem, rows: &[usize]) -> Result<Self> {
        let n = problem.n();
        let a_s = problem.a().select_rows(rows);
        if let Some(method) = Self::schur(problem, &a_s) {
            return Ok(Self {
                problem,
                a_s,
                method,
            });
        }
        let k = rows.len();
        let delta = 1e-11 * (1.0 + problem.p().amax());
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(problem.p());
        for i in 0..n {
            kkt[(i, i)] += delta;
        }
        kkt.view_mut((n, 0), (k, n)).copy_from(&a_s);
        kkt.view_mut((0, n), (n, k)).copy_from(&a_s.transpose());
        for i in 0..k {
            kkt[(n + i, n + i)] = -delta;
        }
        let lu = LU::new(kkt);
        if !lu.is_invertible() {
            return Err(Error::Singular("active-set KKT system"));
        }
        Ok(Self {
            problem,
            a_s,
            method: Method::Lu(lu),
        })
    }

    fn schur(problem: &QpProblem, a_s: &DMatrix<f64>) -> Option<Method> {
        let mut op = match problem.structure() {
            Some(s) => Operator::kron(s.clone()),
            None => Operator::dense(problem.p().clone(), problem.a().clone()),
        };
        if !op.factor_p() {
            return None;
        }
        let (n, k) = (problem.n(), a_s.nrows());
        let mut w = DMatrix::zeros(n, k);
        for (j, row) in a_s.row_iter().enumerate() {
            w.set_column(j, &op.solve(&row.transpose()));
        }
        let schur = Cholesky::new(a_s * &w)?;
        Some(Method::Schur { op, w, schur })
    }

    fn solve_once(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.problem.n();
        match &self.method {
            Method::Schur { op, w, schur } => {
                let pr1 = op.solve(r1);
                let y = schur.solve(&(&self.a_s * &pr1 - r2));
                let x = pr1 - w * &y;
                (x, y)
            }
            Method::Lu(lu) => {
                let mut rhs = DVector::zeros(n + r2.len());
                rhs.rows_mut(0, n).copy_from(r1);
                rhs.rows_mut(n, r2.len()).copy_from(r2);
                let sol = lu.solve(&rhs).unwrap_or(rhs);
                (
                    sol.rows(0, n).into_owned(),
                    sol.rows(n, r2.len()).into_owned(),
                )
            }
        }
    }

    /// Solves with iterative refinement against the unregularized system.
    pub(crate) fn solve(
        &self,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (mut x, mut y) = self.solve_once(r1, r2);
        for _ in 0..REFINE_STEPS {
            let e1 = r1 - self.problem.p() * &x - self.a_s.tr_mul(&y);
            let e2 = r2 - &self.a_s * &x;
            let scale = r1.amax().max(r2.amax()).max(1e-300);
            if e1.amax().max(e2.amax()) <= 1e-15 * scale {
                break;
            }
            let (dx, dy) = self.solve_once(&e1, &e2);
            x += dx;
            y += dy;
        }
        (x, y)
    }
}

/// Solves the KKT system of `problem` restricted to `rows`.
pub fn solve_equality_kkt(
    problem: &QpProblem,
    rows: &[usize],
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_len("r1", problem.n(), r1.len())?;
    check_len("r2", rows.len(), r2.len())?;
    Ok(EqualityKkt::new(problem, rows)?.solve(r1, r2))
}

/// Gradients of a scalar loss with respect to the problem data, obtained
/// from one adjoint solve with the active set held fixed.
#[derive(Debug, Clone)]
pub struct QpAdjoint {
    /// Adjoint of the stationarity block; `∂L/∂q = −lambda`.
    pub lambda: DVector<f64>,
    pub dq: DVector<f64>,
    pub dl: DVector<f64>,
    pub du: DVector<f64>,
    pub active: Vec<BoundState>,
}

impl QpAdjoint {
    /// `∂L/∂P = −½(λxᵀ + xλᵀ)`.
    pub fn dp(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let outer = &self.lambda * x.transpose();
        (&outer + outer.transpose()) * -0.5
    }
}

/// Back-propagates `grad_x = ∂L/∂x*` through the solution `sol`.
pub fn sensitivity(
    problem: &QpProblem,
    sol: &QpSolution,
    grad_x: &DVector<f64>,
    active_tol: f64,
) -> Result<QpAdjoint> {
    check_len("grad_x", problem.n(), grad_x.len())?;
    let active = super::active_set(problem, &sol.x, active_tol);
    let rows: Vec<usize> = active
        .iter()
        .enumerate()
        .filter(|(_, s)| **s != BoundState::Inactive)
        .map(|(i, _)| i)
        .collect();
    let kkt = EqualityKkt::new(problem, &rows)?;
    let (lambda, mu) = kkt.solve(grad_x, &DVector::zeros(rows.len()));
    let m = problem.m();
    let mut dl = DVector::zeros(m);
    let mut du = DVector::zeros(m);
    for (k, &i) in rows.iter().enumerate() {
        match active[i] {
            BoundState::Lower => dl[i] = mu[k],
            BoundState::Upper => du[i] = mu[k],
            BoundState::Equality => {
                dl[i] = mu[k];
                du[i] = mu[k];
            }
            BoundState::Inactive => {}
        }
    }
    Ok(QpAdjoint {
        dq: -&lambda,
        lambda,
        dl,
        du,
        active,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::{solve, SolverSettings};

    #[test]
    fn unconstrained_gradient_is_negative_inverse_column() {
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let problem = QpProblem::new(
            p.clone(),
            DVector::from_row_slice(&[1.0, -1.0]),
            DMatrix::identity(2, 2),
            DVector::from_element(2, -100.0),
            DVector::from_element(2, 100.0),
        )
        .unwrap();
        let sol = solve(&problem, &SolverSettings::default(), None).unwrap();
        let pinv = p.try_inverse().unwrap();
        for j in 0..2 {
            let mut g = DVector::zeros(2);
            g[j] = 1.0;
            let adj = sensitivity(&problem, &sol, &g, 1e-5).unwrap();
            // x* = −P⁻¹q, so ∂x_j/∂q = −P⁻¹ row j (= column j by symmetry)
            let expected = -pinv.column(j);
            assert!((adj.dq - expected).amax() < 1e-12);
        }
    }

    #[test]
    fn bound_gradient_of_active_row() {
        // x* = u when the bound is active, so ∂x/∂u = 1
        let problem = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 0.5),
        )
        .unwrap();
        let sol = solve(&problem, &SolverSettings::default(), None).unwrap();
        let adj = sensitivity(&problem, &sol, &DVector::from_element(1, 1.0), 1e-5).unwrap();
        assert!((adj.du[0] - 1.0).abs() < 1e-12);
        assert_eq!(adj.dq[0], 0.0);
    }
}
