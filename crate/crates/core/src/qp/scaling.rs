//! Modified Ruiz equilibration with cost scaling, as in OSQP.
//!
//! The scaled problem is `P̄ = c·DPD`, `q̄ = c·Dq`, `Ā = EAD`, `l̄ = El`,
//! `ū = Eu`. For structured problems `D` and `E` are tied across agents so
//! the Kronecker form survives scaling.

use nalgebra::{DMatrix, DVector};

use super::{operator::Operator, AgentKron, QpProblem};

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;

#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    pub d: DVector<f64>,
    pub e: DVector<f64>,
    pub c: f64,
}

pub(crate) struct Scaled {
    pub op: Operator,
    pub scaling: Scaling,
    pub q: DVector<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

fn limit(norm: f64) -> f64 {
    if norm < MIN_SCALING {
        1.0
    } else {
        norm.min(MAX_SCALING)
    }
}

fn col_amax(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.amax()))
}

fn row_amax(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.row_iter().map(|r| r.amax()))
}

fn scale_sym(m: &mut DMatrix<f64>, d: &DVector<f64>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= d[i] * d[j];
        }
    }
}

fn scale_rect(m: &mut DMatrix<f64>, rows: &DVector<f64>, cols: &DVector<f64>) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= rows[i] * cols[j];
        }
    }
}

pub(crate) fn equilibrate(problem: &QpProblem, iters: usize) -> Scaled {
    match problem.structure() {
        Some(s) => equilibrate_kron(problem, s.clone(), iters),
        None => equilibrate_dense(problem, iters),
    }
}

fn equilibrate_dense(problem: &QpProblem, iters: usize) -> Scaled {
    let (n, m) = (problem.n(), problem.m());
    let mut p = problem.p().clone();
    let mut a = problem.a().clone();
    let mut q = problem.q().clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(m, 1.0);
    let mut c = 1.0;
    for _ in 0..iters {
        let pn = col_amax(&p);
        let an = col_amax(&a);
        let dd = DVector::from_iterator(n, (0..n).map(|j| 1.0 / limit(pn[j].max(an[j])).sqrt()));
        let rn = row_amax(&a);
        let de = DVector::from_iterator(m, (0..m).map(|i| 1.0 / limit(rn[i]).sqrt()));
        scale_sym(&mut p, &dd);
        scale_rect(&mut a, &de, &dd);
        q.component_mul_assign(&dd);
        d.component_mul_assign(&dd);
        e.component_mul_assign(&de);

        let mean = if n > 0 { col_amax(&p).mean() } else { 1.0 };
        let gamma = 1.0 / limit(limit(mean).max(q.amax()));
        p *= gamma;
        q *= gamma;
        c *= gamma;
    }
    let l = problem.l().component_mul(&e);
    let u = problem.u().component_mul(&e);
    Scaled {
        op: Operator::dense(p, a),
        scaling: Scaling { d, e, c },
        q,
        l,
        u,
    }
}

fn equilibrate_kron(problem: &QpProblem, mut s: AgentKron, iters: usize) -> Scaled {
    let (na, nb, mb) = (s.agents(), s.block_n(), s.block_m());
    let mut q = problem.q().clone();
    let mut db = DVector::from_element(nb, 1.0);
    let mut eb = DVector::from_element(mb, 1.0);
    let mut c = 1.0;
    for _ in 0..iters {
        let pn = kron_col_norms(&s);
        let an = col_amax(&s.block_a);
        let dd = DVector::from_iterator(nb, (0..nb).map(|j| 1.0 / limit(pn[j].max(an[j])).sqrt()));
        let rn = row_amax(&s.block_a);
        let de = DVector::from_iterator(mb, (0..mb).map(|i| 1.0 / limit(rn[i]).sqrt()));
        scale_sym(&mut s.own, &dd);
        scale_sym(&mut s.shared, &dd);
        scale_rect(&mut s.block_a, &de, &dd);
        for i in 0..na {
            q.rows_mut(i * nb, nb).component_mul_assign(&dd);
        }
        db.component_mul_assign(&dd);
        eb.component_mul_assign(&de);

        let mean = if nb > 0 { kron_col_norms(&s).mean() } else { 1.0 };
        let gamma = 1.0 / limit(limit(mean).max(q.amax()));
        s.own *= gamma;
        s.shared *= gamma;
        q *= gamma;
        c *= gamma;
    }
    let d = DVector::from_iterator(na * nb, (0..na * nb).map(|k| db[k % nb]));
    let e = DVector::from_iterator(na * mb, (0..na * mb).map(|k| eb[k % mb]));
    let l = problem.l().component_mul(&e);
    let u = problem.u().component_mul(&e);
    Scaled {
        op: Operator::kron(s),
        scaling: Scaling { d, e, c },
        q,
        l,
        u,
    }
}

/// Column ∞-norms of `I ⊗ own + G ⊗ shared`, maximized over agents.
fn kron_col_norms(s: &AgentKron) -> DVector<f64> {
    let (na, nb) = (s.agents(), s.block_n());
    let shared_max = col_amax(&s.shared);
    let off_diag = (0..na)
        .flat_map(|i| (0..na).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| s.coupling[(i, j)].abs())
        .fold(0.0_f64, f64::max);
    let mut out = DVector::zeros(nb);
    for i in 0..na {
        let gii = s.coupling[(i, i)];
        for col in 0..nb {
            let diag = (0..nb)
                .map(|r| (s.own[(r, col)] + gii * s.shared[(r, col)]).abs())
                .fold(0.0_f64, f64::max);
            out[col] = f64::max(out[col], diag.max(off_diag * shared_max[col]));
        }
    }
    out
}
