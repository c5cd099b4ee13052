use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::AgentKron;

/// Matrix-free view of `(P, A)` used by the ADMM loop, plus the
/// factorization of `P + σI + AᵀRA`.
#[derive(Debug, Clone)]
pub(crate) enum Operator {
    Dense {
        p: DMatrix<f64>,
        a: DMatrix<f64>,
        factor: Option<Cholesky<f64, Dyn>>,
    },
    Kron {
        s: AgentKron,
        /// Eigenvectors of the coupling matrix (columns).
        rot: DMatrix<f64>,
        eig: DVector<f64>,
        factors: Vec<Cholesky<f64, Dyn>>,
    },
}

impl Operator {
    pub(crate) fn dense(p: DMatrix<f64>, a: DMatrix<f64>) -> Self {
        Operator::Dense { p, a, factor: None }
    }

    pub(crate) fn kron(s: AgentKron) -> Self {
        let (rot, eig) = coupling_eigen(&s.coupling);
        Operator::Kron {
            s,
            rot,
            eig,
            factors: Vec::new(),
        }
    }

    pub(crate) fn p_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::Dense { p, .. } => p * x,
            Operator::Kron { s, .. } => {
                let (na, nb) = (s.agents(), s.block_n());
                let mut out = DVector::zeros(na * nb);
                let shared: Vec<DVector<f64>> = (0..na)
                    .map(|j| &s.shared * x.rows(j * nb, nb))
                    .collect();
                for i in 0..na {
                    let mut blk = &s.own * x.rows(i * nb, nb);
                    for (j, sj) in shared.iter().enumerate() {
                        blk.axpy(s.coupling[(i, j)], sj, 1.0);
                    }
                    out.rows_mut(i * nb, nb).copy_from(&blk);
                }
                out
            }
        }
    }

    pub(crate) fn a_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::Dense { a, .. } => a * x,
            Operator::Kron { s, .. } => {
                let (na, nb, mb) = (s.agents(), s.block_n(), s.block_m());
                let mut out = DVector::zeros(na * mb);
                for i in 0..na {
                    let blk = &s.block_a * x.rows(i * nb, nb);
                    out.rows_mut(i * mb, mb).copy_from(&blk);
                }
                out
            }
        }
    }

    pub(crate) fn at_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::Dense { a, .. } => a.tr_mul(y),
            Operator::Kron { s, .. } => {
                let (na, nb, mb) = (s.agents(), s.block_n(), s.block_m());
                let mut out = DVector::zeros(na * nb);
                for i in 0..na {
                    let blk = s.block_a.tr_mul(&y.rows(i * mb, mb));
                    out.rows_mut(i * nb, nb).copy_from(&blk);
                }
                out
            }
        }
    }

    /// Whether a per-row penalty vector is compatible with this operator's
    /// block structure.
    pub(crate) fn supports_rho(&self, rho: &DVector<f64>) -> bool {
        match self {
            Operator::Dense { .. } => true,
            Operator::Kron { s, .. } => {
                let mb = s.block_m();
                (0..rho.len()).all(|i| rho[i] == rho[i % mb])
            }
        }
    }

    /// Factors `P + σI + Aᵀ diag(rho) A`. Returns false if the matrix is not
    /// numerically positive definite.
    pub(crate) fn factor(&mut self, sigma: f64, rho: &DVector<f64>) -> bool {
        match self {
            Operator::Dense { p, a, factor } => {
                let mut k = p.clone();
                let mut ra = a.clone();
                for (i, mut row) in ra.row_iter_mut().enumerate() {
                    row *= rho[i];
                }
                k += a.tr_mul(&ra);
                for i in 0..k.nrows() {
                    k[(i, i)] += sigma;
                }
                *factor = Cholesky::new(k);
                factor.is_some()
            }
            Operator::Kron {
                s, eig, factors, ..
            } => {
                let mb = s.block_m();
                let mut ra = s.block_a.clone();
                for (i, mut row) in ra.row_iter_mut().enumerate() {
                    row *= rho[i % mb];
                }
                let mut base = &s.own + s.block_a.tr_mul(&ra);
                for i in 0..base.nrows() {
                    base[(i, i)] += sigma;
                }
                factors.clear();
                for &lam in eig.iter() {
                    match Cholesky::new(&base + s.shared.scale(lam)) {
                        Some(c) => factors.push(c),
                        None => return false,
                    }
                }
                true
            }
        }
    }

    /// Factors `P` alone (σ = 0, no constraint term); used to eliminate `x`
    /// from equality-constrained KKT systems.
    pub(crate) fn factor_p(&mut self) -> bool {
        let m = match self {
            Operator::Dense { a, .. } => a.nrows(),
            Operator::Kron { s, .. } => s.block_m() * s.agents(),
        };
        self.factor(0.0, &DVector::zeros(m))
    }

    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Operator::Dense { factor, .. } => factor
                .as_ref()
                .expect("operator must be factored before solve")
                .solve(rhs),
            Operator::Kron {
                s, rot, factors, ..
            } => {
                let (na, nb) = (s.agents(), s.block_n());
                let mut out = DVector::zeros(na * nb);
                for j in 0..na {
                    let mut r = DVector::zeros(nb);
                    for i in 0..na {
                        r.axpy(rot[(i, j)], &rhs.rows(i * nb, nb), 1.0);
                    }
                    let xj = factors[j].solve(&r);
                    for i in 0..na {
                        let mut blk = out.rows_mut(i * nb, nb);
                        blk.axpy(rot[(i, j)], &xj, 1.0);
                    }
                }
                out
            }
        }
    }
}

fn coupling_eigen(g: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    match g.nrows() {
        1 => (DMatrix::identity(1, 1), DVector::from_element(1, g[(0, 0)])),
        _ => {
            let e = SymmetricEigen::new(g.clone());
            (e.eigenvectors, e.eigenvalues)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AgentKron {
        AgentKron {
            coupling: DMatrix::from_row_slice(2, 2, &[2.0, -0.7, -0.7, 1.5]),
            own: DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]),
            shared: DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.8, 0.0, 0.1, 0.0, 0.6]),
            block_a: DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, -1.0, 0.0]),
        }
    }

    #[test]
    fn kron_matches_dense() {
        let s = sample();
        let dense = Operator::dense(s.dense_p(), s.dense_a());
        let kron = Operator::kron(s);
        let x = DVector::from_row_slice(&[0.3, -1.0, 2.0, 0.7, 0.1, -0.4]);
        let y = DVector::from_row_slice(&[1.0, -2.0, 0.5, 0.25]);
        assert!((dense.p_mul(&x) - kron.p_mul(&x)).amax() < 1e-12);
        assert!((dense.a_mul(&x) - kron.a_mul(&x)).amax() < 1e-12);
        assert!((dense.at_mul(&y) - kron.at_mul(&y)).amax() < 1e-12);

        let rho = DVector::from_row_slice(&[0.1, 0.2, 0.1, 0.2]);
        let (mut dense, mut kron) = (dense, kron);
        assert!(dense.supports_rho(&rho) && kron.supports_rho(&rho));
        assert!(dense.factor(1e-6, &rho));
        assert!(kron.factor(1e-6, &rho));
        assert!((dense.solve(&x) - kron.solve(&x)).amax() < 1e-10);
    }
}
