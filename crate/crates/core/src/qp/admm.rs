use nalgebra::DVector;

use super::{
    kkt::EqualityKkt,
    operator::Operator,
    residuals_at,
    scaling::{equilibrate, Scaled},
    BoundState, QpProblem, QpSolution, QpStatus, SolverSettings,
};
use crate::error::{check_len, Error, Result};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_ADAPT_TOL: f64 = 5.0;
const DIV_TOL: f64 = 1e-30;

fn rho_vector(l: &DVector<f64>, u: &DVector<f64>, rho: f64) -> DVector<f64> {
    DVector::from_iterator(
        l.len(),
        (0..l.len()).map(|i| if l[i] == u[i] { rho * RHO_EQ_FACTOR } else { rho }),
    )
}

fn clip(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(v.len(), (0..v.len()).map(|i| v[i].max(l[i]).min(u[i])))
}

/// Solves `problem` with ADMM, polishing the result on the identified active
/// set. Infeasible problems are reported through the returned status.
pub fn solve(
    problem: &QpProblem,
    settings: &SolverSettings,
    warm: Option<&QpSolution>,
) -> Result<QpSolution> {
    settings.validate()?;
    let (n, m) = (problem.n(), problem.m());
    if let Some(w) = warm {
        check_len("warm x", n, w.x.len())?;
        check_len("warm y", m, w.y.len())?;
    }
    let Scaled {
        mut op,
        scaling,
        q,
        l,
        u,
    } = equilibrate(problem, settings.scaling_iters);
    let d_inv = scaling.d.map(|v| 1.0 / v);
    let e_inv = scaling.e.map(|v| 1.0 / v);
    let c = scaling.c;

    let mut rho = settings.rho;
    let mut rho_vec = rho_vector(&l, &u, rho);
    if !op.supports_rho(&rho_vec) {
        op = densify(&op, n);
    }
    if !op.factor(settings.sigma, &rho_vec) {
        return Err(Error::Singular("ADMM linear system"));
    }

    let (mut x, mut z, mut y) = match warm.filter(|_| settings.warm_start) {
        Some(w) => {
            let xs = w.x.component_mul(&d_inv);
            let ys = w.y.component_mul(&e_inv) * c;
            let zs = clip(&op.a_mul(&xs), &l, &u);
            (xs, zs, ys)
        }
        None => (DVector::zeros(n), DVector::zeros(m), DVector::zeros(m)),
    };

    let mut guess = ActiveGuess::default();
    let sigma = settings.sigma;
    let alpha = settings.alpha;

    for iter in 1..=settings.max_iter {
        let x_prev = x.clone();
        let y_prev = y.clone();

        let mut rhs = &x * sigma - &q;
        rhs += op.at_mul(&(rho_vec.component_mul(&z) - &y));
        let x_tilde = op.solve(&rhs);
        let z_tilde = op.a_mul(&x_tilde);
        x = &x_tilde * alpha + &x_prev * (1.0 - alpha);
        let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
        let z_new = clip(
            &(&z_relaxed + y.component_div(&rho_vec)),
            &l,
            &u,
        );
        y += rho_vec.component_mul(&(&z_relaxed - &z_new));
        z = z_new;

        let ax = op.a_mul(&x);
        let px = op.p_mul(&x);
        let aty = op.at_mul(&y);

        let prim_s = (&ax - &z).amax();
        let prim = (&ax - &z).component_mul(&e_inv).amax();
        let prim_scale = ax.component_mul(&e_inv).amax().max(z.component_mul(&e_inv).amax());
        let stat = &px + &q + &aty;
        let dual_s = stat.amax();
        let dual = stat.component_mul(&d_inv).amax() / c;
        let dual_scale = px
            .component_mul(&d_inv)
            .amax()
            .max(aty.component_mul(&d_inv).amax())
            .max(q.component_mul(&d_inv).amax())
            / c;

        let converged = prim <= settings.eps_abs + settings.eps_rel * prim_scale
            && dual <= settings.eps_abs + settings.eps_rel * dual_scale;

        let unscaled = |x: &DVector<f64>, y: &DVector<f64>| {
            (
                x.component_mul(&scaling.d),
                y.component_mul(&scaling.e) / c,
            )
        };

        if converged {
            let (xu, yu) = unscaled(&x, &y);
            let state = guess_active(&z, &y, &l, &u);
            return finish(problem, settings, xu, yu, QpStatus::Solved, iter, &state);
        }

        // infeasibility certificates, in unscaled terms
        let dy = (&y - &y_prev).component_mul(&scaling.e);
        let ndy = dy.amax();
        if ndy > DIV_TOL {
            let dy = dy / ndy;
            let lhs: f64 = (0..m)
                .map(|i| problem.u()[i] * dy[i].max(0.0) + problem.l()[i] * dy[i].min(0.0))
                .sum();
            if lhs < -settings.eps_prim_inf {
                let aty_d = op.at_mul(&(&y - &y_prev)).component_mul(&d_inv) / ndy;
                if aty_d.amax() < settings.eps_prim_inf {
                    let (xu, yu) = unscaled(&x, &y);
                    return finish(problem, settings, xu, yu, QpStatus::PrimalInfeasible, iter, &[]);
                }
            }
        }
        let dx_s = &x - &x_prev;
        let dx = dx_s.component_mul(&scaling.d);
        let ndx = dx.amax();
        if ndx > DIV_TOL {
            let qdx = q.dot(&dx_s) / c / ndx;
            if qdx < -settings.eps_dual_inf {
                let pdx = op.p_mul(&dx_s).component_mul(&d_inv).amax() / c / ndx;
                let adx = op.a_mul(&dx_s).component_mul(&e_inv).amax() / ndx;
                if pdx < settings.eps_dual_inf && adx < settings.eps_dual_inf {
                    let (xu, yu) = unscaled(&x, &y);
                    return finish(problem, settings, xu, yu, QpStatus::DualInfeasible, iter, &[]);
                }
            }
        }

        if settings.polish && guess.update(guess_active(&z, &y, &l, &u), settings.polish_stable) {
            if let Some((xp, yp)) = polish(problem, settings, &guess.current) {
                return Ok(make_solution(problem, xp, yp, QpStatus::Solved, iter, true));
            }
        }

        if settings.adaptive_rho
            && settings.adaptive_rho_interval > 0
            && iter % settings.adaptive_rho_interval == 0
        {
            let prim_norm = prim_s / ax.amax().max(z.amax()).max(DIV_TOL);
            let dual_norm = dual_s / px.amax().max(aty.amax()).max(q.amax()).max(DIV_TOL);
            let new_rho = (rho * (prim_norm / dual_norm.max(DIV_TOL)).sqrt()).clamp(RHO_MIN, RHO_MAX);
            if new_rho > rho * RHO_ADAPT_TOL || new_rho < rho / RHO_ADAPT_TOL {
                rho = new_rho;
                rho_vec = rho_vector(&l, &u, rho);
                if !op.factor(sigma, &rho_vec) {
                    return Err(Error::Singular("ADMM linear system"));
                }
            }
        }
    }

    let xu = x.component_mul(&scaling.d);
    let yu = y.component_mul(&scaling.e) / c;
    let state = guess_active(&z, &y, &l, &u);
    finish(problem, settings, xu, yu, QpStatus::MaxIter, settings.max_iter, &state)
}

fn densify(op: &Operator, n: usize) -> Operator {
    let mut p = nalgebra::DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        p.set_column(j, &op.p_mul(&e));
    }
    let m = op.a_mul(&DVector::zeros(n)).len();
    let mut a = nalgebra::DMatrix::zeros(m, n);
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        a.set_column(j, &op.a_mul(&e));
    }
    Operator::dense(p, a)
}

#[derive(Default)]
struct ActiveGuess {
    current: Vec<BoundState>,
    stable: usize,
    attempted: Option<Vec<BoundState>>,
}

impl ActiveGuess {
    /// Records the latest guess; returns true when it has been stable long
    /// enough and has not been tried yet.
    fn update(&mut self, next: Vec<BoundState>, needed: usize) -> bool {
        if next == self.current {
            self.stable += 1;
        } else {
            self.current = next;
            self.stable = 1;
        }
        if self.stable >= needed.max(1) && self.attempted.as_ref() != Some(&self.current) {
            self.attempted = Some(self.current.clone());
            return true;
        }
        false
    }
}

fn guess_active(
    z: &DVector<f64>,
    y: &DVector<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
) -> Vec<BoundState> {
    (0..z.len())
        .map(|i| {
            if l[i] == u[i] {
                BoundState::Equality
            } else if z[i] - l[i] < -y[i] {
                BoundState::Lower
            } else if u[i] - z[i] < y[i] {
                BoundState::Upper
            } else {
                BoundState::Inactive
            }
        })
        .collect()
}

fn polish(
    problem: &QpProblem,
    settings: &SolverSettings,
    state: &[BoundState],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let rows: Vec<usize> = (0..state.len())
        .filter(|&i| state[i] != BoundState::Inactive)
        .collect();
    let b = DVector::from_iterator(
        rows.len(),
        rows.iter().map(|&i| match state[i] {
            BoundState::Lower => problem.l()[i],
            _ => problem.u()[i],
        }),
    );
    let kkt = EqualityKkt::new(problem, &rows).ok()?;
    let (x, ys) = kkt.solve(&-problem.q(), &b);
    let mut y = DVector::zeros(problem.m());
    for (k, &i) in rows.iter().enumerate() {
        y[i] = ys[k];
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return None;
    }
    let r = residuals_at(problem, &x, &y).ok()?;
    let ax = problem.a() * &x;
    let tol_p = settings.eps_abs + settings.eps_rel * ax.amax();
    let scale_d = (problem.p() * &x)
        .amax()
        .max(problem.a().tr_mul(&y).amax())
        .max(problem.q().amax());
    let tol_d = settings.eps_abs + settings.eps_rel * scale_d;
    (r.primal <= tol_p && r.dual <= tol_d && r.comp <= tol_d).then_some((x, y))
}

fn finish(
    problem: &QpProblem,
    settings: &SolverSettings,
    x: DVector<f64>,
    y: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    state: &[BoundState],
) -> Result<QpSolution> {
    let polishable = matches!(status, QpStatus::Solved | QpStatus::MaxIter);
    if settings.polish && polishable {
        if let Some((xp, yp)) = polish(problem, settings, state) {
            return Ok(make_solution(problem, xp, yp, QpStatus::Solved, iterations, true));
        }
    }
    Ok(make_solution(problem, x, y, status, iterations, false))
}

fn make_solution(
    problem: &QpProblem,
    x: DVector<f64>,
    y: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    polished: bool,
) -> QpSolution {
    let r = residuals_at(problem, &x, &y).unwrap_or(super::KktResiduals {
        primal: f64::INFINITY,
        dual: f64::INFINITY,
        comp: f64::INFINITY,
    });
    QpSolution {
        x,
        y,
        status,
        primal_residual: r.primal,
        dual_residual: r.dual,
        iterations,
        polished,
    }
}
