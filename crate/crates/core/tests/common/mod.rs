//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tactile_mpc::lifting::{build_lifted, make_double_integrator, step_embedding, GripperState, LiftedSystem};
use tactile_mpc::mpc::{assemble_qf, MpcConfig, MpcInput, MpcParams};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Step-by-step rollout of both agents.
pub struct Rollout {
    /// Steps 1..=N.
    pub positions: [Vec<f64>; 2],
    /// Steps 0..=N.
    pub velocities: [Vec<f64>; 2],
    /// Steps 0..=N.
    pub embeddings: [Vec<DVector<f64>>; 2],
}

pub fn rollout(
    params: &MpcParams,
    cfg: &MpcConfig,
    input: &MpcInput,
    actions: &[Vec<f64>; 2],
) -> Rollout {
    let dynamics = make_double_integrator(cfg.dt).unwrap();
    let mut s = input.states;
    let mut f = input.embeddings.clone();
    let mut out = Rollout {
        positions: [vec![], vec![]],
        velocities: [vec![s[0].v], vec![s[1].v]],
        embeddings: [vec![f[0].clone()], vec![f[1].clone()]],
    };
    for k in 0..cfg.horizon {
        let next_f = [
            step_embedding(params, &f[0], s[0].v, s[1].v).unwrap(),
            step_embedding(params, &f[1], s[1].v, s[0].v).unwrap(),
        ];
        for i in 0..2 {
            s[i] = dynamics.step(s[i], actions[i][k]);
            out.positions[i].push(s[i].p);
            out.velocities[i].push(s[i].v);
            out.embeddings[i].push(next_f[i].clone());
        }
        f = next_f;
    }
    out
}

/// The horizon objective summed term by term from a rollout, including
/// the stage at the current step.
pub fn literal_cost(
    params: &MpcParams,
    cfg: &MpcConfig,
    input: &MpcInput,
    actions: &[Vec<f64>; 2],
) -> f64 {
    let qf = assemble_qf(params, cfg).unwrap();
    let r = rollout(params, cfg, input, actions);
    let m = cfg.embed_dim;
    let mut total = 0.0;
    for k in 0..=cfg.horizon {
        let weight = if k == cfg.horizon { cfg.p_q } else { 1.0 };
        let mut fk = DVector::zeros(2 * m);
        for i in 0..2 {
            fk.rows_mut(i * m, m).copy_from(&r.embeddings[i][k]);
        }
        let mut stage = fk.dot(&(&qf * &fk));
        for i in 0..2 {
            stage += cfg.q_v * r.velocities[i][k].powi(2);
            if k < cfg.horizon {
                stage += cfg.q_a * actions[i][k].powi(2);
            }
        }
        total += weight * stage;
    }
    total
}

pub fn split(x: &DVector<f64>) -> [Vec<f64>; 2] {
    let n = x.len() / 2;
    [
        x.rows(0, n).iter().copied().collect(),
        x.rows(n, n).iter().copied().collect(),
    ]
}

pub fn small_config(horizon: usize, embed_dim: usize) -> MpcConfig {
    MpcConfig {
        horizon,
        embed_dim,
        ..MpcConfig::default()
    }
}

/// Random parameters with a tactile signal strong enough to matter at the
/// default weights.
pub fn random_params<R: Rng>(m: usize, rng: &mut R) -> MpcParams {
    let mut p = MpcParams::random(m, rng);
    for i in 0..m {
        p.a_f[i] = rng.random_range(-1.0..1.0);
        p.c_f[i] = rng.random_range(-0.5..0.5);
    }
    for q in [&mut p.q1, &mut p.q2] {
        *q *= 3.0;
    }
    p.alpha = rng.random_range(0.0..0.5);
    p
}

/// Gripper states whose zero-action rollout stays inside the position and
/// velocity limits over the horizon.
pub fn random_input<R: Rng>(cfg: &MpcConfig, rng: &mut R) -> MpcInput {
    let m = cfg.embed_dim;
    let span = cfg.horizon as f64 * cfg.dt;
    let mut state = || {
        let p = rng.random_range(20.0..60.0);
        let v = rng.random_range(-10.0..10.0);
        assert!(p + span * v > cfg.bounds.p_min && p + span * v < cfg.bounds.p_max);
        GripperState { p, v }
    };
    let states = [state(), state()];
    let embeddings = [
        DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
        DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0)),
    ];
    MpcInput { states, embeddings }
}

/// Primal active-set method for a strictly convex QP
/// `min ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`, started from a feasible point.
/// Returns `(x, y)` with `y > 0` on active upper rows, `y < 0` on lower.
pub fn active_set_oracle(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    start: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let (n, m) = (q.len(), l.len());
    let mut x = start.clone();
    // +1 upper, -1 lower, 0 free
    let mut side = vec![0i8; m];
    for i in 0..m {
        if l[i] == u[i] {
            side[i] = 1;
        }
    }
    for _ in 0..2000 {
        let work: Vec<usize> = (0..m).filter(|&i| side[i] != 0).collect();
        let k = work.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        for (j, &i) in work.iter().enumerate() {
            for c in 0..n {
                kkt[(n + j, c)] = a[(i, c)];
                kkt[(c, n + j)] = a[(i, c)];
            }
        }
        let g = p * &x + q;
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&-&g);
        let sol = kkt.full_piv_lu().solve(&rhs).expect("oracle KKT singular");
        let step = sol.rows(0, n).into_owned();
        let mult = sol.rows(n, k).into_owned();

        if step.amax() <= 1e-13 * (1.0 + x.amax()) {
            // check multiplier signs
            let mut worst = None;
            let mut worst_val = -1e-12;
            for (j, &i) in work.iter().enumerate() {
                if l[i] == u[i] {
                    continue;
                }
                let signed = mult[j] * side[i] as f64;
                if signed < worst_val {
                    worst_val = signed;
                    worst = Some(i);
                }
            }
            match worst {
                Some(i) => side[i] = 0,
                None => {
                    let mut y = DVector::zeros(m);
                    for (j, &i) in work.iter().enumerate() {
                        y[i] = mult[j];
                    }
                    return (x, y);
                }
            }
            continue;
        }
        let ad = a * &step;
        let ax = a * &x;
        let mut alpha = 1.0;
        let mut block = None;
        for i in 0..m {
            if side[i] != 0 {
                continue;
            }
            if ad[i] > 1e-14 {
                let t = (u[i] - ax[i]) / ad[i];
                if t < alpha {
                    alpha = t.max(0.0);
                    block = Some((i, 1));
                }
            } else if ad[i] < -1e-14 {
                let t = (l[i] - ax[i]) / ad[i];
                if t < alpha {
                    alpha = t.max(0.0);
                    block = Some((i, -1));
                }
            }
        }
        x += step * alpha;
        if let Some((i, s)) = block {
            side[i] = s;
        }
    }
    panic!("active-set oracle did not converge");
}

/// Brute-force minimizer over every active-set pattern; only for tiny `m`.
pub fn enumerate_oracle(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (n, m) = (q.len(), l.len());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(m as u32) {
        let mut c = code;
        let mut rows = vec![];
        let mut rhs = vec![];
        for i in 0..m {
            match c % 3 {
                1 => {
                    rows.push(i);
                    rhs.push(l[i]);
                }
                2 => {
                    rows.push(i);
                    rhs.push(u[i]);
                }
                _ => {}
            }
            c /= 3;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p);
        let mut b = DVector::zeros(n + k);
        b.rows_mut(0, n).copy_from(&-q);
        for (j, &i) in rows.iter().enumerate() {
            for cc in 0..n {
                kkt[(n + j, cc)] = a[(i, cc)];
                kkt[(cc, n + j)] = a[(i, cc)];
            }
            b[n + j] = rhs[j];
        }
        let Some(sol) = kkt.full_piv_lu().solve(&b) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        let ax = a * &x;
        if (0..m).any(|i| ax[i] < l[i] - 1e-9 || ax[i] > u[i] + 1e-9) {
            continue;
        }
        let obj = 0.5 * x.dot(&(p * &x)) + q.dot(&x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b - 1e-12) {
            best = Some((obj, x));
        }
    }
    best.map(|(_, x)| x)
}

/// Largest absolute difference over a block, relative to the block's
/// ∞-norm, so near-zero entries do not dominate.
pub fn block_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric
        .iter()
        .chain(analytic.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Strictly convex random QP with a known feasible point. Some rows are
/// equalities, some one-sided (huge bound), the rest tight boxes.
pub struct RandomQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
    pub feasible: DVector<f64>,
}

pub fn random_qp<R: Rng>(rng: &mut R, max_n: usize, max_m: usize) -> RandomQp {
    let n = rng.random_range(2..=max_n);
    let m = rng.random_range(1..=max_m);
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p = &g * g.transpose() + DMatrix::identity(n, n) * 0.1;
    let q = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let feasible = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ax = &a * &feasible;
    let eq_rows = m.min(n) / 3;
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for i in 0..m {
        if i < eq_rows {
            l[i] = ax[i];
            u[i] = ax[i];
        } else {
            l[i] = ax[i] - rng.random_range(0.0..0.5);
            u[i] = ax[i] + rng.random_range(0.0..0.5);
            match rng.random_range(0..4) {
                0 => l[i] = -1e20,
                1 => u[i] = 1e20,
                _ => {}
            }
        }
    }
    RandomQp { p, q, a, l, u, feasible }
}

/// Hand-built parameters that steer each opening toward its slip onset:
/// the penalty acts on the encoder's shear direction and the embedding
/// model follows the contact geometry (shear falls as the opening grows).
pub fn shear_tracking_params(cfg: &MpcConfig, coupling: f64) -> MpcParams {
    use tactile_mpc::tactile::{SyntheticEncoder, DEFAULT_ENCODER_SEED, DEFAULT_SHEAR_GAIN};
    let m = cfg.embed_dim;
    let enc = SyntheticEncoder::new(m, 0.0, DEFAULT_ENCODER_SEED).with_shear_gain(DEFAULT_SHEAR_GAIN);
    let w = enc.shear_direction().clone();
    let unit = &w / w.norm();
    let block = &unit * unit.transpose() * 1e3 + DMatrix::identity(m, m) * 1e-2;
    let factor = block.cholesky().unwrap().l();
    let mut p = MpcParams::zeros(m);
    p.a_f = &w * -cfg.dt;
    p.c_f = &w * (-cfg.dt * coupling);
    p.q1 = factor.clone();
    p.q2 = factor;
    p
}

pub fn lifted(params: &MpcParams, cfg: &MpcConfig, input: &MpcInput) -> LiftedSystem {
    build_lifted(params, cfg, input.states, [&input.embeddings[0], &input.embeddings[1]]).unwrap()
}

pub fn stack(actions: &[Vec<f64>; 2]) -> DVector<f64> {
    DVector::from_iterator(actions[0].len() * 2, actions[0].iter().chain(&actions[1]).copied())
}

pub fn random_actions<R: Rng>(n: usize, rng: &mut R) -> [Vec<f64>; 2] {
    std::array::from_fn(|_| (0..n).map(|_| rng.random_range(-500.0..500.0)).collect())
}

/// Largest gap between the condensed trajectories and a step-by-step rollout.
pub fn rollout_gap(params: &MpcParams, cfg: &MpcConfig, input: &MpcInput, actions: &[Vec<f64>; 2]) -> f64 {
    let n = cfg.horizon;
    let m = cfg.embed_dim;
    let t = lifted(params, cfg, input).trajectories(&stack(actions)).unwrap();
    let r = rollout(params, cfg, input, actions);
    let mut gap = 0.0_f64;
    for i in 0..2 {
        for k in 0..n {
            gap = gap.max((t.positions[i * n + k] - r.positions[i][k]).abs());
            gap = gap.max((t.velocities[i * n + k] - r.velocities[i][k + 1]).abs());
        }
        for k in 0..=n {
            let block = t.embeddings.rows(k * 2 * m + i * m, m);
            gap = gap.max((block - &r.embeddings[i][k]).amax());
        }
    }
    gap
}

