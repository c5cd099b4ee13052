mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use tactile_mpc::lifting::GripperState;
use tactile_mpc::mpc::{
    assemble_qf, min_eigenvalue, MpcConfig, MpcInput, MpcParams, OutputGradient, PreparedLayer,
    TiePolicy,
};
use tactile_mpc::qp::QpStatus;
use tactile_mpc::Error;

fn at_rest(m: usize, p: f64) -> MpcInput {
    MpcInput {
        states: [GripperState::new(p, 0.0), GripperState::new(p + 3.0, 0.0)],
        embeddings: [DVector::zeros(m), DVector::zeros(m)],
    }
}

#[test]
fn rest_is_a_fixed_point() {
    let cfg = small_config(15, 20);
    let params = random_params(20, &mut rng(1));
    let layer = PreparedLayer::new(&params, &cfg).unwrap();
    let asm = layer.build_qp(&at_rest(20, 40.0)).unwrap();
    assert_eq!(asm.problem.q().amax(), 0.0);
    let out = layer.forward(&at_rest(20, 40.0), None).unwrap();
    assert!(out.qp.x.amax() < 1e-9);
    assert!((out.predicted_openings[0].add_scalar(-40.0)).amax() < 1e-9);
}

#[test]
fn one_step_problem_by_hand() {
    // With one step the actions cannot reach the embeddings yet:
    // cost = Σ_i Q_a a_i² + P_q·Q_v (v_i + dt a_i)² + const.
    let cfg = small_config(1, 1);
    let mut params = MpcParams::zeros(1);
    params.a_f[0] = 0.8;
    params.q1[(0, 0)] = 1.0;
    params.q2[(0, 0)] = 1.0;
    let input = MpcInput {
        states: [GripperState::new(30.0, 4.0), GripperState::new(31.0, -2.0)],
        embeddings: [DVector::from_element(1, 0.5), DVector::from_element(1, -0.25)],
    };
    let asm = PreparedLayer::new(&params, &cfg).unwrap().build_qp(&input).unwrap();
    let (dt, qa, qv, pq) = (cfg.dt, cfg.q_a, cfg.q_v, cfg.p_q);
    let diag = 2.0 * (qa + pq * qv * dt * dt);
    assert!((asm.problem.p() - DMatrix::from_diagonal_element(2, 2, diag)).amax() < 1e-12);
    let q_expected = [2.0 * pq * qv * dt * 4.0, 2.0 * pq * qv * dt * -2.0];
    for i in 0..2 {
        assert!((asm.problem.q()[i] - q_expected[i]).abs() < 1e-12);
    }
}

#[test]
fn two_step_problem_by_hand() {
    // M = 1, N = 2: F_2 = f0 + A_f(2v0 + dt·a_0), others independent of x.
    let cfg = small_config(2, 1);
    let mut params = MpcParams::zeros(1);
    params.a_f[0] = 0.5;
    params.q1[(0, 0)] = 2.0_f64.sqrt();
    params.q2[(0, 0)] = 1.0;
    let input = MpcInput {
        states: [GripperState::new(30.0, 1.0), GripperState::new(31.0, 0.0)],
        embeddings: [DVector::from_element(1, 0.3), DVector::from_element(1, 0.0)],
    };
    let asm = PreparedLayer::new(&params, &cfg).unwrap().build_qp(&input).unwrap();
    let (dt, qa, qv, pq) = (cfg.dt, cfg.q_a, cfg.q_v, cfg.p_q);
    let af = 0.5;
    let q11 = 2.0;
    // agent-1 block, variables (a_0, a_1)
    // v_1 = v0 + dt a_0 (w=1), v_2 = v0 + dt(a_0 + a_1) (w=P_q)
    // tactile: P_q·q11·(f0 + A_f(2v0 + dt a_0))²
    let p00 = 2.0 * (qa + qv * dt * dt + pq * qv * dt * dt + pq * q11 * af * af * dt * dt);
    let p01 = 2.0 * pq * qv * dt * dt;
    let p11 = 2.0 * (qa + pq * qv * dt * dt);
    let q0 = 2.0 * (qv * dt * 1.0 + pq * qv * dt * 1.0 + pq * q11 * af * dt * (0.3 + af * 2.0));
    let q1 = 2.0 * pq * qv * dt * 1.0;
    let p = asm.problem.p();
    assert!((p[(0, 0)] - p00).abs() < 1e-10, "{} vs {p00}", p[(0, 0)]);
    assert!((p[(0, 1)] - p01).abs() < 1e-12);
    assert!((p[(1, 1)] - p11).abs() < 1e-12);
    assert!((asm.problem.q()[0] - q0).abs() < 1e-10);
    assert!((asm.problem.q()[1] - q1).abs() < 1e-12);
    // no coupling: agent-2 block is independent of agent 1
    assert_eq!(p[(0, 2)], 0.0);
}

#[test]
fn assembled_cost_matches_literal_sum() {
    let mut r = rng(11);
    for &n in &[1usize, 3, 15] {
        let cfg = small_config(n, 6);
        for _ in 0..10 {
            let params = random_params(6, &mut r);
            let input = random_input(&cfg, &mut r);
            let asm = PreparedLayer::new(&params, &cfg).unwrap().build_qp(&input).unwrap();
            for _ in 0..5 {
                let x = DVector::from_fn(2 * n, |_, _| r.random_range(-300.0..300.0));
                let lit = literal_cost(&params, &cfg, &input, &split(&x));
                let ours = asm.cost(&x);
                assert!((lit - ours).abs() <= 1e-8 * lit.abs().max(1.0), "{lit} vs {ours}");
            }
        }
    }
}

#[test]
fn heavy_velocity_penalty_freezes_motion() {
    let mut cfg = small_config(10, 4);
    cfg.q_v = 1e9;
    let params = MpcParams::random(4, &mut rng(2));
    let out = tactile_mpc::mpc::forward(&params, &cfg, &at_rest(4, 50.0), None).unwrap();
    assert!(out.a_star[0].abs() < 1e-6 && out.a_star[1].abs() < 1e-6);
    assert!((out.predicted_openings[1].add_scalar(-53.0)).amax() < 1e-8);
}

#[test]
fn swapping_agents_swaps_outputs() {
    let mut r = rng(5);
    let cfg = small_config(15, 20);
    for _ in 0..10 {
        let params = random_params(20, &mut r);
        let input = random_input(&cfg, &mut r);
        let a = tactile_mpc::mpc::forward(&params, &cfg, &input, None).unwrap();
        let b = tactile_mpc::mpc::forward(&params.swapped(), &cfg, &input.swapped(), None).unwrap();
        assert!((a.a_star[0] - b.a_star[1]).abs() < 1e-9);
        assert!((a.a_star[1] - b.a_star[0]).abs() < 1e-9);
        assert!((&a.predicted_openings[0] - &b.predicted_openings[1]).amax() < 1e-9);
    }
}

#[test]
fn solution_beats_random_feasible_points() {
    let mut r = rng(8);
    let cfg = small_config(15, 20);
    let params = random_params(20, &mut r);
    let input = random_input(&cfg, &mut r);
    let layer = PreparedLayer::new(&params, &cfg).unwrap();
    let asm = layer.build_qp(&input).unwrap();
    let out = layer.forward(&input, None).unwrap();
    let best = asm.problem.objective(&out.qp.x);
    let mut tried = 0;
    while tried < 1000 {
        let x = DVector::from_fn(30, |_, _| r.random_range(-200.0..200.0));
        let ax = asm.problem.a() * &x;
        if (0..ax.len()).any(|i| ax[i] < asm.problem.l()[i] || ax[i] > asm.problem.u()[i]) {
            continue;
        }
        tried += 1;
        assert!(best <= asm.problem.objective(&x) + 1e-9 * best.abs().max(1.0));
    }
}

#[test]
fn feasible_inputs_always_solve() {
    let mut r = rng(21);
    let cfg = small_config(15, 20);
    for _ in 0..200 {
        let params = random_params(20, &mut r);
        let input = random_input(&cfg, &mut r);
        let out = tactile_mpc::mpc::forward(&params, &cfg, &input, None).unwrap();
        assert_eq!(out.qp.status, QpStatus::Solved);
        let b = cfg.bounds;
        for o in &out.predicted_openings {
            assert!(o.iter().all(|&p| p >= b.p_min - 1e-6 && p <= b.p_max + 1e-6));
        }
    }
}

#[test]
fn zero_upstream_gradient_gives_zero() {
    let mut r = rng(3);
    let cfg = small_config(5, 4);
    let params = random_params(4, &mut r);
    let input = random_input(&cfg, &mut r);
    let layer = PreparedLayer::new(&params, &cfg).unwrap();
    let out = layer.forward(&input, None).unwrap();
    let g = layer
        .backward(&input, &out, &OutputGradient::zeros(5), TiePolicy::Reject)
        .unwrap();
    assert!(g.params.to_flat().iter().all(|v| *v == 0.0));
    assert!(g.embeddings.iter().all(|e| e.amax() == 0.0));
}

fn weighted_output(
    params: &MpcParams,
    cfg: &MpcConfig,
    input: &MpcInput,
    w: &OutputGradient,
) -> f64 {
    let out = tactile_mpc::mpc::forward(params, cfg, input, None).unwrap();
    (0..2)
        .map(|i| out.predicted_openings[i].dot(&w.openings[i]) + out.a_star[i] * w.a_star[i])
        .sum()
}

#[test]
fn gradients_match_central_differences() {
    let mut r = rng(13);
    let cfg = small_config(5, 4);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 10 {
        let params = random_params(4, &mut r);
        let input = random_input(&cfg, &mut r);
        let w = OutputGradient {
            openings: [
                DVector::from_fn(5, |_, _| r.random_range(-1.0..1.0)),
                DVector::from_fn(5, |_, _| r.random_range(-1.0..1.0)),
            ],
            a_star: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
        };
        let layer = PreparedLayer::new(&params, &cfg).unwrap();
        let out = layer.forward(&input, None).unwrap();
        let g = match layer.backward(&input, &out, &w, TiePolicy::Reject) {
            Ok(g) => g,
            Err(Error::DegenerateActiveSet { .. }) => continue,
            Err(e) => panic!("{e}"),
        };
        let flat = params.to_flat();
        let analytic = g.params.to_flat();
        let numeric: Vec<f64> = (0..flat.len())
            .map(|j| {
                let mut plus = flat.clone();
                plus[j] += h;
                let mut minus = flat.clone();
                minus[j] -= h;
                let fp = weighted_output(&MpcParams::from_flat(4, &plus).unwrap(), &cfg, &input, &w);
                let fm = weighted_output(&MpcParams::from_flat(4, &minus).unwrap(), &cfg, &input, &w);
                (fp - fm) / (2.0 * h)
            })
            .collect();
        let err = block_rel_error(&analytic, &numeric);
        assert!(err <= 1e-4, "param gradient error {err}: {analytic:?} vs {numeric:?}");
        for i in 0..2 {
            let numeric: Vec<f64> = (0..4)
                .map(|e| {
                    let mut plus = input.clone();
                    plus.embeddings[i][e] += h;
                    let mut minus = input.clone();
                    minus.embeddings[i][e] -= h;
                    (weighted_output(&params, &cfg, &plus, &w)
                        - weighted_output(&params, &cfg, &minus, &w))
                        / (2.0 * h)
                })
                .collect();
            let err = block_rel_error(g.embeddings[i].as_slice(), &numeric);
            assert!(err <= 1e-4, "embedding gradient error {err}");
        }
        checked += 1;
    }
}

#[test]
fn decoupled_agent_ignores_the_other() {
    let mut r = rng(17);
    let cfg = small_config(15, 20);
    for _ in 0..10 {
        let params = random_params(20, &mut r).decoupled();
        let input = random_input(&cfg, &mut r);
        let mut other = input.clone();
        other.embeddings[1] = DVector::from_fn(20, |_, _| r.random_range(-1.0..1.0));
        other.states[1].v += 3.0;
        let a = tactile_mpc::mpc::forward(&params, &cfg, &input, None).unwrap();
        let b = tactile_mpc::mpc::forward(&params, &cfg, &other, None).unwrap();
        assert!((a.a_star[0] - b.a_star[0]).abs() <= 1e-9);
        assert!((&a.predicted_openings[0] - &b.predicted_openings[0]).amax() <= 1e-9);
    }
}

#[test]
fn penalty_floor_holds_for_random_draws() {
    let mut r = rng(23);
    let cfg = small_config(15, 20);
    for _ in 0..100 {
        let mut params = random_params(20, &mut r);
        params.alpha = r.random_range(0.0..3.0);
        let qf = assemble_qf(&params, &cfg).unwrap();
        assert!(min_eigenvalue(&qf) >= cfg.eps - 1e-10);
    }
}
