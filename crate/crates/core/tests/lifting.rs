mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use tactile_mpc::lifting::{build_lifted, GripperState, Trajectories};
use tactile_mpc::mpc::MpcParams;

#[test]
fn condensed_matches_rollout() {
    let mut g = rng(21);
    for &n in &[1, 2, 5, 15] {
        for _ in 0..50 {
            let m = g.random_range(1..=20);
            let cfg = small_config(n, m);
            let params = random_params(m, &mut g);
            let input = random_input(&cfg, &mut g);
            let actions = random_actions(n, &mut g);
            assert!(rollout_gap(&params, &cfg, &input, &actions) <= 1e-9);
        }
    }
}

#[test]
fn zero_actions_coast() {
    let cfg = small_config(15, 3);
    let params = random_params(3, &mut rng(22));
    let input = random_input(&cfg, &mut rng(23));
    let t = lifted(&params, &cfg, &input).trajectories(&DVector::zeros(30)).unwrap();
    for i in 0..2 {
        let s = input.states[i];
        let other_v = input.states[1 - i].v;
        for k in 1..=15 {
            let expect = s.p + k as f64 * cfg.dt * s.v;
            assert!((t.positions[i * 15 + k - 1] - expect).abs() < 1e-12);
            let f = t.embeddings.rows(k * 6 + i * 3, 3);
            let expect = &input.embeddings[i] + (&params.a_f * s.v + &params.c_f * other_v) * k as f64;
            assert!((f - expect).amax() < 1e-12);
        }
    }
}

#[test]
fn single_step_blocks() {
    let cfg = small_config(1, 2);
    let params = random_params(2, &mut rng(24));
    let sys = lifted(&params, &cfg, &random_input(&cfg, &mut rng(25)));
    let h = 0.5 * cfg.dt * cfg.dt;
    assert_eq!(sys.sp, nalgebra::DMatrix::from_diagonal(&DVector::from_vec(vec![h, h])));
    assert_eq!(sys.sv, nalgebra::DMatrix::from_diagonal(&DVector::from_vec(vec![cfg.dt, cfg.dt])));
}

fn diff(a: &Trajectories, b: &Trajectories) -> [DVector<f64>; 3] {
    [
        &a.positions - &b.positions,
        &a.velocities - &b.velocities,
        &a.embeddings - &b.embeddings,
    ]
}

fn swap_blocks(t: &Trajectories, n: usize, m: usize) -> Trajectories {
    let swap = |v: &DVector<f64>, len: usize| {
        let mut out = v.clone();
        out.rows_mut(0, len).copy_from(&v.rows(len, len));
        out.rows_mut(len, len).copy_from(&v.rows(0, len));
        out
    };
    let mut emb = t.embeddings.clone();
    for k in 0..=n {
        let base = k * 2 * m;
        emb.rows_mut(base, m).copy_from(&t.embeddings.rows(base + m, m));
        emb.rows_mut(base + m, m).copy_from(&t.embeddings.rows(base, m));
    }
    Trajectories {
        positions: swap(&t.positions, n),
        velocities: swap(&t.velocities, n),
        embeddings: emb,
    }
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn trajectories_are_affine(seed in any::<u64>(), n in 1usize..16, m in 1usize..8) {
        let mut g = rng(seed);
        let cfg = small_config(n, m);
        let params = random_params(m, &mut g);
        let sys = lifted(&params, &cfg, &random_input(&cfg, &mut g));
        let x1 = stack(&random_actions(n, &mut g));
        let x2 = stack(&random_actions(n, &mut g));
        let t0 = sys.trajectories(&DVector::zeros(2 * n)).unwrap();
        let t1 = sys.trajectories(&x1).unwrap();
        let t2 = sys.trajectories(&x2).unwrap();
        let t12 = sys.trajectories(&(&x1 + &x2)).unwrap();
        let lhs = diff(&t12, &t0);
        let a = diff(&t1, &t0);
        let b = diff(&t2, &t0);
        for c in 0..3 {
            let scale = 1.0 + lhs[c].amax();
            prop_assert!((&lhs[c] - &a[c] - &b[c]).amax() <= 1e-10 * scale);
        }
    }

    #[test]
    fn swapping_agents_swaps_blocks(seed in any::<u64>(), n in 1usize..16, m in 1usize..8) {
        let mut g = rng(seed);
        let cfg = small_config(n, m);
        let params = random_params(m, &mut g);
        let input = random_input(&cfg, &mut g);
        let actions = random_actions(n, &mut g);
        let t = lifted(&params, &cfg, &input).trajectories(&stack(&actions)).unwrap();
        let swapped_actions = [actions[1].clone(), actions[0].clone()];
        let ts = lifted(&params, &cfg, &input.swapped()).trajectories(&stack(&swapped_actions)).unwrap();
        // Same terms, different summation order: equal up to rounding.
        let expect = swap_blocks(&t, n, m);
        prop_assert_eq!(&ts.positions, &expect.positions);
        prop_assert_eq!(&ts.velocities, &expect.velocities);
        prop_assert!((&ts.embeddings - &expect.embeddings).amax() <= 1e-12 * (1.0 + expect.embeddings.amax()));
    }

    #[test]
    fn without_coupling_own_embedding_ignores_other_actions(seed in any::<u64>(), n in 1usize..16, m in 1usize..8) {
        let mut g = rng(seed);
        let cfg = small_config(n, m);
        let mut params = random_params(m, &mut g);
        params.c_f.fill(0.0);
        let input = random_input(&cfg, &mut g);
        let sys = lifted(&params, &cfg, &input);
        let mut actions = random_actions(n, &mut g);
        let before = sys.trajectories(&stack(&actions)).unwrap();
        for a in actions[1].iter_mut() {
            *a += g.random_range(-100.0..100.0);
        }
        let after = sys.trajectories(&stack(&actions)).unwrap();
        for k in 0..=n {
            let base = k * 2 * m;
            prop_assert!((before.embeddings.rows(base, m) - after.embeddings.rows(base, m)).amax() <= 1e-12);
        }
    }
}

#[test]
fn rejects_mismatched_embeddings() {
    let params = MpcParams::zeros(3);
    let cfg = small_config(4, 3);
    let short = DVector::zeros(2);
    let ok = DVector::zeros(3);
    let s = GripperState::new(40.0, 0.0);
    assert!(build_lifted(&params, &cfg, [s, s], [&short, &ok]).is_err());
}
