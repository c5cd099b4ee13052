mod common;

use std::sync::{Arc, Mutex};

use common::*;
use tactile_mpc::lifting::GripperState;
use tactile_mpc::mpc::{MpcConfig, MpcParams, PreparedLayer};
use tactile_mpc::sim::{
    make_controller, object_by_name, object_menu, run_episode, stability_metrics, write_trace_csv, world_step,
    ControllerKind, DisturbanceConfig, GraspController, GraspStatus, GraspWorld, Observation, PdController,
    PdGains, StartMode, WorldConfig, SUCCESS_HOLD,
};
use tactile_mpc::Error;

fn world(object: &str, kicks: usize) -> WorldConfig {
    WorldConfig {
        object: object_by_name(object).unwrap(),
        disturbances: DisturbanceConfig {
            count: kicks,
            ..DisturbanceConfig::default()
        },
        ..WorldConfig::default()
    }
}

#[test]
fn episodes_are_deterministic() {
    let cfg = MpcConfig::default();
    let params = shear_tracking_params(&cfg, 0.1);
    for kind in ControllerKind::ALL {
        let run = || {
            let mut c = make_controller(kind, &params, &cfg, PdGains::default()).unwrap();
            run_episode(c.as_mut(), &world("compliant_cylinder", 2), 6.0, 42).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.iter().zip(&b.trace) {
            assert_eq!(format!("{x:?}"), format!("{y:?}"));
        }
    }
}

#[test]
fn pd_kick_trace_is_reproducible() {
    let mut cfg = world("rigid_tube", 1);
    cfg.disturbances.earliest = 5.0;
    cfg.disturbances.latest = 5.0;
    cfg.disturbances.magnitude = 20.0;
    let csv = || {
        let mut pd = PdController::new(PdGains::default());
        let r = run_episode(&mut pd, &cfg, 8.0, 3).unwrap();
        let mut out = Vec::new();
        write_trace_csv(&mut out, &r.trace).unwrap();
        out
    };
    let first = csv();
    assert_eq!(first, csv());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("t,p1,v1,a1,p2,v2,a2,status"));
}

#[test]
fn idle_world_is_still() {
    for object in object_menu() {
        if object.drift_amplitude != 0.0 {
            continue;
        }
        let cfg = WorldConfig {
            object: object.clone(),
            disturbances: DisturbanceConfig {
                count: 0,
                ..DisturbanceConfig::default()
            },
            ..WorldConfig::default()
        };
        let mut w = GraspWorld::new(&cfg, 9).unwrap();
        let start = w.openings();
        for _ in 0..500 {
            w = world_step(&w, [0.0, 0.0]).unwrap();
        }
        assert_eq!(w.openings(), start);
        assert_eq!(w.status, GraspStatus::Holding);
    }
}

#[test]
fn status_is_absorbing() {
    let mut w = GraspWorld::new(&world("stiff_pipe", 0), 1).unwrap();
    w.grippers[1].v = 500.0;
    while w.status == GraspStatus::Holding {
        w.step([0.0, 0.0]).unwrap();
    }
    assert_eq!(w.status, GraspStatus::Slipped);
    assert!(matches!(w.step([-5000.0, -5000.0]), Err(Error::EpisodeOver)));
    assert_eq!(w.status, GraspStatus::Slipped);
}

#[test]
fn unactuated_open_grippers_fail() {
    let mut cfg = world("rigid_tube", 0);
    cfg.start = StartMode::Open { clearance: 5.0 };
    let mut pd = PdController::new(PdGains {
        kp: 0.0,
        kd: 0.0,
        ..PdGains::default()
    });
    let r = run_episode(&mut pd, &cfg, 20.0, 0).unwrap();
    assert!(!r.success);
    assert_ne!(r.final_status, GraspStatus::Holding);
}

#[test]
fn easy_rigid_grasp_succeeds_for_every_controller() {
    let cfg = MpcConfig::default();
    let params = shear_tracking_params(&cfg, 0.1);
    let mut wc = world("rigid_tube", 0);
    // generous band: slip only once contact is lost entirely
    wc.object.slip_margin = wc.object.width;
    for kind in ControllerKind::ALL {
        let mut c = make_controller(kind, &params, &cfg, PdGains::default()).unwrap();
        let r = run_episode(c.as_mut(), &wc, 16.0, 5).unwrap();
        assert!(r.success, "{kind}: {:?} after {}", r.final_status, r.hold_duration);
        assert!(r.hold_duration >= SUCCESS_HOLD);
        assert_eq!(r.controller_failures, 0);
    }
}

/// Records what it is shown and does nothing.
struct Probe(Arc<Mutex<Vec<Observation>>>);

impl GraspController for Probe {
    fn name(&self) -> &str {
        "probe"
    }

    fn act(&mut self, obs: &Observation) -> tactile_mpc::Result<[f64; 2]> {
        self.0.lock().unwrap().push(obs.clone());
        Ok([0.0, 0.0])
    }
}

#[test]
fn controllers_see_only_embeddings_and_states() {
    let seen = Arc::new(Mutex::new(Vec::new()));
    let mut probe = Probe(seen.clone());
    let cfg = world("granular_bag", 0);
    run_episode(&mut probe, &cfg, 1.0, 2).unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 100);
    // The observation type is exactly (embeddings, states); destructuring
    // without `..` fails to compile if anything else is added.
    let Observation { embeddings, states } = &seen[0];
    assert_eq!(embeddings[0].len(), cfg.embed_dim);
    let w = GraspWorld::new(&cfg, 2).unwrap();
    assert_eq!(*states, w.grippers);
}

#[test]
fn decoupled_agent_ignores_its_partner() {
    let cfg = MpcConfig::default();
    let params = shear_tracking_params(&cfg, 0.2).decoupled();
    let layer = PreparedLayer::new(&params, &cfg).unwrap();
    let w = GraspWorld::new(&world("compliant_cylinder", 0), 4).unwrap();
    let obs = w.observe();
    let alone = layer.forward_single(0, obs.states[0], &obs.embeddings[0], None).unwrap();
    let mut c = make_controller(ControllerKind::SingleMpc, &params, &cfg, PdGains::default()).unwrap();
    let with_partner = c.act(&obs).unwrap();
    let mut moved = obs.clone();
    moved.states[1] = GripperState::new(obs.states[1].p - 2.0, 7.0);
    moved.embeddings[1] *= -3.0;
    c.reset();
    let with_other_partner = c.act(&moved).unwrap();
    assert!((alone.a_star - with_partner[0]).abs() <= 1e-9);
    assert!((with_partner[0] - with_other_partner[0]).abs() <= 1e-9);
}

#[test]
fn settling_metrics_on_episodes() {
    let cfg = MpcConfig::default();
    let params = shear_tracking_params(&cfg, 0.1);
    let mut c = make_controller(ControllerKind::MultiMpc, &params, &cfg, PdGains::default()).unwrap();
    let r = run_episode(c.as_mut(), &world("rigid_tube", 0), 16.0, 8).unwrap();
    let m = stability_metrics(&r).unwrap();
    assert!(m.settle_time < 15.0);
    assert!(m.post_settle_variance >= 0.0);
    let stats = r.runtime_stats();
    assert_eq!(stats.ticks, r.solve_times.len());
    assert!(stats.median <= stats.p95 && stats.p95 <= stats.max);
}

#[test]
fn unknown_controller_name() {
    assert!(matches!("mpc".parse::<ControllerKind>(), Err(Error::UnknownStrategy { .. })));
    assert_eq!("single".parse::<ControllerKind>().unwrap(), ControllerKind::SingleMpc);
    let _ = MpcParams::zeros(1);
}
