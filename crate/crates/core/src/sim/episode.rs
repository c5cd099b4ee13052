use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::controller::{make_controller, ControllerKind, GraspController, PdGains};
use super::object::object_by_name;
use super::world::{GraspStatus, GraspWorld, WorldConfig};
use crate::error::{Error, Result};
use crate::mpc::{MpcConfig, MpcParams};

/// Holding this long counts as a stable grasp (s).
pub const SUCCESS_HOLD: f64 = 15.0;
const SETTLE_BAND: f64 = 0.5;
const MIN_SETTLED_SPAN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub p1: f64,
    pub v1: f64,
    pub a1: f64,
    pub p2: f64,
    pub v2: f64,
    pub a2: f64,
    pub status: GraspStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub ticks: usize,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl RuntimeStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self {
                ticks: 0,
                median: 0.0,
                p95: 0.0,
                max: 0.0,
            };
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let at = |q: f64| s[((s.len() - 1) as f64 * q).round() as usize];
        Self {
            ticks: s.len(),
            median: at(0.5),
            p95: at(0.95),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub success: bool,
    /// Time spent holding before failure or the end of the run (s).
    pub hold_duration: f64,
    pub final_status: GraspStatus,
    pub trace: Vec<TraceRow>,
    /// Wall-clock time of each controller call (s).
    pub solve_times: Vec<f64>,
    /// Ticks where the controller errored and zero acceleration was used.
    pub controller_failures: usize,
}

impl EpisodeResult {
    pub fn opening_traces(&self) -> [Vec<f64>; 2] {
        [
            self.trace.iter().map(|r| r.p1).collect(),
            self.trace.iter().map(|r| r.p2).collect(),
        ]
    }

    pub fn runtime_stats(&self) -> RuntimeStats {
        RuntimeStats::from_samples(&self.solve_times)
    }
}

pub fn run_episode(
    controller: &mut dyn GraspController,
    world_cfg: &WorldConfig,
    duration: f64,
    seed: u64,
) -> Result<EpisodeResult> {
    if !(duration > 0.0) {
        return Err(Error::Config("episode duration must be positive".into()));
    }
    let mut world = GraspWorld::new(world_cfg, seed)?;
    controller.reset();
    let ticks = (duration / world.dt()).round() as usize;
    let mut trace = Vec::with_capacity(ticks + 1);
    let mut solve_times = Vec::with_capacity(ticks);
    let mut failures = 0;
    let row = |w: &GraspWorld, a: [f64; 2]| TraceRow {
        t: w.t,
        p1: w.grippers[0].p,
        v1: w.grippers[0].v,
        a1: a[0],
        p2: w.grippers[1].p,
        v2: w.grippers[1].v,
        a2: a[1],
        status: w.status,
    };
    for _ in 0..ticks {
        if world.status != GraspStatus::Holding {
            break;
        }
        let obs = world.observe();
        let start = Instant::now();
        let actions = match controller.act(&obs) {
            Ok(a) => a,
            Err(e) => {
                log::debug!("controller {} failed at t={:.2}: {e}", controller.name(), world.t);
                failures += 1;
                [0.0, 0.0]
            }
        };
        solve_times.push(start.elapsed().as_secs_f64());
        trace.push(row(&world, actions));
        world.step(actions)?;
    }
    trace.push(row(&world, [0.0, 0.0]));
    let hold_duration = if world.status == GraspStatus::Holding {
        world.t
    } else {
        // the failing tick ends the hold
        world.t - world.dt()
    };
    Ok(EpisodeResult {
        success: world.status == GraspStatus::Holding && hold_duration >= SUCCESS_HOLD - 1e-9,
        hold_duration,
        final_status: world.status,
        trace,
        solve_times,
        controller_failures: failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMetrics {
    /// Mean |p₁ − p₂| after settling (mm).
    pub inter_agent_gap: f64,
    pub settle_time: f64,
    /// Variance of p₁ − p₂ after settling (mm²).
    pub post_settle_variance: f64,
}

/// Settling is the first time after which both openings stay within
/// ±0.5 mm of their final values; at least one second of settled trace is
/// required.
pub fn stability_metrics(result: &EpisodeResult) -> Result<StabilityMetrics> {
    stability_from_trace(&result.trace)
}

pub fn stability_from_trace(trace: &[TraceRow]) -> Result<StabilityMetrics> {
    let last = trace.last().ok_or(Error::NeverSettled)?;
    let within = |r: &TraceRow| (r.p1 - last.p1).abs() <= SETTLE_BAND && (r.p2 - last.p2).abs() <= SETTLE_BAND;
    let start = trace
        .iter()
        .rposition(|r| !within(r))
        .map_or(0, |i| i + 1);
    let tail = &trace[start..];
    if tail.len() < 2 || last.t - tail[0].t < MIN_SETTLED_SPAN {
        return Err(Error::NeverSettled);
    }
    let n = tail.len() as f64;
    let gaps: Vec<f64> = tail.iter().map(|r| r.p1 - r.p2).collect();
    let mean = gaps.iter().sum::<f64>() / n;
    Ok(StabilityMetrics {
        inter_agent_gap: gaps.iter().map(|g| g.abs()).sum::<f64>() / n,
        settle_time: tail[0].t,
        post_settle_variance: gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n,
    })
}

pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "p1", "v1", "a1", "p2", "v2", "a2", "status"])
        .map_err(Error::csv)?;
    for r in trace {
        w.write_record([
            format!("{:.4}", r.t),
            r.p1.to_string(),
            r.v1.to_string(),
            r.a1.to_string(),
            r.p2.to_string(),
            r.v2.to_string(),
            r.a2.to_string(),
            format!("{:?}", r.status),
        ])
        .map_err(Error::csv)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub episodes: usize,
    pub duration: f64,
    pub seed: u64,
    pub objects: Vec<String>,
    pub controllers: Vec<ControllerKind>,
    pub world: WorldConfig,
    pub pd: PdGains,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            episodes: 10,
            duration: 20.0,
            seed: 0,
            objects: super::object_menu().into_iter().map(|o| o.name).collect(),
            controllers: ControllerKind::ALL.to_vec(),
            world: WorldConfig::default(),
            pd: PdGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub controller: ControllerKind,
    pub object: String,
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub hold_duration: f64,
    pub final_status: GraspStatus,
    pub metrics: Option<StabilityMetrics>,
    pub median_solve_time: f64,
    pub controller_failures: usize,
}

/// Seed shared by every controller for the same object and episode, so
/// the arms see identical starts and disturbances.
pub fn episode_seed(base: u64, object_index: usize, episode: usize) -> u64 {
    base.wrapping_mul(1_000_003)
        .wrapping_add((object_index as u64) << 20)
        .wrapping_add(episode as u64)
}

pub fn run_suite(cfg: &SuiteConfig, params: &MpcParams, mpc: &MpcConfig) -> Result<Vec<EpisodeSummary>> {
    let objects = cfg
        .objects
        .iter()
        .map(|n| object_by_name(n))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(ControllerKind, usize, usize)> = cfg
        .controllers
        .iter()
        .flat_map(|&c| (0..objects.len()).flat_map(move |o| (0..cfg.episodes).map(move |e| (c, o, e))))
        .collect();
    jobs.par_iter()
        .map(|&(kind, o, e)| {
            let mut controller = make_controller(kind, params, mpc, cfg.pd)?;
            let world = WorldConfig {
                object: objects[o].clone(),
                ..cfg.world.clone()
            };
            let seed = episode_seed(cfg.seed, o, e);
            let r = run_episode(controller.as_mut(), &world, cfg.duration, seed)?;
            Ok(EpisodeSummary {
                controller: kind,
                object: objects[o].name.clone(),
                episode: e,
                seed,
                success: r.success,
                hold_duration: r.hold_duration,
                final_status: r.final_status,
                metrics: stability_metrics(&r).ok(),
                median_solve_time: r.runtime_stats().median,
                controller_failures: r.controller_failures,
            })
        })
        .collect()
}

/// Success rate of `kind` over all episodes (optionally one object).
pub fn success_rate(rows: &[EpisodeSummary], kind: ControllerKind, object: Option<&str>) -> f64 {
    let sel: Vec<&EpisodeSummary> = rows
        .iter()
        .filter(|r| r.controller == kind && object.is_none_or(|o| r.object == o))
        .collect();
    if sel.is_empty() {
        return 0.0;
    }
    sel.iter().filter(|r| r.success).count() as f64 / sel.len() as f64
}

/// Mean post-settle gap variance over episodes that settled.
pub fn mean_gap_variance(rows: &[EpisodeSummary], kind: ControllerKind, object: &str) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.controller == kind && r.object == object)
        .filter_map(|r| r.metrics.map(|m| m.post_settle_variance))
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Success-rate table: one row per object plus an aggregate row, one
/// column per controller.
pub fn write_suite_table<W: Write>(out: W, rows: &[EpisodeSummary], controllers: &[ControllerKind]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["object".to_string()];
    header.extend(controllers.iter().map(|c| c.to_string()));
    w.write_record(&header).map_err(Error::csv)?;
    let mut objects: Vec<&str> = Vec::new();
    for r in rows {
        if !objects.contains(&r.object.as_str()) {
            objects.push(&r.object);
        }
    }
    for o in objects.iter().map(|o| Some(*o)).chain([None]) {
        let mut rec = vec![o.unwrap_or("aggregate").to_string()];
        rec.extend(controllers.iter().map(|&c| format!("{:.2}", success_rate(rows, c, o))));
        w.write_record(&rec).map_err(Error::csv)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}
