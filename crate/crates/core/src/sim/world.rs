use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::object::ObjectModel;
use crate::error::{Error, Result};
use crate::lifting::{make_double_integrator, DoubleIntegrator, GripperState};
use crate::mpc::Bounds;
use crate::tactile::{trial_rng, ContactState, SyntheticEncoder, DEFAULT_ENCODER_SEED, DEFAULT_NOISE_SIGMA, DEFAULT_SHEAR_GAIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspStatus {
    Holding,
    Slipped,
    Damaged,
}

/// A velocity kick applied to one gripper at a given tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub tick: usize,
    pub agent: usize,
    /// mm/s
    pub delta_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DisturbanceConfig {
    pub count: usize,
    /// mm/s, before dividing by the object's mass proxy.
    pub magnitude: f64,
    /// Window (s) in which kicks are scheduled.
    pub earliest: f64,
    pub latest: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            count: 2,
            magnitude: 20.0,
            earliest: 4.0,
            latest: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartMode {
    /// Squeezing: each opening starts a uniform fraction of the way from
    /// its slip onset down to its damage margin.
    InContact { min_squeeze: f64, max_squeeze: f64 },
    /// Grippers this many mm wider than the object.
    Open { clearance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub object: ObjectModel,
    pub dt: f64,
    /// Actuator limits; accelerations are clipped to them.
    pub bounds: Bounds,
    pub disturbances: DisturbanceConfig,
    pub start: StartMode,
    pub embed_dim: usize,
    pub encoder_seed: u64,
    pub noise_sigma: f64,
    pub shear_gain: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            object: super::object_menu().remove(0),
            dt: 0.01,
            bounds: Bounds::default(),
            disturbances: DisturbanceConfig::default(),
            start: StartMode::InContact {
                min_squeeze: 0.3,
                max_squeeze: 0.7,
            },
            embed_dim: 20,
            encoder_seed: DEFAULT_ENCODER_SEED,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            shear_gain: DEFAULT_SHEAR_GAIN,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.object.validate()?;
        if !(self.dt > 0.0) {
            return Err(Error::NonPositiveDt(self.dt));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if let StartMode::InContact {
            min_squeeze,
            max_squeeze,
        } = self.start
        {
            if !(0.0 <= min_squeeze && min_squeeze <= max_squeeze && max_squeeze < 1.0) {
                return Err(Error::Config("start squeeze fractions must satisfy 0 <= min <= max < 1".into()));
            }
        }
        let d = &self.disturbances;
        if !(d.earliest >= 0.0 && d.earliest <= d.latest) {
            return Err(Error::Config("disturbance window is empty".into()));
        }
        Ok(())
    }
}

/// What a controller is allowed to see.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub embeddings: [DVector<f64>; 2],
    pub states: [GripperState; 2],
}

#[derive(Debug, Clone)]
pub struct GraspWorld {
    pub object: ObjectModel,
    pub grippers: [GripperState; 2],
    pub t: f64,
    pub tick: usize,
    pub disturbances: Vec<Disturbance>,
    pub status: GraspStatus,
    dynamics: DoubleIntegrator,
    bounds: Bounds,
    encoder: SyntheticEncoder,
}

impl GraspWorld {
    pub fn new(cfg: &WorldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng: ChaCha8Rng = trial_rng(seed, 0);
        let object = cfg.object.clone();
        let grippers = std::array::from_fn(|i| {
            let p = match cfg.start {
                StartMode::InContact {
                    min_squeeze,
                    max_squeeze,
                } => {
                    let room = object.onset(i) - object.damage_margin[i];
                    object.onset(i) - room * rng.random_range(min_squeeze..=max_squeeze)
                }
                StartMode::Open { clearance } => object.width[i] + clearance,
            };
            GripperState::new(p, 0.0)
        });
        let ticks_lo = (cfg.disturbances.earliest / cfg.dt).round() as usize;
        let ticks_hi = (cfg.disturbances.latest / cfg.dt).round() as usize;
        let mut disturbances: Vec<Disturbance> = (0..cfg.disturbances.count)
            .map(|_| {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Disturbance {
                    tick: rng.random_range(ticks_lo..=ticks_hi),
                    agent: rng.random_range(0..2),
                    delta_v: sign * cfg.disturbances.magnitude / object.mass,
                }
            })
            .collect();
        disturbances.sort_by_key(|d| d.tick);
        let mut world = Self {
            object,
            grippers,
            t: 0.0,
            tick: 0,
            disturbances,
            status: GraspStatus::Holding,
            dynamics: make_double_integrator(cfg.dt)?,
            bounds: cfg.bounds,
            encoder: SyntheticEncoder::new(cfg.embed_dim, cfg.noise_sigma, cfg.encoder_seed)
                .with_shear_gain(cfg.shear_gain),
        };
        world.status = world.evaluate_status();
        Ok(world)
    }

    pub fn dt(&self) -> f64 {
        self.dynamics.dt()
    }

    pub fn openings(&self) -> [f64; 2] {
        [self.grippers[0].p, self.grippers[1].p]
    }

    pub fn contact(&self) -> [ContactState; 2] {
        self.object.contact(self.openings(), self.t)
    }

    pub fn observe(&self) -> Observation {
        let contact = self.contact();
        Observation {
            embeddings: std::array::from_fn(|i| self.encoder.encode(&contact[i])),
            states: self.grippers,
        }
    }

    fn evaluate_status(&self) -> GraspStatus {
        if self.status != GraspStatus::Holding {
            return self.status;
        }
        let p = self.openings();
        if (0..2).any(|i| p[i] > self.object.slip_margin[i]) {
            GraspStatus::Slipped
        } else if (0..2).any(|i| p[i] < self.object.damage_margin[i]) {
            GraspStatus::Damaged
        } else {
            GraspStatus::Holding
        }
    }

    /// Advances one tick: clipped accelerations, double-integrator motion,
    /// scheduled kicks, then the status check.
    pub fn step(&mut self, actions: [f64; 2]) -> Result<()> {
        if self.status != GraspStatus::Holding {
            return Err(Error::EpisodeOver);
        }
        let b = self.bounds;
        for i in 0..2 {
            let a = if actions[i].is_finite() { actions[i].clamp(b.a_min, b.a_max) } else { 0.0 };
            let mut s = self.dynamics.step(self.grippers[i], a);
            if s.p < b.p_min || s.p > b.p_max {
                s.p = s.p.clamp(b.p_min, b.p_max);
                s.v = 0.0;
            }
            self.grippers[i] = s;
        }
        self.tick += 1;
        self.t = self.tick as f64 * self.dt();
        for d in self.disturbances.iter().filter(|d| d.tick == self.tick) {
            self.grippers[d.agent].v += d.delta_v;
        }
        self.status = self.evaluate_status();
        Ok(())
    }
}

/// Functional form of [`GraspWorld::step`].
pub fn world_step(world: &GraspWorld, actions: [f64; 2]) -> Result<GraspWorld> {
    let mut next = world.clone();
    next.step(actions)?;
    Ok(next)
}
