use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::world::Observation;
use crate::error::{Error, Result};
use crate::mpc::{make_layer, MpcConfig, MpcInput, MpcParams, PlanningLayer, WarmStarts};

/// Maps an observation to one acceleration per gripper.
pub trait GraspController: Send {
    fn name(&self) -> &str;

    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation) -> Result<[f64; 2]>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    MultiMpc,
    SingleMpc,
    Pd,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::MultiMpc, Self::SingleMpc, Self::Pd];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MultiMpc => "multi",
            Self::SingleMpc => "single",
            Self::Pd => "pd",
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "controller",
                name: s.to_string(),
            })
    }
}

/// Receding-horizon control with any planning layer; only the first
/// planned acceleration is applied.
pub struct MpcController {
    layer: Box<dyn PlanningLayer>,
    warm: WarmStarts,
}

impl MpcController {
    pub fn new(layer: Box<dyn PlanningLayer>) -> Self {
        Self {
            layer,
            warm: WarmStarts::default(),
        }
    }
}

impl GraspController for MpcController {
    fn name(&self) -> &str {
        self.layer.name()
    }

    fn reset(&mut self) {
        self.warm = WarmStarts::default();
    }

    fn act(&mut self, obs: &Observation) -> Result<[f64; 2]> {
        let input = MpcInput {
            states: obs.states,
            embeddings: obs.embeddings.clone(),
        };
        Ok(self.layer.plan(&input, &mut self.warm)?.a_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    /// Embedding-norm setpoint.
    pub target: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: 400.0,
            kd: 40.0,
            target: 10.0,
        }
    }
}

/// Per-gripper PD on the embedding norm. A stronger signal than the
/// setpoint means too much squeeze, so the gripper opens.
pub struct PdController {
    gains: PdGains,
}

impl PdController {
    pub fn new(gains: PdGains) -> Self {
        Self { gains }
    }
}

impl GraspController for PdController {
    fn name(&self) -> &str {
        "pd"
    }

    fn act(&mut self, obs: &Observation) -> Result<[f64; 2]> {
        let g = self.gains;
        Ok(std::array::from_fn(|i| {
            g.kp * (obs.embeddings[i].norm() - g.target) - g.kd * obs.states[i].v
        }))
    }
}

pub fn make_controller(
    kind: ControllerKind,
    params: &MpcParams,
    cfg: &MpcConfig,
    pd: PdGains,
) -> Result<Box<dyn GraspController>> {
    Ok(match kind {
        ControllerKind::MultiMpc => Box::new(MpcController::new(make_layer("coupled", params, cfg)?)),
        ControllerKind::SingleMpc => Box::new(MpcController::new(make_layer("decoupled", params, cfg)?)),
        ControllerKind::Pd => Box::new(PdController::new(pd)),
    })
}
