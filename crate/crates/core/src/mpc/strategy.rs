//! Runtime-selectable planning layers behind one interface.

use nalgebra::DVector;

use super::layer::{MpcInput, PreparedLayer};
use super::params::{MpcConfig, MpcParams};
use crate::error::{Error, Result};
use crate::qp::QpSolution;

/// First actions and predicted openings for both agents.
#[derive(Debug, Clone)]
pub struct Plan {
    pub a_star: [f64; 2],
    pub openings: [DVector<f64>; 2],
    pub iterations: usize,
}

/// Previous solutions kept between control ticks. Coupled layers use the
/// first slot only.
#[derive(Debug, Clone, Default)]
pub struct WarmStarts {
    pub slots: [Option<QpSolution>; 2],
}

pub trait PlanningLayer: Send + Sync {
    fn name(&self) -> &'static str;

    fn plan(&self, input: &MpcInput, warm: &mut WarmStarts) -> Result<Plan>;
}

/// Both agents in one coupled problem.
pub struct Coupled {
    layer: PreparedLayer,
}

impl Coupled {
    pub fn new(params: &MpcParams, cfg: &MpcConfig) -> Result<Self> {
        Ok(Self {
            layer: PreparedLayer::new(params, cfg)?,
        })
    }
}

impl PlanningLayer for Coupled {
    fn name(&self) -> &'static str {
        "coupled"
    }

    fn plan(&self, input: &MpcInput, warm: &mut WarmStarts) -> Result<Plan> {
        let out = self.layer.forward(input, warm.slots[0].as_ref())?;
        let iterations = out.qp.iterations;
        let plan = Plan {
            a_star: out.a_star,
            openings: out.predicted_openings,
            iterations,
        };
        warm.slots[0] = Some(out.qp);
        Ok(plan)
    }
}

/// One independent single-agent problem per agent, with the coupling
/// parameters zeroed.
pub struct Decoupled {
    layer: PreparedLayer,
}

impl Decoupled {
    pub fn new(params: &MpcParams, cfg: &MpcConfig) -> Result<Self> {
        Ok(Self {
            layer: PreparedLayer::new(&params.decoupled(), cfg)?,
        })
    }
}

impl PlanningLayer for Decoupled {
    fn name(&self) -> &'static str {
        "decoupled"
    }

    fn plan(&self, input: &MpcInput, warm: &mut WarmStarts) -> Result<Plan> {
        let mut a_star = [0.0; 2];
        let mut openings = [DVector::zeros(0), DVector::zeros(0)];
        let mut iterations = 0;
        for i in 0..2 {
            let out = self.layer.forward_single(
                i,
                input.states[i],
                &input.embeddings[i],
                warm.slots[i].as_ref(),
            )?;
            a_star[i] = out.a_star;
            openings[i] = out.predicted_openings;
            iterations += out.qp.iterations;
            warm.slots[i] = Some(out.qp);
        }
        Ok(Plan {
            a_star,
            openings,
            iterations,
        })
    }
}

type LayerCtor = fn(&MpcParams, &MpcConfig) -> Result<Box<dyn PlanningLayer>>;

const LAYERS: &[(&str, LayerCtor)] = &[
    ("coupled", |p, c| Ok(Box::new(Coupled::new(p, c)?))),
    ("decoupled", |p, c| Ok(Box::new(Decoupled::new(p, c)?))),
];

pub fn layer_names() -> impl Iterator<Item = &'static str> {
    LAYERS.iter().map(|(n, _)| *n)
}

pub fn make_layer(name: &str, params: &MpcParams, cfg: &MpcConfig) -> Result<Box<dyn PlanningLayer>> {
    let (_, ctor) = LAYERS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::UnknownStrategy {
            kind: "layer",
            name: name.to_string(),
        })?;
    ctor(params, cfg)
}
