mod checkpoint;
mod layer;
mod params;
mod strategy;

pub use checkpoint::{checkpoint_from_json, checkpoint_to_json, load_checkpoint, save_checkpoint};
pub use layer::{
    backward, build_qp, forward, Assembly, Diagnostics, MpcGradients, MpcInput, MpcOutput,
    OutputGradient, PreparedLayer, SingleOutput, TiePolicy,
};
pub use params::{
    assemble_qf, min_eigenvalue, tactile_penalty, Bounds, MpcConfig, MpcParams, TactilePenalty,
};
pub use strategy::{layer_names, make_layer, Coupled, Decoupled, Plan, PlanningLayer, WarmStarts};
