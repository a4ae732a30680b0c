//! Projection-based reduction of shifted lifted models: block-diagonal
//! balanced truncation, POD, the steady-state frequency adjustment and a
//! text format for reduced models.

mod io;
mod model;
mod pod;
mod projection;

pub use io::{load_reduced, read_reduced, save_reduced, write_reduced};
pub use model::{
    assemble_reduced, steady_state_adjust, ReducedDynamics, ReducedQuadraticModel, ReductionMethod,
    SteadyStateOptions,
};
pub use pod::{pod_reduce, PodVariant};
pub use projection::{bt_projections, ProjectionPair};
