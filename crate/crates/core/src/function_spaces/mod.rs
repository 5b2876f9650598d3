//! Value-function classes, the softmax policies they induce, projections
//! onto a class, misspecification probes and covering-number formulas.

mod class;
mod covering;
mod projection;
mod soft;

pub use class::{ClosedClassSpec, FunctionClass, LinearNet, Provenance};
pub use covering::{covering_dims, CoveringReport};
pub use projection::{
    estimate_misspecification, full_support, project_bellman, project_value, support_of,
    MisspecReport, Projection, Support,
};
pub use soft::{default_eta, eta_requirement, SoftPolicyState};
