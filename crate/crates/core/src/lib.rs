pub mod analysis;
pub mod experiments;
pub mod gf;
pub mod model;
pub mod placement;
pub mod scalar;
pub mod sim;
pub mod userset;
pub mod verify;

pub use analysis::{AnalysisError, Params, PhasePlan};
pub use model::{Demand, ModelError, SystemConfig};
pub use scalar::{Exact, Scalar};
pub use userset::UserSet;

/// Floating-point parameters, used for sweeps and simulation comparisons.
pub type Params64 = analysis::Params<f64>;
/// Exact rational parameters.
pub type ParamsExact = analysis::Params<Exact>;
pub type PhasePlan64 = analysis::PhasePlan<f64>;
pub type PhasePlanExact = analysis::PhasePlan<Exact>;
