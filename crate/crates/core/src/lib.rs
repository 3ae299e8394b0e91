//! Linear-quadratic deep structured teams: model aggregation through the
//! gauge transformation, deep Riccati solvers, exact and zeroth-order
//! policy gradient methods, and an n-agent simulator.

pub mod error;
pub mod gauge;
pub mod linalg;
pub mod model;
pub mod pg_exact;
pub mod pg_zeroth;
pub mod policy;
pub mod presets;
pub mod random;
pub mod riccati;
pub mod seed;
pub mod sim;
pub mod trace;

pub use error::{Block, Error, Result};
pub use linalg::Mat;
pub use model::{aggregate, validate_model, AggregatedModel, SubPopulationSpec, TeamModel, ValidationReport};
pub use policy::Policy;
pub use riccati::RiccatiSolution;
pub use trace::{RunTrace, TraceRow};
