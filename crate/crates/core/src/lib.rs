//! Rank-based interacting diffusions: simulation of the particle system and
//! its spacings, the product-exponential equilibrium, concentration bounds for
//! additive functionals, linear Lyapunov certificates, functionally generated
//! portfolios and equilibrium moments of ranked weights in the Atlas model.

pub mod atlas;
pub mod bounds;
pub mod equilibrium;
pub mod io;
pub mod lyapunov;
pub mod model;
pub mod numeric;
pub mod portfolio;
pub mod quad;
pub mod rng;
pub mod sim;

pub use model::{ModelError, ModelParams};
pub use sim::{InitialState, SimConfig, SimError, Trajectory};
