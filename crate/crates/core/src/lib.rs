//! Learned step-size control for numerical integration.
//!
//! The crate bundles everything needed to train and benchmark Q-learning
//! controllers that pick step sizes for composite Simpson quadrature and for
//! Dormand-Prince integration of ODEs:
//!
//! - [`problems`]: function classes, ODE systems and their reference oracles
//! - [`quad`]: Simpson kernels, weighted rules and the subdivision baseline
//! - [`ode`]: explicit Runge-Kutta stepping and the RK45 baseline controller
//! - [`neural`]: a small ReLU network with Adam and a portable checkpoint format
//! - [`rl`]: environments, state encoding, rewards and the Q-learning loop
//! - [`meta`]: a second Q-learner dispatching among base learners
//! - [`optweights`]: regression-optimal quadrature weights and node search
//! - [`bench`]: run configuration, Pareto tables, CSV and SVG output

pub mod bench;
pub mod error;
pub mod meta;
pub mod neural;
pub mod ode;
pub mod optweights;
pub mod problems;
pub mod quad;
pub mod rl;

pub use error::{Error, Result};

/// Seeded generator used throughout; ChaCha8 keeps streams reproducible across platforms.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's generator from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
