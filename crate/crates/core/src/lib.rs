//! Minimum-distance robust estimation under total-variation and
//! Wasserstein-1 corruption.

pub mod adversaries;
pub mod directions;
pub mod distances;
pub mod empirical;
pub mod estimators;
pub mod harness;
pub mod error;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod orlicz;
pub mod resilience;
pub mod rng;

pub use empirical::{Direction, EmpiricalDist};
pub use error::{Error, Result};
pub use orlicz::OrliczFunction;
pub use rng::RngSeed;
