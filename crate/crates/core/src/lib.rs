//! Discretization of linear state-space models.
//!
//! Six continuous-to-discrete schemes (zero-order hold, first-order hold,
//! bilinear, polynomial, higher-order hold and classical RK4) are exposed in
//! dense and diagonal form, together with the recurrences that consume them,
//! a high-accuracy continuous-time reference integrator and the analysis
//! routines used to compare the schemes.

pub mod analysis;
pub mod discretize;
pub mod error;
pub mod io;
pub mod linalg;
pub mod oracle;
pub mod plot;
pub mod scan;

pub use error::{Error, Result};
