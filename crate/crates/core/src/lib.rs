//! Selfdual variational calculus for evolution equations.
//!
//! Evolution problems are posed as the minimisation of a nonnegative
//! functional on a discretised path space whose minimum value is zero exactly
//! at solutions. The attained value is an a-posteriori certificate.

pub mod boundary;
pub mod convex;
pub mod error;
pub mod hilbert;
pub mod lagrangian;
pub mod oracle;
pub mod pathspace;
pub mod problems;
pub mod solver;
pub mod verify;

pub use convex::{ConvexFn, Domain, Extended};
pub use error::{Error, Result};
pub use hilbert::{Grid, GridBc, Semigroup, Space};
