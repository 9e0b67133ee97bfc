//! Numerical engine for connections on principal composite bundles.
//!
//! The crate represents gauge potentials as matrix-valued 1-forms over
//! charted parameter domains, integrates path-ordered exponentials to
//! obtain holonomies, and verifies the decomposition of a composite
//! holonomy into an intertwining term, a transversal holonomy and a
//! structure holonomy. Two application layers are included: non-abelian
//! geometric/dynamical phases of driven quantum systems (`qphase`) and
//! vierbein-based gauge gravity with spinor transport (`gravity`).

pub mod composite;
pub mod error;
pub mod forms;
pub mod gravity;
pub mod liecore;
pub mod pathorder;
pub mod qphase;
pub mod scenario;

pub use error::{HolonomyError, Result};
