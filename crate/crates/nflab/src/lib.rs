//! nflab: a pseudo-spectral simulator for simplified nematic liquid crystal
//! flow on a periodic box, with the diagnostics used to study it — global and
//! uniformly-local L^3 energies, local energy inequalities, scale-invariant
//! cylinder quantities, Morrey norms, parabolic Riesz potentials, and
//! blow-up monitoring.
//!
//! The model couples the incompressible fluid equations to a transported
//! harmonic-map heat flow for a unit director field d:
//!
//! ```text
//! u_t + u.grad u - lap u + grad P = -div(grad d (.) grad d)
//! div u = 0
//! d_t + u.grad d = lap d + |grad d|^2 d,   |d| = 1
//! ```
//!
//! See the guide under `book/` for a tour; every snippet there runs as a
//! doc-test.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod grid;
pub mod initial;
pub mod io;
pub mod scaling;
pub mod spectral;

mod book;

pub use error::{Error, Result};
pub use field::{
    integrate, mean, normalize_director, DirectorField, EnergyLedger, FlowState, LedgerEntry,
    ScalarField, VectorField,
};
pub use grid::PeriodicGrid;
