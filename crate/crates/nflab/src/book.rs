//! Compiles and runs every code snippet in the guide as a doc-test,
//! keeping `book/` and the library in sync.
#![cfg(doctest)]

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/getting-started.md")]
mod getting_started {}

#[doc = include_str!("../../../book/src/grids-and-fields.md")]
mod grids_and_fields {}

#[doc = include_str!("../../../book/src/spectral-operators.md")]
mod spectral_operators {}

#[doc = include_str!("../../../book/src/time-stepping.md")]
mod time_stepping {}

#[doc = include_str!("../../../book/src/energies-and-monitoring.md")]
mod energies_and_monitoring {}

#[doc = include_str!("../../../book/src/local-diagnostics.md")]
mod local_diagnostics {}

#[doc = include_str!("../../../book/src/parabolic-scaling.md")]
mod parabolic_scaling {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
