//! Size-structured population model with distributed recruitment.
//!
//! The crate provides the model description ([`model`]), the characteristic
//! flow ([`characteristics`]), discretised transport and recruitment
//! operators ([`transport`]), spectral analysis of the next-generation
//! operators ([`spectral`]), irreducibility checks ([`irreducibility`]),
//! a solver for the renewal (delay) formulation ([`renewal`]), two solvers
//! for the PDE formulation ([`pde`]) and the experiments comparing the two
//! ([`harness`]). Configuration files are read by [`config`] and results
//! written as CSV by [`io`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod io;
pub mod irreducibility;
pub mod model;
pub mod pde;
pub mod renewal;
pub mod spectral;
pub mod transport;

pub use characteristics::{FlowCache, FlowResult};
pub use config::Config;
pub use error::{Error, Result};
pub use grid::{make_grid, Grid};
pub use harness::{EquivalenceReport, HistorySource, RunSettings};
pub use irreducibility::IrreducibilityReport;
pub use model::{load_model, ModelSpec, TableSpec, VitalRates};
pub use pde::{DensityTrajectory, Scheme, UpwindOptions};
pub use renewal::{BirthTrajectory, RenewalOptions, ResolventKernel};
pub use spectral::{KernelMatrix, Sign, SignVerdict, SpectralResult};
pub use transport::{AgeKernelSet, BirthHistory, Density, Discretization, KOperator, Weighting};
