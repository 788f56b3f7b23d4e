//! Multiscale simulation of colloid aggregation, transport and deposition in
//! saturated porous media.
//!
//! The crate is organized around five building blocks:
//!
//! * [`kinetics`] — Smoluchowski aggregation for a truncated ladder of size
//!   classes, with per-class radii and diffusivities derived from monomer
//!   baselines via a fractal scaling law.
//! * [`homogenize`] — periodic cell problems on a perforated unit cell and
//!   the resulting effective diffusion / tortuosity tensors.
//! * [`nondim`] — dimensionless groups (scale ratio, Thiele modulus, Biot
//!   number) and the scaling relations between microscopic and dimensionless
//!   parameters.
//! * [`transport`] — the 1D column model with deposition, dynamic blocking
//!   functions, switch-pulse inlet and breakthrough extraction.
//! * [`scenarios`] — configuration ingestion, scenario orchestration, CSV
//!   persistence and the command-line interface.

pub mod homogenize;
pub mod kinetics;
pub mod linalg;
pub mod nondim;
pub mod scenarios;
pub mod transport;

pub use kinetics::{AggregationKernel, Concentrations, FluidProperties, SpeciesLadder};
pub use transport::{BlockingFunction, BreakthroughCurve, ColumnParams, ColumnState};
