//! Simulation and verification toolkit for inhomogeneous long-range
//! percolation (weight-dependent random connection models).
//!
//! The crate is organised bottom-up:
//!
//! * [`point_process`] samples marked Poisson and percolated-lattice clouds,
//! * [`kernels`] evaluates connection functions and their mark integrals,
//! * [`graph`] samples the random geometric graph and applies graph operators,
//! * [`clusters`] holds component analysis and the percolation estimators,
//! * [`regularity`] checks mu-regularity and the two large-deviation bounds,
//! * [`renorm`] evaluates the multi-scale aliveness and goodness certificates,
//! * [`network`] computes effective conductances and random-walk statistics.
//!
//! All randomness is drawn from counter-based streams keyed by
//! `(seed, purpose, identity)`, so results do not depend on thread count or
//! iteration order.

pub mod clusters;
pub mod config;
pub mod domain;
pub mod error;
pub mod graph;
pub mod kernels;
pub mod model;
pub mod network;
pub mod point_process;
mod quadrature;
pub mod regularity;
pub mod renorm;
pub mod rng;

pub use clusters::{Partition, ThetaEstimate, ThetaEstimator};
pub use domain::{Boundary, BoxDomain};
pub use error::{Error, Result};
pub use graph::{Edge, GeoGraph};
pub use kernels::{DeltaEffEstimate, KernelFamily, KernelSpec, MarkKernel, Profile, RGrid};
pub use model::{Builder, ModelConfig, PointSource};
pub use network::{ConductanceCurve, Network};
pub use point_process::{MarkedCloud, PointCloud, Source};
pub use regularity::MarkCollection;
pub use renorm::{RenormParams, RenormReport, TransienceParams};

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
