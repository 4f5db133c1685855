//! Sparse blind source separation.
//!
//! Observations `X = AS + N` are separated into a mixing matrix `A` and
//! sources `S` that are sparse in the starlet domain. Two solvers are
//! provided, GMCA (robust heuristic, no convergence guarantee) and PALM
//! (convergent proximal alternating minimisation), together with the
//! two-step pipeline that uses GMCA to initialise PALM and to set its
//! thresholds and reweighting.

pub mod benchmark;
pub mod datagen;
pub mod error;
pub mod gmca;
pub mod hybrid;
pub mod io;
pub mod kernel;
pub mod mat;
pub mod metrics;
pub mod objective;
pub mod palm;
pub mod result;
pub mod rng;
pub mod starlet;

pub use error::{Result, SbssError, Stage};
pub use mat::Mat;
pub use result::{Diagnostics, SeparationResult, TraceEntry};
pub use starlet::{Geometry, StarletPyramid};
