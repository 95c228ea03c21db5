//! Certified l2-performance analysis and state-feedback synthesis for linear
//! discrete-time control loops whose inputs are lost under weakly-hard
//! real-time window constraints.

// BLAS/LAPACK for the PSD cones of the conic backend.
use openblas_src as _;

pub mod config;
pub mod constraints;
pub mod graph;
pub mod lmi;
pub mod sim;
pub mod systems;
