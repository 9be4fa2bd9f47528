//! Steady-state distributions of stochastic particle timesteppers.
//!
//! Two routes to the same fixed point: first-order Wasserstein descent with
//! Adam on raw particle ensembles, and matrix-free Newton-Krylov on smooth
//! distributional states (inverse CDFs in 1D, gridded CDFs and sliced
//! projections in 2D). Both treat the microscopic simulator as a black-box
//! map over one coarse horizon `h` and drive the residual `u - phi_h(u)`
//! to zero.

pub mod error;
pub mod krylov;
pub mod measures;
pub mod meanfield;
pub mod models;
pub mod smoothers;
pub mod transport;
pub mod wadam;

pub use error::Error;

/// Library version, for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Caps the rayon worker pool from `OT_STEADY_THREADS` if it is set and the
/// global pool has not been built yet. Call once at startup; later calls and
/// races with an already-built pool are harmless no-ops.
pub fn configure_threads_from_env() {
    if let Ok(v) = std::env::var("OT_STEADY_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
