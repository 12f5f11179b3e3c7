//! Schrödinger bridge solver for gradient and Langevin prior dynamics.
//!
//! Endpoint factors are propagated on scattered point clouds by
//! entropy-regularized Wasserstein proximal steps. The classical heat-kernel
//! bridge on a grid is included as a reference solution.

pub mod bridge;
pub mod classical;
pub mod drift;
pub mod error;
pub mod metrics;
pub mod presets;
pub mod prox;
pub mod recovery;
pub mod sde;
pub mod types;

pub use bridge::{
    compute_transient_factors, factor_to_p, p_to_factor, run_endpoint_fixed_point, FactorState, FactorTrajectory,
};
pub use classical::{classical_control, classical_fixed_point, classical_propagate, heat_kernel, Grid1D};
pub use drift::{drift_eval, hamiltonian, stationary_log_density, DriftModel, PolynomialPotential};
pub use error::{Error, Result};
pub use metrics::{discrete_w2, hilbert_metric};
pub use prox::{prox_step, ProxProblem, ProxSolution};
pub use recovery::{compose_density, control_field, rbf_fit, RbfInterpolant};
pub use sde::{em_path_controlled, em_step_prior, ControlField};
pub use types::{mixture_pdf, mixture_sample, stream_rng, GaussianMixture, SbpConfig, SolverRng, WeightedCloud};

pub(crate) mod par {
    /// `(0..n).map(f)` collected in order, in parallel when enabled.
    #[cfg(feature = "parallel")]
    pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    pub fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        (0..n).map(f).collect()
    }

    /// Fills `out` row by row: `f(i, row_i)`.
    #[cfg(feature = "parallel")]
    pub fn for_each_row(out: &mut ndarray::Array2<f64>, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
        use rayon::prelude::*;
        let cols = out.ncols().max(1);
        out.as_slice_mut()
            .expect("standard layout")
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }

    #[cfg(not(feature = "parallel"))]
    pub fn for_each_row(out: &mut ndarray::Array2<f64>, f: impl Fn(usize, &mut [f64]) + Sync + Send) {
        let cols = out.ncols().max(1);
        out.as_slice_mut()
            .expect("standard layout")
            .chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
}
