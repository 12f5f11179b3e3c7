//! Reference problems: the double-well and quartic Langevin steering examples
//! and the 1D classical bridge.

use crate::drift::{DriftModel, PolynomialPotential};
use crate::types::{diag, GaussianMixture, SbpConfig};

pub struct Problem {
    pub model: DriftModel,
    pub rho0: GaussianMixture,
    pub rho1: GaussianMixture,
    pub config: SbpConfig,
}

/// `ρ₀ = 𝒩((-2, 0), diag(0.8, 0.7))`.
pub fn planar_rho0() -> GaussianMixture {
    GaussianMixture::diagonal(vec![-2.0, 0.0], &[0.8, 0.7]).expect("valid mixture")
}

/// Even mixture of `𝒩((1.5, 2), diag(0.5, 0.8))` and `𝒩((1.5, -2), diag(0.7, 0.8))`.
pub fn planar_rho1() -> GaussianMixture {
    GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![1.5, 2.0], vec![1.5, -2.0]],
        vec![diag(&[0.5, 0.8]), diag(&[0.7, 0.8])],
    )
    .expect("valid mixture")
}

/// Shared solver settings: the planar defaults with `epsilon` and `num_samples`.
pub fn solver(epsilon: f64, num_samples: usize) -> SbpConfig {
    SbpConfig {
        epsilon,
        gamma: 0.5,
        tau: 1e-3,
        sigma: 1e-3,
        num_samples,
        num_steps: 1000,
        tol_sb: 0.1,
        max_iter_sb: 500,
        tol_pr: 1e-3,
        max_iter_pr: 500,
        seed: 0,
        log_domain: false,
        rbf_shape: None,
        interpolate_log: true,
    }
}

/// Gradient drift in the double-well potential, `ε = 6`.
pub fn double_well(num_samples: usize) -> Problem {
    Problem {
        model: DriftModel::gradient(PolynomialPotential::double_well()),
        rho0: planar_rho0(),
        rho1: planar_rho1(),
        config: solver(6.0, num_samples),
    }
}

/// Langevin drift with `V(ξ) = 5ξ⁴`, `κ = 0.5`, `ε = 5`.
pub fn quartic_langevin(num_samples: usize) -> Problem {
    Problem {
        model: DriftModel::mixed(PolynomialPotential::quartic(), 0.5).expect("valid kappa"),
        rho0: planar_rho0(),
        rho1: planar_rho1(),
        config: solver(5.0, num_samples),
    }
}

/// 1D classical bridge endpoints: `𝒩(0, 0.5)` to an even mixture of `𝒩(±2, 0.4)`, `ε = 0.5`.
pub fn classical_line() -> (GaussianMixture, GaussianMixture, f64) {
    let rho0 = GaussianMixture::diagonal(vec![0.0], &[0.5]).expect("valid mixture");
    let rho1 = GaussianMixture::new(vec![0.5, 0.5], vec![vec![-2.0], vec![2.0]], vec![vec![vec![0.4]], vec![vec![0.4]]])
        .expect("valid mixture");
    (rho0, rho1, 0.5)
}
