//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Arrays cross the boundary as flat `Float64Array`s.

use bridgeflow::classical::{
    classical_control, classical_fixed_point, classical_propagate, interpolate_linear, ClassicalSolution, FactorKind,
    QuadratureKernel,
};
use bridgeflow::prox::{cost_matrix_euclidean, prox_step_with, ProxOptions, ProxProblem};
use bridgeflow::sde::{em_prior_path, simulate_ensemble};
use bridgeflow::{stream_rng, DriftModel, GaussianMixture, Grid1D, PolynomialPotential};
use ndarray::{Array1, ArrayView1, Axis};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Zero-drift bridge on a line from `N(m0, v0)` to an even mixture of
/// `N(-m1, v1)` and `N(m1, v1)`.
#[wasm_bindgen]
pub struct LineBridge {
    grid: Grid1D,
    solution: ClassicalSolution,
    epsilon: f64,
    rho0: GaussianMixture,
}

#[wasm_bindgen]
impl LineBridge {
    #[wasm_bindgen(constructor)]
    pub fn new(epsilon: f64, m0: f64, v0: f64, m1: f64, v1: f64, half_width: f64, points: usize) -> Result<LineBridge, JsError> {
        let grid = Grid1D::uniform(-half_width, half_width, points).map_err(js_err)?;
        let rho0 = GaussianMixture::diagonal(vec![m0], &[v0]).map_err(js_err)?;
        let rho1 = GaussianMixture::new(vec![0.5, 0.5], vec![vec![-m1], vec![m1]], vec![vec![vec![v1]], vec![vec![v1]]])
            .map_err(js_err)?;
        let nodes = grid.points().clone().insert_axis(Axis(1));
        let r0 = rho0.pdf_rows(&nodes).map_err(js_err)?;
        let r1 = rho1.pdf_rows(&nodes).map_err(js_err)?;
        let kernel = QuadratureKernel::heat(&grid, epsilon, 1.0).map_err(js_err)?;
        let solution = classical_fixed_point(r0.view(), r1.view(), &kernel, 1e-10, 2000).map_err(js_err)?;
        Ok(LineBridge { grid, solution, epsilon, rho0 })
    }

    pub fn iterations(&self) -> usize {
        self.solution.iterations
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid.points().to_vec()
    }

    /// Bridge density on the grid at time `t`.
    pub fn density(&self, t: f64) -> Result<Vec<f64>, JsError> {
        let phi = self.factor(FactorKind::Phi, t)?;
        let phihat = self.factor(FactorKind::PhiHat, t)?;
        Ok((&phi * &phihat).to_vec())
    }

    /// Optimal control on the grid at time `t`.
    pub fn control(&self, t: f64) -> Result<Vec<f64>, JsError> {
        Ok(self.control_at(t)?.to_vec())
    }

    /// `count` closed-loop paths on `steps` uniform steps, path-major:
    /// entry `i * (steps + 1) + k` is path `i` at step `k`.
    pub fn paths(&self, count: usize, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        let dt = 1.0 / steps.max(1) as f64;
        let table = (0..=steps).map(|k| self.control_at(k as f64 * dt)).collect::<Result<Vec<_>, _>>()?;
        let grid = &self.grid;
        let control = |x: ArrayView1<f64>, t: f64| -> bridgeflow::Result<Array1<f64>> {
            let k = ((t / dt).round() as usize).min(steps);
            Ok(Array1::from_elem(1, interpolate_linear(grid, table[k].view(), x[0])))
        };
        let model = DriftModel::gradient(PolynomialPotential::zero(1));
        let initial = self.rho0.sample(count, &mut stream_rng(seed, 10));
        let paths = simulate_ensemble(&initial, &model, self.epsilon, &control, dt, 1.0, seed, 1000).map_err(js_err)?;
        Ok(paths.iter().flat_map(|p| p.column(0).to_vec()).collect())
    }
}

impl LineBridge {
    fn factor(&self, kind: FactorKind, t: f64) -> Result<Array1<f64>, JsError> {
        let data = match kind {
            FactorKind::Phi => &self.solution.phi1,
            FactorKind::PhiHat => &self.solution.phihat0,
        };
        classical_propagate(&self.grid, kind, data.view(), self.epsilon, t).map_err(js_err)
    }

    fn control_at(&self, t: f64) -> Result<Array1<f64>, JsError> {
        let phi = self.factor(FactorKind::Phi, t)?;
        classical_control(phi.view(), &self.grid, self.epsilon).map_err(js_err)
    }
}

/// Propagates a Gaussian cloud under the planar OU prior with proximal steps.
/// Returns rows `(x, y, value, exact density)` flattened, at time `steps * tau`.
#[wasm_bindgen]
pub fn ou_propagate(samples: usize, gamma: f64, tau: f64, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    let eps = 1.0;
    let (mu0, var0) = (1.0, 0.5);
    let model = DriftModel::gradient(PolynomialPotential::quadratic(2));
    let rho0 = GaussianMixture::diagonal(vec![mu0, mu0], &[var0, var0]).map_err(js_err)?;
    let x0 = rho0.sample(samples, &mut stream_rng(seed, 1));
    let path = em_prior_path(&x0, &model, eps, tau, steps, &mut stream_rng(seed, 2)).map_err(js_err)?;
    let opts = ProxOptions { tol: 1e-6, max_iter: 20_000, log_domain: true, keep_coupling: false };
    let mut values = rho0.pdf_rows(&x0).map_err(js_err)?;
    for k in 1..=steps {
        let cost = cost_matrix_euclidean(path[k - 1].view(), path[k].view()).map_err(js_err)?;
        let potential = path[k - 1].axis_iter(Axis(0)).map(|r| model.prox_potential(r)).collect();
        let problem = ProxProblem { prev_values: values, cost, potential, step: tau, epsilon: eps, gamma };
        values = prox_step_with(&problem, &opts).map_err(js_err)?.next_values;
    }
    let t = steps as f64 * tau;
    let mean = (-t).exp() * mu0;
    let var = (-2.0 * t).exp() * var0 + eps * (1.0 - (-2.0 * t).exp());
    let exact = GaussianMixture::diagonal(vec![mean, mean], &[var, var])
        .and_then(|g| g.pdf_rows(&path[steps]))
        .map_err(js_err)?;
    let last = &path[steps];
    Ok((0..samples).flat_map(|i| [last[[i, 0]], last[[i, 1]], values[i], exact[i]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_bridge_reaches_the_target() {
        let b = LineBridge::new(0.5, 0.0, 0.5, 2.0, 0.4, 8.0, 321).unwrap();
        let x = b.grid();
        let h = x[1] - x[0];
        for t in [0.0, 0.5, 1.0] {
            let mass: f64 = b.density(t).unwrap().iter().sum::<f64>() * h;
            assert!((mass - 1.0).abs() < 1e-3, "mass {mass} at t = {t}");
        }
        let end = b.density(1.0).unwrap();
        let mid = end[x.len() / 2];
        let peak = end[x.iter().position(|v| (*v - 2.0).abs() < h / 2.0).unwrap()];
        assert!(peak > 5.0 * mid);
    }

    #[test]
    fn paths_have_the_documented_layout() {
        let b = LineBridge::new(0.5, 0.0, 0.5, 2.0, 0.4, 8.0, 161).unwrap();
        let p = b.paths(4, 50, 1).unwrap();
        assert_eq!(p.len(), 4 * 51);
        assert_eq!(p, b.paths(4, 50, 1).unwrap());
    }

    #[test]
    fn ou_rows_carry_positive_values() {
        let rows = ou_propagate(30, 0.5, 0.01, 5, 0).unwrap();
        assert_eq!(rows.len(), 30 * 4);
        assert!(rows.chunks(4).all(|r| r[2] > 0.0 && r[3] > 0.0));
    }
}
