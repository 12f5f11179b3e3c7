//! Outer fixed point on the endpoint factors `(φ̂₀, φ₁)` for gradient and
//! Langevin priors, and the transient factor sequences.
//!
//! The backward factor is never propagated directly. It is carried by the
//! forward density `p(x, s) = φ(x, 1-s) e^{-E(x)/ε}` (velocities negated for the
//! Langevin prior), where `E` is `V` or `H`. Both `φ̂` and `p` then follow the
//! prior Fokker-Planck flow and are advanced by proximal steps.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::metrics::w2_squared;
use crate::prox::{cost_matrix_euclidean, cost_matrix_mixed, prox_step_with, ProxOptions, ProxProblem, VALUE_FLOOR};
use crate::recovery::{fit_points, FitSpace};
use crate::sde::em_prior_path;
use crate::types::{stream_rng, GaussianMixture, SbpConfig, WeightedCloud};

/// Random stream assignment for one solve.
pub mod streams {
    pub const SAMPLES: u64 = 1;
    pub const PHIHAT_NOISE: u64 = 2;
    pub const P_NOISE: u64 = 3;
    pub const INITIAL_GUESS: u64 = 4;
}

/// Moves a `φ` cloud at `t = 1` into the `p` variable at `s = 0`:
/// values `φ e^{-E/ε}`, velocities negated for the Langevin prior.
pub fn factor_to_p(model: &DriftModel, phi: &WeightedCloud, epsilon: f64) -> Result<WeightedCloud> {
    let energy = model.energy_rows(phi.states())?;
    let values = Array1::from_iter(
        phi.values().iter().zip(energy.iter()).map(|(v, e)| (v.ln() - e / epsilon).exp().max(VALUE_FLOOR)),
    );
    WeightedCloud::new(model.flip_velocity(phi.states()), values, 1.0 - phi.time())
}

/// Inverse of [`factor_to_p`].
pub fn p_to_factor(model: &DriftModel, p: &WeightedCloud, epsilon: f64) -> Result<WeightedCloud> {
    let states = model.flip_velocity(p.states());
    let energy = model.energy_rows(&states)?;
    let values = Array1::from_iter(
        p.values().iter().zip(energy.iter()).map(|(v, e)| (v.ln() + e / epsilon).exp().max(VALUE_FLOOR)),
    );
    WeightedCloud::new(states, values, 1.0 - p.time())
}

/// Fixed particle supports of the two flows, shared by all outer iterations.
#[derive(Debug, Clone)]
pub struct Supports {
    /// `φ̂` flow: `x_path[k]` at `t = kτ`, `x_path[0]` drawn from `ρ₀`.
    pub x_path: Vec<Array2<f64>>,
    /// `p` flow: `y_path[k]` at `s = kσ`, `y_path[0]` the velocity-flipped `x_path[K]`.
    pub y_path: Vec<Array2<f64>>,
}

impl Supports {
    pub fn build(model: &DriftModel, rho0: &GaussianMixture, config: &SbpConfig) -> Result<Self> {
        let mut rng = stream_rng(config.seed, streams::SAMPLES);
        let x0 = rho0.sample(config.num_samples, &mut rng);
        model.check_states(&x0)?;
        let mut rng = stream_rng(config.seed, streams::PHIHAT_NOISE);
        let x_path = em_prior_path(&x0, model, config.epsilon, config.tau, config.num_steps, &mut rng)?;
        let y0 = model.flip_velocity(x_path.last().expect("non-empty path"));
        let mut rng = stream_rng(config.seed, streams::P_NOISE);
        let y_path = em_prior_path(&y0, model, config.epsilon, config.sigma, config.num_steps, &mut rng)?;
        for (name, path) in [("phihat", &x_path), ("p", &y_path)] {
            if let Some(k) = path.iter().position(|x| x.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged(format!("support of the {name} flow at step {k}; use a smaller time step")));
            }
        }
        Ok(Self { x_path, y_path })
    }

    pub fn steps(&self) -> usize {
        self.x_path.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual_phihat0: f64,
    pub residual_p0: f64,
    pub wall_ms: f64,
}

/// Converged endpoint data. Residuals are squared 2-Wasserstein distances
/// between successive iterates.
#[derive(Debug, Clone)]
pub struct FactorState {
    pub phihat0: WeightedCloud,
    pub phi1: WeightedCloud,
    pub phi0: WeightedCloud,
    pub phihat1: WeightedCloud,
    pub p0: WeightedCloud,
    pub p1: WeightedCloud,
    pub iteration: usize,
    pub residual_phihat0: f64,
    pub residual_p0: f64,
    pub history: Vec<IterationRecord>,
    pub supports: Supports,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeOptions {
    /// Multiplies the random initial guess of `φ̂₁`.
    pub initial_guess_scale: f64,
}

impl Default for BridgeOptions {
    fn default() -> Self {
        Self { initial_guess_scale: 1.0 }
    }
}

/// Step of the free-energy term and cost-matrix builder for one flow.
struct FlowSetup<'a> {
    model: &'a DriftModel,
    epsilon: f64,
    gamma: f64,
    dt: f64,
    opts: ProxOptions,
}

impl FlowSetup<'_> {
    fn new<'a>(model: &'a DriftModel, config: &SbpConfig, dt: f64) -> FlowSetup<'a> {
        FlowSetup {
            model,
            epsilon: config.epsilon,
            gamma: config.gamma,
            dt,
            opts: ProxOptions {
                tol: config.tol_pr,
                max_iter: config.max_iter_pr,
                log_domain: config.log_domain,
                keep_coupling: false,
            },
        }
    }

    fn problem(&self, prev: &Array2<f64>, next: &Array2<f64>, values: Array1<f64>) -> Result<ProxProblem> {
        let (cost, step) = match self.model {
            DriftModel::Gradient(_) => (cost_matrix_euclidean(prev.view(), next.view())?, self.dt),
            DriftModel::Mixed(m) => {
                let cost = cost_matrix_mixed(prev.view(), next.view(), self.dt, |xi| m.potential.gradient(xi))?;
                (cost, m.kappa * self.dt)
            }
        };
        let potential = prev.axis_iter(Axis(0)).map(|r| self.model.prox_potential(r)).collect();
        Ok(ProxProblem { prev_values: values, cost, potential, step, epsilon: self.epsilon, gamma: self.gamma })
    }

    /// Runs every step along `path`; `visit(k, values)` sees the values at `path[k]`.
    fn run(&self, path: &[Array2<f64>], start: Array1<f64>, mut visit: impl FnMut(usize, &Array1<f64>)) -> Result<Array1<f64>> {
        let mut values = start;
        visit(0, &values);
        for k in 1..path.len() {
            let problem = self.problem(&path[k - 1], &path[k], values)?;
            values = prox_step_with(&problem, &self.opts)?.next_values;
            visit(k, &values);
        }
        Ok(values)
    }
}

fn ratio_with_floor(num: &Array1<f64>, den: &Array1<f64>) -> Array1<f64> {
    Array1::from_iter(num.iter().zip(den.iter()).map(|(a, b)| (a.max(VALUE_FLOOR).ln() - b.ln()).exp().max(VALUE_FLOOR)))
}

/// Interpolates positive values from `from` onto `to`. The data are centred
/// first so that rescaling the values rescales the result exactly.
fn transfer(from: &Array2<f64>, values: &Array1<f64>, to: &Array2<f64>, shape: Option<f64>, space: FitSpace) -> Result<Array1<f64>> {
    let out = match space {
        FitSpace::LogValues => {
            let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            let centre = logs.iter().sum::<f64>() / logs.len() as f64;
            let data: Vec<f64> = logs.iter().map(|l| l - centre).collect();
            let rbf = fit_points(from.view(), &data, shape, space)?;
            rbf.eval_rows(to.view())? * centre.exp()
        }
        FitSpace::Values => {
            let centre = values.mean().unwrap_or(1.0);
            let data: Vec<f64> = values.iter().map(|v| v / centre).collect();
            let rbf = fit_points(from.view(), &data, shape, space)?;
            rbf.eval_rows(to.view())? * centre
        }
    };
    Ok(out.mapv(|v| v.max(VALUE_FLOOR)))
}

/// Interpolation space selected by `interpolate_log`.
pub fn fit_space_of(config: &SbpConfig) -> FitSpace {
    if config.interpolate_log {
        FitSpace::LogValues
    } else {
        FitSpace::Values
    }
}

pub fn run_endpoint_fixed_point(
    model: &DriftModel,
    rho0: &GaussianMixture,
    rho1: &GaussianMixture,
    config: &SbpConfig,
) -> Result<FactorState> {
    run_endpoint_fixed_point_with(model, rho0, rho1, config, BridgeOptions::default(), |_| {})
}

/// Outer iteration. `observe` is called after every iteration.
pub fn run_endpoint_fixed_point_with(
    model: &DriftModel,
    rho0: &GaussianMixture,
    rho1: &GaussianMixture,
    config: &SbpConfig,
    options: BridgeOptions,
    mut observe: impl FnMut(&IterationRecord),
) -> Result<FactorState> {
    config.validate()?;
    model.validate()?;
    for (name, gm) in [("rho0", rho0), ("rho1", rho1)] {
        if gm.dim() != model.state_dim() {
            log::error!("{name} has dimension {}, the drift model {}", gm.dim(), model.state_dim());
            return Err(Error::DimensionMismatch { expected: model.state_dim(), got: gm.dim() });
        }
    }
    if !(options.initial_guess_scale.is_finite() && options.initial_guess_scale > 0.0) {
        return Err(Error::param("initial_guess_scale", "must be finite and positive"));
    }
    let supports = Supports::build(model, rho0, config)?;
    let k_steps = supports.steps();
    let x0 = &supports.x_path[0];
    let xk = &supports.x_path[k_steps];
    let y0 = &supports.y_path[0];
    let yk = &supports.y_path[k_steps];
    let rho0_x0 = rho0.pdf_rows(x0)?;
    let rho1_xk = rho1.pdf_rows(xk)?;
    let phi0_states = model.flip_velocity(yk);

    let phihat_flow = FlowSetup::new(model, config, config.tau);
    let p_flow = FlowSetup::new(model, config, config.sigma);
    let space = fit_space_of(config);

    let mut guess_rng = stream_rng(config.seed, streams::INITIAL_GUESS);
    let mut phihat1: Array1<f64> =
        (0..config.num_samples).map(|_| options.initial_guess_scale * guess_rng.random_range(0.1..1.1)).collect();

    let mut history: Vec<IterationRecord> = Vec::new();
    let mut prev_phihat0: Option<Array1<f64>> = None;
    let mut prev_p0: Option<Array1<f64>> = None;

    for iter in 1..=config.max_iter_sb {
        let started = Instant::now();
        let phi1 = ratio_with_floor(&rho1_xk, &phihat1);
        let p0 = factor_to_p(model, &WeightedCloud::new(xk.clone(), phi1.clone(), 1.0)?, config.epsilon)?;
        let p1_values = p_flow.run(&supports.y_path, p0.values().clone(), |_, _| {})?;
        let p1 = WeightedCloud::new(yk.clone(), p1_values, 1.0)?;
        let phi0 = p_to_factor(model, &p1, config.epsilon)?;
        let phi0_at_x0 = transfer(&phi0_states, phi0.values(), x0, config.rbf_shape, space)?;
        let phihat0 = ratio_with_floor(&rho0_x0, &phi0_at_x0);
        let next_phihat1 = phihat_flow.run(&supports.x_path, phihat0.clone(), |_, _| {})?;

        let residual_phihat0 = match &prev_phihat0 {
            Some(prev) => w2_squared(x0.view(), phihat0.view(), x0.view(), prev.view())?,
            None => f64::INFINITY,
        };
        let residual_p0 = match &prev_p0 {
            Some(prev) => w2_squared(y0.view(), p0.values().view(), y0.view(), prev.view())?,
            None => f64::INFINITY,
        };
        let record = IterationRecord {
            iter,
            residual_phihat0,
            residual_p0,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(last) = history.last() {
            if iter > 2 && (residual_phihat0 > last.residual_phihat0 || residual_p0 > last.residual_p0) {
                log::warn!(
                    "outer residuals increased at iteration {iter}: ({:.3e}, {:.3e}) after ({:.3e}, {:.3e})",
                    residual_phihat0,
                    residual_p0,
                    last.residual_phihat0,
                    last.residual_p0
                );
            }
        }
        log::info!("iteration {iter}: residuals ({residual_phihat0:.3e}, {residual_p0:.3e}) in {:.0} ms", record.wall_ms);
        observe(&record);
        history.push(record);

        let converged = residual_phihat0 < config.tol_sb && residual_p0 < config.tol_sb;
        let p0_values = p0.values().clone();
        if converged {
            return Ok(FactorState {
                phihat0: WeightedCloud::new(x0.clone(), phihat0, 0.0)?,
                phi1: WeightedCloud::new(xk.clone(), phi1, 1.0)?,
                phi0: WeightedCloud::new(x0.clone(), phi0_at_x0, 0.0)?,
                phihat1: WeightedCloud::new(xk.clone(), next_phihat1, 1.0)?,
                p0: p0.with_time(0.0)?,
                p1: p1.with_time(1.0)?,
                iteration: iter,
                residual_phihat0,
                residual_p0,
                history,
                supports,
            });
        }
        prev_phihat0 = Some(phihat0);
        prev_p0 = Some(p0_values);
        phihat1 = next_phihat1;
    }
    Err(Error::BridgeNotConverged {
        iterations: config.max_iter_sb,
        history: history.iter().map(|r| (r.residual_phihat0, r.residual_p0)).collect(),
    })
}

/// Factor sequences over the horizon.
#[derive(Debug, Clone)]
pub struct FactorTrajectory {
    /// `phihat_seq[k]` at `t = kτ` on `x_path[k]`.
    pub phihat_seq: Vec<WeightedCloud>,
    /// `phi_seq[k]` at `t = 1 - kσ` on the unflipped `y_path[k]`.
    pub phi_seq: Vec<WeightedCloud>,
    /// The forward density `p` at `s = kσ`.
    pub p_seq: Vec<WeightedCloud>,
    pub config: SbpConfig,
}

/// Reruns both flows from converged endpoint data, keeping every step.
pub fn compute_transient_factors(model: &DriftModel, state: &FactorState, config: &SbpConfig) -> Result<FactorTrajectory> {
    config.validate()?;
    let sup = &state.supports;
    if sup.steps() != config.num_steps {
        return Err(Error::param("num_steps", "does not match the supports of the converged state"));
    }
    let k_steps = sup.steps();
    let phihat_flow = FlowSetup::new(model, config, config.tau);
    let p_flow = FlowSetup::new(model, config, config.sigma);

    let run_phihat = || -> Result<Vec<WeightedCloud>> {
        let mut seq = Vec::with_capacity(k_steps + 1);
        let mut err = None;
        phihat_flow.run(&sup.x_path, state.phihat0.values().clone(), |k, v| {
            if err.is_none() {
                match WeightedCloud::new(sup.x_path[k].clone(), v.clone(), (k as f64 * config.tau).min(1.0)) {
                    Ok(c) => seq.push(c),
                    Err(e) => err = Some(e),
                }
            }
        })?;
        err.map_or(Ok(seq), Err)
    };
    let run_p = || -> Result<Vec<WeightedCloud>> {
        let mut seq = Vec::with_capacity(k_steps + 1);
        let mut err = None;
        p_flow.run(&sup.y_path, state.p0.values().clone(), |k, v| {
            if err.is_none() {
                match WeightedCloud::new(sup.y_path[k].clone(), v.clone(), (k as f64 * config.sigma).min(1.0)) {
                    Ok(c) => seq.push(c),
                    Err(e) => err = Some(e),
                }
            }
        })?;
        err.map_or(Ok(seq), Err)
    };
    let (phihat_seq, p_seq) = join(run_phihat, run_p);
    let phihat_seq = phihat_seq?;
    let p_seq = p_seq?;
    let phi_seq = p_seq.iter().map(|p| p_to_factor(model, p, config.epsilon)).collect::<Result<Vec<_>>>()?;
    Ok(FactorTrajectory { phihat_seq, phi_seq, p_seq, config: config.clone() })
}

#[cfg(feature = "parallel")]
fn join<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
fn join<A, B>(a: impl FnOnce() -> A, b: impl FnOnce() -> B) -> (A, B) {
    (a(), b())
}

impl FactorTrajectory {
    pub fn steps(&self) -> usize {
        self.phihat_seq.len() - 1
    }

    /// Step index of the `φ̂` sequence closest to time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        ((t * self.steps() as f64).round() as usize).min(self.steps())
    }

    /// `φ` cloud at the physical time of `phihat_seq[k]`.
    pub fn phi_at_step(&self, k: usize) -> &WeightedCloud {
        &self.phi_seq[self.steps() - k]
    }

    /// `φ` interpolated onto the `φ̂` support at step `k`.
    pub fn phi_on_phihat_support(&self, k: usize) -> Result<Array1<f64>> {
        let phi = self.phi_at_step(k);
        transfer(
            phi.states(),
            phi.values(),
            self.phihat_seq[k].states(),
            self.config.rbf_shape,
            fit_space_of(&self.config),
        )
    }

    /// `ρ = φ ⊙ φ̂` on the `φ̂` support at step `k`.
    pub fn density_at_step(&self, k: usize) -> Result<WeightedCloud> {
        let phi = self.phi_on_phihat_support(k)?;
        let phihat = &self.phihat_seq[k];
        phihat.with_values(&phi * phihat.values())
    }

    /// Largest relative change of the summed values over either flow.
    pub fn mass_drift(&self) -> f64 {
        let drift = |seq: &[WeightedCloud]| {
            let m0 = seq[0].total();
            seq.iter().map(|c| ((c.total() - m0) / m0).abs()).fold(0.0, f64::max)
        };
        drift(&self.phihat_seq).max(drift(&self.p_seq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::PolynomialPotential;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn zero_potential_gradient_leaves_values() {
        let model = DriftModel::gradient(PolynomialPotential::zero(2));
        let phi = WeightedCloud::new(array![[0.1, 0.2], [1.0, -3.0]], array![0.5, 2.0], 1.0).unwrap();
        let p = factor_to_p(&model, &phi, 0.7).unwrap();
        assert_eq!(p.values(), phi.values());
        assert_eq!(p.states(), phi.states());
        assert_eq!(p.time(), 0.0);
    }

    #[test]
    fn velocity_flip_example() {
        let model = DriftModel::mixed(PolynomialPotential::zero(1), 0.5).unwrap();
        let phi = WeightedCloud::new(array![[0.0, 1.0]], array![1.0], 1.0).unwrap();
        let p = factor_to_p(&model, &phi, 1.0).unwrap();
        assert_eq!(p.states(), &array![[0.0, -1.0]]);
        assert_relative_eq!(p.values()[0], (-0.5f64).exp(), epsilon = 1e-15);
        let back = p_to_factor(&model, &p, 1.0).unwrap();
        assert_eq!(back.states(), &array![[0.0, 1.0]]);
    }

    #[test]
    fn stationary_samples_map_to_unit_factor() {
        let model = DriftModel::gradient(PolynomialPotential::double_well());
        let states = array![[0.3, -1.0], [1.5, 0.2], [-0.7, 2.0]];
        let eps = 6.0;
        let values = model.energy_rows(&states).unwrap().mapv(|e| (-e / eps).exp());
        let p = WeightedCloud::new(states, values, 1.0).unwrap();
        let phi = p_to_factor(&model, &p, eps).unwrap();
        for v in phi.values() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-14);
        }
    }

    fn cloud_strategy(dim: usize) -> impl Strategy<Value = WeightedCloud> {
        (1usize..10).prop_flat_map(move |n| {
            (prop::collection::vec(-1.5f64..1.5, n * dim), prop::collection::vec(0.01f64..10.0, n)).prop_map(
                move |(x, v)| {
                    WeightedCloud::new(Array2::from_shape_vec((n, dim), x).unwrap(), Array1::from(v), 1.0).unwrap()
                },
            )
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(cloud in cloud_strategy(2), eps in 0.5f64..6.0, mixed in any::<bool>()) {
            let model = if mixed {
                DriftModel::mixed(PolynomialPotential::quartic(), 0.5).unwrap()
            } else {
                DriftModel::gradient(PolynomialPotential::double_well())
            };
            let p = factor_to_p(&model, &cloud, eps).unwrap();
            let back = p_to_factor(&model, &p, eps).unwrap();
            prop_assert_eq!(back.states(), cloud.states());
            for (a, b) in back.values().iter().zip(cloud.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
    }
}
