//! Euler-Maruyama propagation under the uncontrolled prior and under
//! closed-loop feedback control.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::types::{stream_rng, SolverRng};

/// Feedback law `u(x, t)`. Returns a vector of the model's noise dimension.
pub trait ControlField: Sync {
    fn control(&self, x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>>;
}

impl<F> ControlField for F
where
    F: Fn(ArrayView1<f64>, f64) -> Result<Array1<f64>> + Sync,
{
    fn control(&self, x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        self(x, t)
    }
}

/// `u ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroControl {
    pub dim: usize,
}

impl ControlField for ZeroControl {
    fn control(&self, _x: ArrayView1<f64>, _t: f64) -> Result<Array1<f64>> {
        Ok(Array1::zeros(self.dim))
    }
}

/// Noise amplitude per unit `√dt`: `√(2ε)` for gradient drift, `√(2εκ)` for mixed.
pub fn noise_scale(model: &DriftModel, epsilon: f64) -> f64 {
    match model.kappa() {
        None => (2.0 * epsilon).sqrt(),
        Some(kappa) => (2.0 * epsilon * kappa).sqrt(),
    }
}

fn check_step(epsilon: f64, dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::param("dt", format!("must be finite and positive, got {dt}")));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::param("epsilon", format!("must be finite and nonnegative, got {epsilon}")));
    }
    Ok(())
}

// x ← x + (f(x) + B u) dt + scale·√dt·B z
fn advance(
    model: &DriftModel,
    x: &mut [f64],
    drift: &mut [f64],
    control: Option<&[f64]>,
    dt: f64,
    scale: f64,
    rng: &mut SolverRng,
) {
    model.drift_into(ArrayView1::from(&*x), drift);
    let offset = model.noise_offset();
    let sq = dt.sqrt();
    for (i, (xi, fi)) in x.iter_mut().zip(drift.iter()).enumerate() {
        *xi += fi * dt;
        if i >= offset {
            if let Some(u) = control {
                *xi += u[i - offset] * dt;
            }
            let z: f64 = StandardNormal.sample(rng);
            *xi += scale * sq * z;
        }
    }
}

/// One Euler-Maruyama step of the prior SDE applied to every row of `states`.
///
/// Rows are advanced in order from a single generator so the result is a pure
/// function of the generator state.
pub fn em_step_prior(
    states: &Array2<f64>,
    model: &DriftModel,
    epsilon: f64,
    dt: f64,
    rng: &mut SolverRng,
) -> Result<Array2<f64>> {
    check_step(epsilon, dt)?;
    model.check_states(states)?;
    let scale = noise_scale(model, epsilon);
    let mut out = states.as_standard_layout().into_owned();
    let mut drift = vec![0.0; model.state_dim()];
    for mut row in out.axis_iter_mut(Axis(0)) {
        let x = row.as_slice_mut().expect("standard layout rows are contiguous");
        advance(model, x, &mut drift, None, dt, scale, rng);
    }
    Ok(out)
}

/// Applies `steps` prior steps and returns every intermediate cloud
/// (`steps + 1` matrices, the input first).
pub fn em_prior_path(
    states: &Array2<f64>,
    model: &DriftModel,
    epsilon: f64,
    dt: f64,
    steps: usize,
    rng: &mut SolverRng,
) -> Result<Vec<Array2<f64>>> {
    let mut path = Vec::with_capacity(steps + 1);
    path.push(states.clone());
    for _ in 0..steps {
        let next = em_step_prior(path.last().expect("path is non-empty"), model, epsilon, dt, rng)?;
        path.push(next);
    }
    Ok(path)
}

fn step_count(dt: f64, horizon: f64) -> Result<usize> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::param("horizon", format!("must be finite and positive, got {horizon}")));
    }
    let steps = (horizon / dt).round();
    if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::param("dt", format!("{dt} does not divide the horizon {horizon}")));
    }
    Ok(steps as usize)
}

/// Closed-loop path from `x0` over `[0, horizon]`. Row `k` is the state at `t = k·dt`.
pub fn em_path_controlled(
    x0: ArrayView1<f64>,
    model: &DriftModel,
    epsilon: f64,
    control: &dyn ControlField,
    dt: f64,
    horizon: f64,
    rng: &mut SolverRng,
) -> Result<Array2<f64>> {
    check_step(epsilon, dt)?;
    model.check_state(x0)?;
    let steps = step_count(dt, horizon)?;
    let n = model.state_dim();
    let scale = noise_scale(model, epsilon);
    let mut path = Array2::zeros((steps + 1, n));
    path.row_mut(0).assign(&x0);
    let mut x: Vec<f64> = x0.to_vec();
    let mut drift = vec![0.0; n];
    for k in 0..steps {
        let t = k as f64 * dt;
        let u = control.control(ArrayView1::from(&x[..]), t).map_err(|e| match e {
            Error::ControlEvaluation { .. } => e,
            other => Error::ControlEvaluation { x: x.clone(), t, reason: other.to_string() },
        })?;
        if u.len() != model.noise_dim() {
            return Err(Error::ControlEvaluation {
                x: x.clone(),
                t,
                reason: format!("control has dimension {}, expected {}", u.len(), model.noise_dim()),
            });
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::ControlEvaluation { x: x.clone(), t, reason: "non-finite control".into() });
        }
        advance(model, &mut x, &mut drift, u.as_slice(), dt, scale, rng);
        path.row_mut(k + 1).assign(&ArrayView1::from(&x[..]));
    }
    Ok(path)
}

/// Simulates one closed-loop path per row of `initial`. Path `i` draws its
/// noise from stream `stream_base + i` of `seed`, so results do not depend on
/// scheduling.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ensemble(
    initial: &Array2<f64>,
    model: &DriftModel,
    epsilon: f64,
    control: &dyn ControlField,
    dt: f64,
    horizon: f64,
    seed: u64,
    stream_base: u64,
) -> Result<Vec<Array2<f64>>> {
    model.check_states(initial)?;
    let run = |i: usize| {
        let mut rng = stream_rng(seed, stream_base + i as u64);
        em_path_controlled(initial.row(i), model, epsilon, control, dt, horizon, &mut rng)
    };
    crate::par::map_range(initial.nrows(), run).into_iter().collect()
}

/// Last row of every path.
pub fn terminal_states(paths: &[Array2<f64>]) -> Array2<f64> {
    let n = paths.first().map_or(0, |p| p.ncols());
    let mut out = Array2::zeros((paths.len(), n));
    for (mut row, p) in out.axis_iter_mut(Axis(0)).zip(paths) {
        row.assign(&p.row(p.nrows() - 1));
    }
    out
}
