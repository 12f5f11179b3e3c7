//! Shared value types: weighted point clouds, Gaussian-mixture endpoint
//! densities, the solver parameter bundle and seeded random streams.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Random generator used by every stochastic operation. ChaCha streams give
/// independent, reproducible sub-generators from one master seed.
pub type SolverRng = ChaCha8Rng;

/// Builds the generator for `stream` of the master `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SolverRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// N scattered states with strictly positive function samples attached.
///
/// The values are samples of a density or of a Schrödinger factor at the
/// states, not particle masses.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCloud {
    states: Array2<f64>,
    values: Array1<f64>,
    time: f64,
}

impl WeightedCloud {
    pub fn new(states: Array2<f64>, values: Array1<f64>, time: f64) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::InvalidCloud("cloud must contain at least one point".into()));
        }
        if states.nrows() != values.len() {
            return Err(Error::DimensionMismatch { expected: states.nrows(), got: values.len() });
        }
        if !(0.0..=1.0).contains(&time) {
            return Err(Error::InvalidCloud(format!("time tag {time} outside [0, 1]")));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidCloud(format!(
                "value {} at index {i} is not finite and positive",
                values[i]
            )));
        }
        if states.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidCloud("state coordinates must be finite".into()));
        }
        Ok(Self { states, values, time })
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn total(&self) -> f64 {
        self.values.sum()
    }

    /// Values rescaled to sum to one.
    pub fn probability_weights(&self) -> Array1<f64> {
        &self.values / self.total()
    }

    pub fn with_values(&self, values: Array1<f64>) -> Result<Self> {
        Self::new(self.states.clone(), values, self.time)
    }

    pub fn with_time(mut self, time: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&time) {
            return Err(Error::InvalidCloud(format!("time tag {time} outside [0, 1]")));
        }
        self.time = time;
        Ok(self)
    }

    pub fn into_parts(self) -> (Array2<f64>, Array1<f64>, f64) {
        (self.states, self.values, self.time)
    }
}

/// Serialized form of a mixture, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
struct Component {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_norm: f64,
}

/// Finite Gaussian mixture `Σ cᵢ 𝒩(μᵢ, Σᵢ)` used for endpoint densities.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MixtureSpec", into = "MixtureSpec")]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidMixture("at least one component is required".into()));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::InvalidMixture(format!(
                "{} weights, {} means and {} covariances",
                weights.len(),
                means.len(),
                covariances.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidMixture("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidMixture("zero-dimensional mean".into()));
        }
        let mut components = Vec::with_capacity(weights.len());
        for (index, ((weight, mean), cov)) in weights.iter().zip(&means).zip(&covariances).enumerate() {
            if mean.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: mean.len() });
            }
            if cov.len() != dim || cov.iter().any(|row| row.len() != dim) {
                return Err(Error::InvalidMixture(format!("covariance {index} is not {dim}x{dim}")));
            }
            let covariance = DMatrix::from_fn(dim, dim, |i, j| cov[i][j]);
            let asym = (&covariance - covariance.transpose()).amax();
            if asym > 1e-12 * covariance.amax().max(1.0) {
                return Err(Error::InvalidMixture(format!("covariance {index} is not symmetric")));
            }
            let chol = covariance
                .clone()
                .cholesky()
                .ok_or(Error::DegenerateMixture { index })?
                .l();
            if chol.diagonal().iter().any(|d| !(d.is_finite() && *d > 0.0)) {
                return Err(Error::DegenerateMixture { index });
            }
            let log_det_half: f64 = chol.diagonal().iter().map(|d| d.ln()).sum();
            let log_norm = -0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_half;
            components.push(Component {
                weight: *weight,
                mean: DVector::from_column_slice(mean),
                covariance,
                chol,
                log_norm,
            });
        }
        Ok(Self { dim, components })
    }

    /// Single Gaussian component.
    pub fn gaussian(mean: Vec<f64>, covariance: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![covariance])
    }

    /// Single Gaussian with diagonal covariance.
    pub fn diagonal(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        Self::gaussian(mean, diag(variances))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn log_pdf(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let diff = DVector::from_iterator(self.dim, x.iter().zip(c.mean.iter()).map(|(a, b)| a - b));
                let z = c
                    .chol
                    .solve_lower_triangular(&diff)
                    .expect("cholesky factor has a positive diagonal");
                c.weight.ln() + c.log_norm - 0.5 * z.norm_squared()
            })
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Density `Σ cᵢ 𝒩(x; μᵢ, Σᵢ)`.
    pub fn pdf(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.log_pdf(x).map(f64::exp)
    }

    /// Evaluates the density at every row of `states`.
    pub fn pdf_rows(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        states.rows().into_iter().map(|r| self.pdf(r)).collect::<Result<Vec<_>>>().map(Array1::from)
    }

    pub fn log_pdf_rows(&self, states: &Array2<f64>) -> Result<Array1<f64>> {
        states.rows().into_iter().map(|r| self.log_pdf(r)).collect::<Result<Vec<_>>>().map(Array1::from)
    }

    /// Draws `count` i.i.d. samples, one per row.
    pub fn sample(&self, count: usize, rng: &mut SolverRng) -> Array2<f64> {
        let mut out = Array2::zeros((count, self.dim));
        let mut z = DVector::zeros(self.dim);
        for mut row in out.rows_mut() {
            let u: f64 = rand::Rng::random(rng);
            let mut acc = 0.0;
            let mut pick = self.components.len() - 1;
            for (k, c) in self.components.iter().enumerate() {
                acc += c.weight;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            let c = &self.components[pick];
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            let x = &c.mean + &c.chol * &z;
            for (dst, src) in row.iter_mut().zip(x.iter()) {
                *dst = *src;
            }
        }
        out
    }

    pub fn mean(&self) -> Array1<f64> {
        let mut m = Array1::zeros(self.dim);
        for c in &self.components {
            for (dst, src) in m.iter_mut().zip(c.mean.iter()) {
                *dst += c.weight * src;
            }
        }
        m
    }

    /// Marginal CDF of coordinate `axis` at `x`.
    pub fn marginal_cdf(&self, axis: usize, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let sd = c.covariance[(axis, axis)].sqrt();
                c.weight * normal_cdf((x - c.mean[axis]) / sd)
            })
            .sum()
    }
}

impl TryFrom<MixtureSpec> for GaussianMixture {
    type Error = Error;

    fn try_from(spec: MixtureSpec) -> Result<Self> {
        GaussianMixture::new(spec.weights, spec.means, spec.covariances)
    }
}

impl From<GaussianMixture> for MixtureSpec {
    fn from(gm: GaussianMixture) -> Self {
        MixtureSpec {
            weights: gm.components.iter().map(|c| c.weight).collect(),
            means: gm.components.iter().map(|c| c.mean.iter().copied().collect()).collect(),
            covariances: gm
                .components
                .iter()
                .map(|c| (0..gm.dim).map(|i| (0..gm.dim).map(|j| c.covariance[(i, j)]).collect()).collect())
                .collect(),
        }
    }
}

/// `mixture_pdf` in free-function form.
pub fn mixture_pdf(gm: &GaussianMixture, x: ArrayView1<f64>) -> Result<f64> {
    gm.pdf(x)
}

/// `mixture_sample` in free-function form.
pub fn mixture_sample(gm: &GaussianMixture, count: usize, rng: &mut SolverRng) -> Result<Array2<f64>> {
    if count == 0 {
        return Err(Error::param("count", "must be at least 1"));
    }
    Ok(gm.sample(count, rng))
}

pub fn diag(values: &[f64]) -> Vec<Vec<f64>> {
    (0..values.len())
        .map(|i| (0..values.len()).map(|j| if i == j { values[i] } else { 0.0 }).collect())
        .collect()
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

// Numerical Recipes erfc, relative error below 1.2e-7 everywhere.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98 + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Solver parameters. Time steps are per unit horizon, so
/// `tau * num_steps == 1` and `sigma * num_steps == 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbpConfig {
    pub epsilon: f64,
    pub gamma: f64,
    pub tau: f64,
    pub sigma: f64,
    pub num_samples: usize,
    pub num_steps: usize,
    pub tol_sb: f64,
    pub max_iter_sb: usize,
    pub tol_pr: f64,
    pub max_iter_pr: usize,
    #[serde(default)]
    pub seed: u64,
    /// Run the Sinkhorn iterations on log-scalings.
    #[serde(default)]
    pub log_domain: bool,
    /// Multiquadric shape parameter; median nearest-neighbour distance when absent.
    #[serde(default)]
    pub rbf_shape: Option<f64>,
    /// Interpolate factor clouds through their logarithm (keeps them positive).
    #[serde(default = "default_true")]
    pub interpolate_log: bool,
}

fn default_true() -> bool {
    true
}

impl SbpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite and positive, got {v}")))
            }
        };
        positive("epsilon", self.epsilon)?;
        positive("gamma", self.gamma)?;
        positive("tau", self.tau)?;
        positive("sigma", self.sigma)?;
        positive("tol_sb", self.tol_sb)?;
        positive("tol_pr", self.tol_pr)?;
        if let Some(shape) = self.rbf_shape {
            positive("rbf_shape", shape)?;
        }
        if self.num_samples == 0 {
            return Err(Error::param("num_samples", "must be at least 1"));
        }
        if self.num_steps == 0 {
            return Err(Error::param("num_steps", "must be at least 1"));
        }
        if self.max_iter_sb == 0 {
            return Err(Error::param("max_iter_sb", "must be at least 1"));
        }
        if self.max_iter_pr == 0 {
            return Err(Error::param("max_iter_pr", "must be at least 1"));
        }
        let steps = self.num_steps as f64;
        if (self.tau * steps - 1.0).abs() > 1e-9 {
            return Err(Error::param("tau", format!("tau * num_steps = {} but the horizon is 1", self.tau * steps)));
        }
        if (self.sigma * steps - 1.0).abs() > 1e-9 {
            return Err(Error::param(
                "sigma",
                format!("sigma * num_steps = {} but the horizon is 1", self.sigma * steps),
            ));
        }
        Ok(())
    }
}
