//! Multiquadric interpolation of factor clouds, density composition and
//! feedback-control recovery on tensor grids.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::drift::DriftModel;
use crate::error::{Error, Result};
use crate::types::WeightedCloud;

const MERGE_RADIUS: f64 = 1e-12;
const MAX_CONDITION: f64 = 1e12;
const REPRODUCTION_TOL: f64 = 1e-8;
/// Queries farther than this many cloud diameters from the centroid are rejected.
const HULL_FACTOR: f64 = 3.0;

/// Quantity the interpolant is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitSpace {
    /// The values themselves.
    #[default]
    Values,
    /// Their logarithm; evaluation exponentiates, so the result stays positive.
    LogValues,
}

#[derive(Debug, Clone)]
pub struct RbfInterpolant {
    centers: Array2<f64>,
    coefficients: Array1<f64>,
    shape: f64,
    space: FitSpace,
    centroid: Array1<f64>,
    diameter: f64,
    condition: f64,
}

impl RbfInterpolant {
    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    pub fn coefficients(&self) -> &Array1<f64> {
        &self.coefficients
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn space(&self) -> FitSpace {
        self.space
    }

    /// Condition number estimate of the interpolation matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    fn raw(&self, x: ArrayView1<f64>) -> f64 {
        let a2 = self.shape * self.shape;
        self.centers
            .axis_iter(Axis(0))
            .zip(self.coefficients.iter())
            .map(|(c, w)| {
                let r2: f64 = c.iter().zip(x.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
                w * (r2 + a2).sqrt()
            })
            .sum()
    }

    fn check_query(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.centers.ncols() {
            return Err(Error::DimensionMismatch { expected: self.centers.ncols(), got: x.len() });
        }
        let d: f64 = x.iter().zip(self.centroid.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        // A single center has zero diameter; fall back to the shape length.
        let reach = HULL_FACTOR * self.diameter.max(self.shape);
        if !(d <= reach) {
            return Err(Error::OutsideHull { point: x.to_vec() });
        }
        Ok(())
    }

    /// Value of the interpolated function at `x`.
    pub fn eval(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_query(x)?;
        let s = self.raw(x);
        Ok(match self.space {
            FitSpace::Values => s,
            FitSpace::LogValues => s.exp(),
        })
    }

    /// Logarithm of the interpolated function, `None` where it is not positive.
    pub fn eval_log(&self, x: ArrayView1<f64>) -> Result<Option<f64>> {
        self.check_query(x)?;
        let s = self.raw(x);
        Ok(match self.space {
            FitSpace::LogValues => Some(s),
            FitSpace::Values if s > 0.0 => Some(s.ln()),
            FitSpace::Values => None,
        })
    }

    pub fn eval_rows(&self, xs: ArrayView2<f64>) -> Result<Array1<f64>> {
        let out = crate::par::map_range(xs.nrows(), |i| self.eval(xs.row(i)));
        out.into_iter().collect::<Result<Vec<_>>>().map(Array1::from)
    }

    pub fn eval_log_rows(&self, xs: ArrayView2<f64>) -> Result<Vec<Option<f64>>> {
        crate::par::map_range(xs.nrows(), |i| self.eval_log(xs.row(i))).into_iter().collect()
    }
}

/// Median distance from each point to its nearest neighbour (1 for a single point).
pub fn median_nn_distance(points: ArrayView2<f64>) -> f64 {
    let n = points.nrows();
    if n < 2 {
        return 1.0;
    }
    let mut nn: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(points.row(i), points.row(j)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(|a, b| a.total_cmp(b));
    let med = if n % 2 == 1 { nn[n / 2] } else { 0.5 * (nn[n / 2 - 1] + nn[n / 2]) };
    if med > 0.0 {
        med
    } else {
        // All nearest-neighbour distances vanish only when points coincide.
        nn.iter().copied().find(|d| *d > 0.0).unwrap_or(1.0)
    }
}

fn dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

// Collapses centers closer than MERGE_RADIUS, averaging their data.
fn merge_duplicates(states: ArrayView2<f64>, data: &[f64]) -> (Array2<f64>, Vec<f64>) {
    let n = states.nrows();
    let mut rep: Vec<usize> = Vec::with_capacity(n);
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let mut owner = vec![usize::MAX; n];
    for i in 0..n {
        let hit = rep.iter().position(|&r| dist(states.row(i), states.row(r)) <= MERGE_RADIUS);
        match hit {
            Some(k) => {
                owner[i] = k;
                sums[k].0 += data[i];
                sums[k].1 += 1;
            }
            None => {
                owner[i] = rep.len();
                rep.push(i);
                sums.push((data[i], 1));
            }
        }
    }
    let centers = states.select(Axis(0), &rep);
    let values = sums.into_iter().map(|(s, c)| s / c as f64).collect();
    (centers, values)
}

/// Fits `s(x) = Σ cⱼ √(‖x - xⱼ‖² + a²)` to the cloud values.
pub fn rbf_fit(cloud: &WeightedCloud, shape: f64) -> Result<RbfInterpolant> {
    rbf_fit_with(cloud, Some(shape), FitSpace::Values)
}

/// Fits in the chosen space; `shape = None` selects the median nearest-neighbour distance.
pub fn rbf_fit_with(cloud: &WeightedCloud, shape: Option<f64>, space: FitSpace) -> Result<RbfInterpolant> {
    let data: Vec<f64> = match space {
        FitSpace::Values => cloud.values().to_vec(),
        FitSpace::LogValues => cloud.values().iter().map(|v| v.ln()).collect(),
    };
    fit_points(cloud.states().view(), &data, shape, space)
}

pub(crate) fn fit_points(
    states: ArrayView2<f64>,
    data: &[f64],
    shape: Option<f64>,
    space: FitSpace,
) -> Result<RbfInterpolant> {
    if states.nrows() == 0 {
        return Err(Error::InvalidCloud("cannot interpolate an empty cloud".into()));
    }
    let (centers, values) = merge_duplicates(states, data);
    let n = centers.nrows();
    let shape = match shape {
        Some(a) if a.is_finite() && a > 0.0 => a,
        Some(a) => return Err(Error::param("rbf_shape", format!("must be finite and positive, got {a}"))),
        None => median_nn_distance(centers.view()),
    };
    let a2 = shape * shape;
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        let r2: f64 = centers.row(i).iter().zip(centers.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        (r2 + a2).sqrt()
    });
    let sv = matrix.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let rhs = DVector::from_column_slice(&values);
    let lu = matrix.clone().lu();
    let mut coef = lu.solve(&rhs).ok_or(Error::IllConditioned { condition })?;
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let residual = |c: &DVector<f64>| (&rhs - &matrix * c).amax() / scale;
    if residual(&coef) > REPRODUCTION_TOL {
        let correction = lu.solve(&(&rhs - &matrix * &coef)).ok_or(Error::IllConditioned { condition })?;
        coef += correction;
    }
    let res = residual(&coef);
    if !(res <= REPRODUCTION_TOL) {
        log::warn!("multiquadric fit reproduces its data only to {res:.2e}");
    }
    let centroid = centers.mean_axis(Axis(0)).expect("non-empty");
    let mut diameter = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            diameter = diameter.max(dist(centers.row(i), centers.row(j)));
        }
    }
    Ok(RbfInterpolant {
        centers,
        coefficients: Array1::from(coef.as_slice().to_vec()),
        shape,
        space,
        centroid,
        diameter,
        condition,
    })
}

/// `φ ⊙ φ̂` at `queries`, clamped below at zero. Both clouds must be at the
/// same physical time.
pub fn compose_density(
    phi: &WeightedCloud,
    phihat: &WeightedCloud,
    queries: ArrayView2<f64>,
    shape: Option<f64>,
) -> Result<Array1<f64>> {
    compose_density_with(phi, phihat, queries, shape, FitSpace::Values)
}

pub fn compose_density_with(
    phi: &WeightedCloud,
    phihat: &WeightedCloud,
    queries: ArrayView2<f64>,
    shape: Option<f64>,
    space: FitSpace,
) -> Result<Array1<f64>> {
    let a = rbf_fit_with(phi, shape, space)?;
    let b = rbf_fit_with(phihat, shape, space)?;
    let va = a.eval_rows(queries)?;
    let vb = b.eval_rows(queries)?;
    Ok((&va * &vb).mapv(|v| v.max(0.0)))
}

/// Uniform tensor grid. Nodes are enumerated with the last axis fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl TensorGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let g = Self { lower, upper, counts };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lower.len();
        if d == 0 || self.upper.len() != d || self.counts.len() != d {
            return Err(Error::param("grid", "lower, upper and counts must have the same nonzero length"));
        }
        for k in 0..d {
            if !(self.lower[k].is_finite() && self.upper[k].is_finite() && self.upper[k] > self.lower[k]) {
                return Err(Error::param("grid", format!("axis {k} has invalid bounds")));
            }
            if self.counts[k] < 2 {
                return Err(Error::param("grid", format!("axis {k} needs at least 2 nodes")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.counts[k + 1];
        }
        s
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let strides = self.strides();
        strides.iter().zip(&self.counts).map(|(s, c)| (flat / s) % c).collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        self.strides().iter().zip(idx).map(|(s, i)| s * i).sum()
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing(axis)
    }

    /// All nodes, one per row.
    pub fn nodes(&self) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((self.len(), d));
        for (flat, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for (k, i) in self.multi_index(flat).into_iter().enumerate() {
                row[k] = self.coordinate(k, i);
            }
        }
        out
    }

    /// Multilinear interpolation weights at `x`, clamped to the grid box.
    pub fn stencil(&self, x: ArrayView1<f64>) -> Vec<(usize, f64)> {
        let d = self.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let h = self.spacing(k);
            let s = ((x[k] - self.lower[k]) / h).clamp(0.0, (self.counts[k] - 1) as f64);
            let i = (s.floor() as usize).min(self.counts[k] - 2);
            base[k] = i;
            frac[k] = s - i as f64;
        }
        let mut out = Vec::with_capacity(1 << d);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    idx[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w > 0.0 {
                out.push((self.flat_index(&idx), w));
            }
        }
        out
    }
}

/// Feedback control sampled on a tensor grid.
#[derive(Debug, Clone)]
pub struct ControlGrid {
    pub grid: TensorGrid,
    /// One row per node, `noise_dim` columns.
    pub values: Array2<f64>,
    /// False where the interpolated factor was not positive around the node.
    pub valid: Vec<bool>,
}

impl ControlGrid {
    /// Multilinear interpolation at `x` (clamped to the grid box).
    pub fn eval(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.grid.dim() {
            return Err(Error::DimensionMismatch { expected: self.grid.dim(), got: x.len() });
        }
        let mut out = Array1::zeros(self.values.ncols());
        for (node, w) in self.grid.stencil(x) {
            if w == 0.0 {
                continue;
            }
            if !self.valid[node] {
                return Err(Error::ControlEvaluation {
                    x: x.to_vec(),
                    t: f64::NAN,
                    reason: "control is invalid at a neighbouring grid node".into(),
                });
            }
            out.scaled_add(w, &self.values.row(node));
        }
        Ok(out)
    }

    /// Largest control norm over valid nodes.
    pub fn max_norm(&self) -> f64 {
        self.values
            .axis_iter(Axis(0))
            .zip(&self.valid)
            .filter(|(_, v)| **v)
            .map(|(r, _)| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Gradient of `log_phi` on the grid by central differences (one-sided at the
/// boundary) times `2ε`, restricted to the noise channel of `model`.
pub fn control_from_log_values(
    log_phi: &[Option<f64>],
    grid: &TensorGrid,
    model: &DriftModel,
    epsilon: f64,
) -> Result<ControlGrid> {
    grid.validate()?;
    if grid.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch { expected: model.state_dim(), got: grid.dim() });
    }
    if log_phi.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: log_phi.len() });
    }
    let offset = model.noise_offset();
    let cdim = model.noise_dim();
    let mut values = Array2::zeros((grid.len(), cdim));
    let mut valid = vec![true; grid.len()];
    for flat in 0..grid.len() {
        if log_phi[flat].is_none() {
            valid[flat] = false;
            continue;
        }
        let idx = grid.multi_index(flat);
        for c in 0..cdim {
            let axis = offset + c;
            let h = grid.spacing(axis);
            let i = idx[axis];
            let (lo, hi, span) = if i == 0 {
                (i, i + 1, h)
            } else if i == grid.counts[axis] - 1 {
                (i - 1, i, h)
            } else {
                (i - 1, i + 1, 2.0 * h)
            };
            let mut a = idx.clone();
            a[axis] = lo;
            let mut b = idx.clone();
            b[axis] = hi;
            match (log_phi[grid.flat_index(&a)], log_phi[grid.flat_index(&b)]) {
                (Some(la), Some(lb)) => values[[flat, c]] = 2.0 * epsilon * (lb - la) / span,
                _ => {
                    valid[flat] = false;
                    values[[flat, c]] = 0.0;
                }
            }
        }
    }
    let bad = valid.iter().filter(|v| !**v).count();
    if bad > 0 {
        log::warn!("control undefined at {bad} grid nodes (non-positive interpolated factor)");
    }
    Ok(ControlGrid { grid: grid.clone(), values, valid })
}

/// `2ε Bᵀ ∇ log φ` on `grid`, with `φ` interpolated from the cloud.
pub fn control_field(
    phi: &WeightedCloud,
    model: &DriftModel,
    epsilon: f64,
    grid: &TensorGrid,
    shape: Option<f64>,
    space: FitSpace,
) -> Result<ControlGrid> {
    let rbf = rbf_fit_with(phi, shape, space)?;
    let nodes = grid.nodes();
    let log_phi = rbf.eval_log_rows(nodes.view())?;
    control_from_log_values(&log_phi, grid, model, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::PolynomialPotential;
    use crate::types::stream_rng;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::Rng;

    fn cloud(states: Array2<f64>, values: Array1<f64>) -> WeightedCloud {
        WeightedCloud::new(states, values, 0.5).unwrap()
    }

    fn scattered(n: usize, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream_rng(seed, 0);
        Array2::from_shape_fn((n, dim), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn single_center_reproduces_datum() {
        let c = cloud(array![[0.3, -0.2]], array![4.2]);
        let f = rbf_fit(&c, 0.7).unwrap();
        assert_relative_eq!(f.eval(array![0.3, -0.2].view()).unwrap(), 4.2, max_relative = 1e-14);
    }

    #[test]
    fn reproduces_training_values() {
        let x = scattered(60, 2, 1);
        let v = x.axis_iter(Axis(0)).map(|r| 1.0 + (r[0] * r[1]).sin().powi(2)).collect::<Array1<f64>>();
        let c = cloud(x.clone(), v.clone());
        for space in [FitSpace::Values, FitSpace::LogValues] {
            let f = rbf_fit_with(&c, None, space).unwrap();
            for (r, t) in x.axis_iter(Axis(0)).zip(v.iter()) {
                assert!((f.eval(r).unwrap() - t).abs() <= 1e-8 * t.abs().max(1.0));
            }
        }
    }

    #[test]
    fn duplicates_are_merged() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [1.0, 1e-14], [0.0, 1.0]];
        let v = array![1.0, 2.0, 4.0, 3.0];
        let f = rbf_fit(&cloud(x, v), 0.5).unwrap();
        assert_eq!(f.centers().nrows(), 3);
        assert_relative_eq!(f.eval(array![1.0, 0.0].view()).unwrap(), 3.0, max_relative = 1e-10);
    }

    #[test]
    fn ill_conditioning_is_reported() {
        let x = scattered(40, 2, 2);
        let v = Array1::ones(40);
        assert!(matches!(rbf_fit(&cloud(x, v), 1e4), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn far_queries_are_rejected() {
        let x = scattered(20, 2, 3);
        let f = rbf_fit(&cloud(x, Array1::ones(20)), 0.5).unwrap();
        assert!(matches!(f.eval(array![100.0, 0.0].view()), Err(Error::OutsideHull { .. })));
    }

    fn gauss(r: ArrayView1<f64>) -> f64 {
        (-0.5 * r.dot(&r)).exp() / (2.0 * std::f64::consts::PI)
    }

    #[test]
    fn unit_factor_composition() {
        let x = scattered(80, 2, 4);
        let g = x.axis_iter(Axis(0)).map(gauss).collect::<Array1<f64>>();
        let phi = cloud(x.clone(), Array1::ones(80));
        let phihat = cloud(x.clone(), g.clone());
        let d = compose_density(&phi, &phihat, x.view(), None).unwrap();
        for (a, b) in d.iter().zip(g.iter()) {
            assert!((a - b).abs() < 1e-3);
        }
        let ones = compose_density(&phi, &phi, x.view(), None).unwrap();
        assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-8));
    }

    #[test]
    fn composition_is_symmetric() {
        let x = scattered(30, 2, 6);
        let y = scattered(25, 2, 7);
        let a = cloud(x.clone(), x.axis_iter(Axis(0)).map(gauss).collect());
        let b = cloud(y.clone(), y.axis_iter(Axis(0)).map(|r| 1.0 + r[0].abs()).collect());
        let q = scattered(15, 2, 8) * 0.5;
        let ab = compose_density(&a, &b, q.view(), None).unwrap();
        let ba = compose_density(&b, &a, q.view(), None).unwrap();
        for (p, r) in ab.iter().zip(ba.iter()) {
            assert_relative_eq!(p, r, max_relative = 1e-12);
        }
    }

    fn grid2() -> TensorGrid {
        TensorGrid::new(vec![-1.0, -1.0], vec![1.0, 1.0], vec![21, 21]).unwrap()
    }

    #[test]
    fn log_linear_factor_gives_constant_control() {
        let x = scattered(400, 2, 9);
        let a = [0.7, -0.4];
        let v = x.axis_iter(Axis(0)).map(|r| (a[0] * r[0] + a[1] * r[1]).exp()).collect();
        let phi = cloud(x, v);
        let model = DriftModel::gradient(PolynomialPotential::zero(2));
        let g = grid2();
        let ctl = control_field(&phi, &model, 0.5, &g, None, FitSpace::LogValues).unwrap();
        for flat in 0..g.len() {
            let idx = g.multi_index(flat);
            if idx.iter().all(|&i| i > 0 && i < 20) {
                // O(h²) with h = 0.1.
                assert!((ctl.values[[flat, 0]] - a[0]).abs() < 1e-2, "{} at {idx:?}", ctl.values[[flat, 0]]);
                assert!((ctl.values[[flat, 1]] - a[1]).abs() < 1e-2);
            }
        }
        // Without a polynomial tail constants are only approximated.
        let constant = cloud(scattered(400, 2, 10), Array1::from_elem(400, 2.0));
        let zero = control_field(&constant, &model, 0.5, &g, None, FitSpace::Values).unwrap();
        assert!(zero.max_norm() < 1e-2, "{}", zero.max_norm());
    }

    #[test]
    fn mixed_control_uses_velocity_block_only() {
        let model = DriftModel::mixed(PolynomialPotential::zero(1), 0.5).unwrap();
        let g = grid2();
        // log φ = 3ξ + η: the ξ slope must not reach the control.
        let log_phi: Vec<Option<f64>> = g.nodes().axis_iter(Axis(0)).map(|r| Some(3.0 * r[0] + r[1])).collect();
        let ctl = control_from_log_values(&log_phi, &g, &model, 0.25).unwrap();
        assert_eq!(ctl.values.ncols(), 1);
        for v in ctl.values.column(0) {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-12);
        }
        let log_phi2: Vec<Option<f64>> = g.nodes().axis_iter(Axis(0)).map(|r| Some(-7.0 * r[0] + r[1])).collect();
        let ctl2 = control_from_log_values(&log_phi2, &g, &model, 0.25).unwrap();
        for (p, q) in ctl.values.iter().zip(ctl2.values.iter()) {
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn control_is_linear_in_epsilon() {
        let model = DriftModel::gradient(PolynomialPotential::zero(2));
        let g = grid2();
        let log_phi: Vec<Option<f64>> = g.nodes().axis_iter(Axis(0)).map(|r| Some((r[0] * r[1]).sin())).collect();
        let a = control_from_log_values(&log_phi, &g, &model, 0.5).unwrap();
        let b = control_from_log_values(&log_phi, &g, &model, 1.5).unwrap();
        for (p, q) in a.values.iter().zip(b.values.iter()) {
            assert_relative_eq!(*q, 3.0 * p, max_relative = 1e-15);
        }
    }

    #[test]
    fn nonpositive_factor_marks_nodes_invalid() {
        let model = DriftModel::gradient(PolynomialPotential::zero(2));
        let g = grid2();
        let mut log_phi: Vec<Option<f64>> = vec![Some(0.0); g.len()];
        log_phi[g.flat_index(&[10, 10])] = None;
        let ctl = control_from_log_values(&log_phi, &g, &model, 0.5).unwrap();
        assert!(!ctl.valid[g.flat_index(&[9, 10])]);
        assert!(!ctl.valid[g.flat_index(&[10, 11])]);
        assert!(ctl.valid[g.flat_index(&[0, 0])]);
        assert!(ctl.eval(array![0.0, 0.0].view()).is_err());
        assert_eq!(ctl.max_norm(), 0.0);
    }

    #[test]
    fn grid_stencil_reproduces_linear_functions() {
        let g = TensorGrid::new(vec![-1.0, 0.0], vec![1.0, 2.0], vec![5, 9]).unwrap();
        let nodes = g.nodes();
        let f = nodes.axis_iter(Axis(0)).map(|r| 1.0 + 2.0 * r[0] - r[1]).collect::<Array1<f64>>();
        let x = array![0.13, 1.71];
        let v: f64 = g.stencil(x.view()).iter().map(|(i, w)| w * f[*i]).sum();
        assert_relative_eq!(v, 1.0 + 2.0 * 0.13 - 1.71, epsilon = 1e-12);
    }
}
