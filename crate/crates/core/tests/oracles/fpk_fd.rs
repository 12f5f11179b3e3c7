//! Explicit finite-difference solvers for the 1D backward Kolmogorov equation
//! and the forward Fokker-Planck equation of `dx = -V'(x) dt + √(2ε) dw`.

pub struct FdGrid {
    pub lo: f64,
    pub dx: f64,
    pub count: usize,
}

impl FdGrid {
    pub fn new(lo: f64, hi: f64, dx: f64) -> Self {
        let count = ((hi - lo) / dx).round() as usize + 1;
        Self { lo, dx, count }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.x(i)).collect()
    }
}

/// Backward equation `∂φ/∂t = V'·∂φ/∂x - ε ∂²φ/∂x²` from `φ(·, 1) = terminal`
/// down to `t = 1 - duration`. Boundary nodes keep their terminal values.
pub fn backward_kolmogorov(
    grid: &FdGrid,
    dv: impl Fn(f64) -> f64,
    eps: f64,
    terminal: &[f64],
    duration: f64,
    dt: f64,
) -> Vec<f64> {
    let steps = (duration / dt).round() as usize;
    let n = grid.count;
    let b: Vec<f64> = grid.nodes().into_iter().map(&dv).collect();
    let mut f = terminal.to_vec();
    let mut next = f.clone();
    let (dx, dx2) = (grid.dx, grid.dx * grid.dx);
    for _ in 0..steps {
        for i in 1..n - 1 {
            let fx = (f[i + 1] - f[i - 1]) / (2.0 * dx);
            let fxx = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / dx2;
            // Marching backwards in t: φ(t - dt) = φ(t) - dt ∂φ/∂t.
            next[i] = f[i] - dt * (b[i] * fx - eps * fxx);
        }
        std::mem::swap(&mut f, &mut next);
        next[0] = f[0];
        next[n - 1] = f[n - 1];
    }
    f
}

/// Forward equation `∂p/∂s = ∂(p V')/∂x + ε ∂²p/∂x²` from `p(·, 0) = initial`.
/// Boundary nodes keep their initial values.
pub fn forward_fokker_planck(
    grid: &FdGrid,
    dv: impl Fn(f64) -> f64,
    eps: f64,
    initial: &[f64],
    duration: f64,
    dt: f64,
) -> Vec<f64> {
    let steps = (duration / dt).round() as usize;
    let n = grid.count;
    let b: Vec<f64> = grid.nodes().into_iter().map(&dv).collect();
    let mut p = initial.to_vec();
    let mut next = p.clone();
    let (dx, dx2) = (grid.dx, grid.dx * grid.dx);
    for _ in 0..steps {
        for i in 1..n - 1 {
            let flux = (p[i + 1] * b[i + 1] - p[i - 1] * b[i - 1]) / (2.0 * dx);
            let pxx = (p[i + 1] - 2.0 * p[i] + p[i - 1]) / dx2;
            next[i] = p[i] + dt * (flux + eps * pxx);
        }
        std::mem::swap(&mut p, &mut next);
        next[0] = p[0];
        next[n - 1] = p[n - 1];
    }
    p
}

/// Relative ∞-error on `|x| ≤ 3` between the backward solution at `t = 1 - s`
/// and `e^{V/ε}` times the forward solution at `s`, for `V = ½x²`. The
/// change of variables goes through the library's `factor_to_p`/`p_to_factor`.
pub fn transform_error(eps: f64, s: f64) -> f64 {
    use bridgeflow::bridge::{factor_to_p, p_to_factor};
    use bridgeflow::{DriftModel, PolynomialPotential, WeightedCloud};
    use ndarray::{Array1, Array2};

    let grid = FdGrid::new(-6.0, 6.0, 0.02);
    let dt = 1e-5;
    let nodes = grid.nodes();
    let terminal: Vec<f64> = nodes.iter().map(|x| 1.0 + 0.5 * (-(x - 0.5) * (x - 0.5)).exp()).collect();
    let model = DriftModel::gradient(PolynomialPotential::quadratic(1));
    let states = Array2::from_shape_vec((nodes.len(), 1), nodes.clone()).unwrap();

    let phi1 = WeightedCloud::new(states.clone(), Array1::from(terminal.clone()), 1.0).unwrap();
    let p0 = factor_to_p(&model, &phi1, eps).unwrap();
    let ps = forward_fokker_planck(&grid, |x| x, eps, p0.values().as_slice().unwrap(), s, dt);
    let p_cloud = WeightedCloud::new(states, Array1::from(ps), s).unwrap();
    let via_p = p_to_factor(&model, &p_cloud, eps).unwrap();

    let direct = backward_kolmogorov(&grid, |x| x, eps, &terminal, s, dt);
    nodes
        .iter()
        .enumerate()
        .filter(|(_, x)| x.abs() <= 3.0)
        .map(|(i, _)| ((via_p.values()[i] - direct[i]) / direct[i]).abs())
        .fold(0.0, f64::max)
}
