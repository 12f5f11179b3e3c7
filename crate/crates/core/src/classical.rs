//! Classical bridge with zero prior drift: heat-kernel Schrödinger system on
//! a uniform one-dimensional grid with trapezoidal quadrature.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::metrics::hilbert_metric;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    points: Array1<f64>,
    spacing: f64,
}

impl Grid1D {
    /// `count` equally spaced nodes on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::param("grid", "needs at least two points"));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::param("grid", format!("invalid bounds [{lo}, {hi}]")));
        }
        let spacing = (hi - lo) / (count - 1) as f64;
        let points = Array1::from_shape_fn(count, |i| lo + i as f64 * spacing);
        Ok(Self { points, spacing })
    }

    /// Checks that `points` is strictly increasing with uniform spacing.
    pub fn from_points(points: Array1<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::param("grid", "needs at least two points"));
        }
        let spacing = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        if !(spacing > 0.0) {
            return Err(Error::param("grid", "points must be strictly increasing"));
        }
        for w in points.windows(2) {
            if ((w[1] - w[0]) - spacing).abs() > 1e-12 * spacing.max(1.0) {
                return Err(Error::param("grid", "spacing is not uniform"));
            }
        }
        Ok(Self { points, spacing })
    }

    pub fn points(&self) -> &Array1<f64> {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Trapezoid weights.
    pub fn weights(&self) -> Array1<f64> {
        let g = self.len();
        Array1::from_shape_fn(g, |i| if i == 0 || i == g - 1 { 0.5 * self.spacing } else { self.spacing })
    }

    pub fn integrate(&self, f: ArrayView1<f64>) -> f64 {
        self.weights().dot(&f)
    }
}

/// `(4πε(t-s))^{-n/2} exp(-‖x-y‖² / (4ε(t-s)))`.
pub fn heat_kernel(t: f64, x: ArrayView1<f64>, s: f64, y: ArrayView1<f64>, epsilon: f64) -> Result<f64> {
    if !(t > s) {
        return Err(Error::param("t", format!("heat kernel needs t > s, got t = {t}, s = {s}")));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if !(epsilon > 0.0) {
        return Err(Error::param("epsilon", "must be positive"));
    }
    let d2: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let var = 4.0 * epsilon * (t - s);
    Ok((std::f64::consts::PI * var).powf(-0.5 * x.len() as f64) * (-d2 / var).exp())
}

fn heat_1d(dx: f64, dt: f64, epsilon: f64) -> f64 {
    let var = 4.0 * epsilon * dt;
    (std::f64::consts::PI * var).powf(-0.5) * (-dx * dx / var).exp()
}

/// Heat kernel over `dt` between grid nodes, with trapezoid weights applied on
/// the integration variable: `apply(f)ᵢ ≈ ∫K(xᵢ, y) f(y) dy` and
/// `apply_adjoint(f)ⱼ ≈ ∫K(x, yⱼ) f(x) dx`.
#[derive(Debug, Clone)]
pub struct QuadratureKernel {
    raw: Array2<f64>,
    weights: Array1<f64>,
}

impl QuadratureKernel {
    pub fn heat(grid: &Grid1D, epsilon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::param("dt", "must be positive"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        let p = grid.points();
        let raw = Array2::from_shape_fn((grid.len(), grid.len()), |(i, j)| heat_1d(p[i] - p[j], dt, epsilon));
        Ok(Self { raw, weights: grid.weights() })
    }

    pub fn apply(&self, f: ArrayView1<f64>) -> Array1<f64> {
        self.raw.dot(&(&self.weights * &f))
    }

    pub fn apply_adjoint(&self, f: ArrayView1<f64>) -> Array1<f64> {
        self.raw.t().dot(&(&self.weights * &f))
    }

    /// Kernel matrix with the quadrature weights folded into the columns.
    pub fn folded(&self) -> Array2<f64> {
        &self.raw * &self.weights.view().insert_axis(ndarray::Axis(0))
    }
}

#[derive(Debug, Clone)]
pub struct ClassicalSolution {
    pub phi1: Array1<f64>,
    pub phihat0: Array1<f64>,
    pub iterations: usize,
    /// Hilbert distance between successive `φ₁` iterates.
    pub residuals: Vec<f64>,
}

/// Fixed point of the discrete Schrödinger system
/// `φ̂₀ ⊙ K φ₁ = ρ₀`, `φ₁ ⊙ Kᵀ φ̂₀ = ρ₁`. The gauge is fixed by `Σ φ₁ = G`.
pub fn classical_fixed_point(
    rho0: ArrayView1<f64>,
    rho1: ArrayView1<f64>,
    kernel: &QuadratureKernel,
    tol: f64,
    max_iter: usize,
) -> Result<ClassicalSolution> {
    let g = kernel.weights.len();
    if rho0.len() != g || rho1.len() != g {
        return Err(Error::DimensionMismatch { expected: g, got: rho0.len().min(rho1.len()) });
    }
    if rho0.iter().chain(rho1.iter()).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::param("rho", "endpoint values must be finite and positive"));
    }
    let mut phi1 = Array1::<f64>::ones(g);
    let mut residuals = Vec::new();
    for it in 1..=max_iter {
        let phihat0 = &rho0 / &kernel.apply(phi1.view());
        let next = &rho1 / &kernel.apply_adjoint(phihat0.view());
        let r = hilbert_metric(next.view(), phi1.view())?;
        residuals.push(r);
        phi1 = next;
        if r < tol {
            let scale = g as f64 / phi1.sum();
            phi1 *= scale;
            let phihat0 = &rho0 / &kernel.apply(phi1.view());
            return Ok(ClassicalSolution { phi1, phihat0, iterations: it, residuals });
        }
    }
    Err(Error::FixedPointNotConverged { iterations: max_iter, residual: residuals.last().copied().unwrap_or(f64::NAN) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    /// Backward factor `φ`, propagated from its data at `t = 1`.
    Phi,
    /// Forward factor `φ̂`, propagated from its data at `t = 0`.
    PhiHat,
}

/// Factor at time `t` by quadrature of its endpoint data against the heat kernel.
/// Returns the endpoint data itself when the kernel width falls below the
/// grid resolution.
pub fn classical_propagate(
    grid: &Grid1D,
    kind: FactorKind,
    data: ArrayView1<f64>,
    epsilon: f64,
    t: f64,
) -> Result<Array1<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", format!("must lie in [0, 1], got {t}")));
    }
    if data.len() != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: data.len() });
    }
    let dt = match kind {
        FactorKind::Phi => 1.0 - t,
        FactorKind::PhiHat => t,
    };
    // Below this width the trapezoid rule no longer resolves the kernel.
    let min_dt = grid.spacing() * grid.spacing() / (8.0 * epsilon);
    if dt <= min_dt {
        return Ok(data.to_owned());
    }
    let k = QuadratureKernel::heat(grid, epsilon, dt)?;
    Ok(match kind {
        FactorKind::Phi => k.apply(data),
        FactorKind::PhiHat => k.apply_adjoint(data),
    })
}

/// `2ε ∂ₓ log φ` by central differences, one-sided at the ends.
pub fn classical_control(phi: ArrayView1<f64>, grid: &Grid1D, epsilon: f64) -> Result<Array1<f64>> {
    let g = phi.len();
    if g < 3 {
        return Err(Error::param("grid", "control recovery needs at least 3 points"));
    }
    if g != grid.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), got: g });
    }
    if phi.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::param("phi", "values must be positive"));
    }
    let l = phi.mapv(f64::ln);
    let h = grid.spacing();
    let mut out = Array1::zeros(g);
    out[0] = (l[1] - l[0]) / h;
    out[g - 1] = (l[g - 1] - l[g - 2]) / h;
    for i in 1..g - 1 {
        out[i] = (l[i + 1] - l[i - 1]) / (2.0 * h);
    }
    Ok(out * (2.0 * epsilon))
}

/// Linear interpolation of grid values, clamped at the ends.
pub fn interpolate_linear(grid: &Grid1D, values: ArrayView1<f64>, x: f64) -> f64 {
    let p = grid.points();
    let g = p.len();
    if x <= p[0] {
        return values[0];
    }
    if x >= p[g - 1] {
        return values[g - 1];
    }
    let s = (x - p[0]) / grid.spacing();
    let i = (s.floor() as usize).min(g - 2);
    let f = s - i as f64;
    values[i] * (1.0 - f) + values[i + 1] * f
}
