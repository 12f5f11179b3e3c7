//! One entropy-regularized Wasserstein proximal step on a point cloud.
//!
//! Solves
//! `min_{φ>0} min_{M ∈ Π(a, φ)} ½⟨C, M⟩ + γ⟨M, log M⟩ + h⟨v + ε log φ, φ⟩`
//! through the scaling fixed point
//! `u ← a ⊘ Γw`, `w ← (ξ ⊘ Γᵀu)^{1/(1+γ/(hε))}` with `Γ = exp(-C/2γ)` and
//! `ξ = exp(-v/ε - 1 - γ/(2hε))`, then `φ = w ⊙ Γᵀu`, `M = diag(u) Γ diag(w)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::metrics::hilbert_metric_log;

/// Inputs are clamped to this floor before taking logarithms.
pub const VALUE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone)]
pub struct ProxProblem {
    /// `a`: factor values at the previous step.
    pub prev_values: Array1<f64>,
    /// `C[i, j]` between previous point `i` and next point `j`.
    pub cost: Array2<f64>,
    /// `v`: free-energy potential sampled at the previous points.
    pub potential: Array1<f64>,
    /// `h`: step multiplying the free energy.
    pub step: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl ProxProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.prev_values.len();
        if n == 0 {
            return Err(Error::param("prev_values", "must be non-empty"));
        }
        if self.cost.dim() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: self.cost.nrows().max(self.cost.ncols()) });
        }
        if self.potential.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.potential.len() });
        }
        for (name, v) in [("step", self.step), ("epsilon", self.epsilon), ("gamma", self.gamma)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(name, format!("must be finite and positive, got {v}")));
            }
        }
        if self.cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::param("cost", "entries must be finite and nonnegative"));
        }
        if self.potential.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("potential", "entries must be finite"));
        }
        if self.prev_values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("prev_values", "entries must be finite and nonnegative"));
        }
        Ok(())
    }

    /// `r = γ / (hε)`.
    pub fn ratio(&self) -> f64 {
        self.gamma / (self.step * self.epsilon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Evaluate kernel products with log-sum-exp instead of a row-shifted kernel.
    pub log_domain: bool,
    /// Materialize the coupling matrix in the solution.
    pub keep_coupling: bool,
}

impl ProxOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, max_iter, log_domain: false, keep_coupling: true }
    }
}

#[derive(Debug, Clone)]
pub struct ProxSolution {
    pub next_values: Array1<f64>,
    pub coupling: Option<Array2<f64>>,
    /// Logarithms of the scalings `u`, `w` (the scalings themselves can overflow).
    pub log_u: Array1<f64>,
    pub log_w: Array1<f64>,
    pub iterations: usize,
    /// Last relative change of the scalings.
    pub residual: f64,
    /// `‖M1 - a‖∞`.
    pub marginal_residual: f64,
    /// Hilbert distance between successive `w` iterates.
    pub contraction: Vec<f64>,
}

impl ProxSolution {
    pub fn dual_u(&self) -> Array1<f64> {
        self.log_u.mapv(f64::exp)
    }

    pub fn dual_w(&self) -> Array1<f64> {
        self.log_w.mapv(f64::exp)
    }
}

/// `C[i, j] = ‖x_prev[i] - x_next[j]‖²`.
pub fn cost_matrix_euclidean(x_prev: ArrayView2<f64>, x_next: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x_prev.nrows() != x_next.nrows() {
        return Err(Error::DimensionMismatch { expected: x_prev.nrows(), got: x_next.nrows() });
    }
    crate::metrics::squared_distances(x_prev, x_next)
}

/// Langevin transition cost
/// `s_h(x, x̄) = ‖η̄ - η + h∇V(ξ)‖² + 12‖(ξ̄ - ξ)/h - (η̄ + η)/2‖²`
/// with `x = (ξ, η)` taken from `x_prev` and `x̄ = (ξ̄, η̄)` from `x_next`.
pub fn cost_matrix_mixed(
    x_prev: ArrayView2<f64>,
    x_next: ArrayView2<f64>,
    h: f64,
    grad_v: impl Fn(ArrayView1<f64>) -> Array1<f64>,
) -> Result<Array2<f64>> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::param("h", format!("must be finite and positive, got {h}")));
    }
    if x_prev.ncols() != x_next.ncols() {
        return Err(Error::DimensionMismatch { expected: x_prev.ncols(), got: x_next.ncols() });
    }
    if x_prev.nrows() != x_next.nrows() {
        return Err(Error::DimensionMismatch { expected: x_prev.nrows(), got: x_next.nrows() });
    }
    if x_prev.ncols() % 2 != 0 {
        return Err(Error::param("states", "mixed states need an even number of coordinates"));
    }
    let m = x_prev.ncols() / 2;
    let grads: Vec<Array1<f64>> = x_prev.axis_iter(Axis(0)).map(|r| grad_v(r.slice(ndarray::s![..m]))).collect();
    if let Some(g) = grads.iter().find(|g| g.len() != m) {
        return Err(Error::DimensionMismatch { expected: m, got: g.len() });
    }
    let mut out = Array2::zeros((x_prev.nrows(), x_next.nrows()));
    crate::par::for_each_row(&mut out, |i, row| {
        let x = x_prev.row(i);
        let g = &grads[i];
        for (j, c) in row.iter_mut().enumerate() {
            let y = x_next.row(j);
            let mut first = 0.0;
            let mut second = 0.0;
            for k in 0..m {
                let (xi, eta) = (x[k], x[m + k]);
                let (xib, etab) = (y[k], y[m + k]);
                let d1 = etab - eta + h * g[k];
                let d2 = (xib - xi) / h - 0.5 * (etab + eta);
                first += d1 * d1;
                second += d2 * d2;
            }
            *c = first + 12.0 * second;
        }
    });
    Ok(out)
}

/// `Γ = exp(-C / 2γ)`.
pub fn gibbs_kernel(cost: ArrayView2<f64>, gamma: f64) -> Result<Array2<f64>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::param("gamma", format!("must be finite and positive, got {gamma}")));
    }
    Ok(cost.mapv(|c| (-c / (2.0 * gamma)).exp()))
}

/// Kernel with each row shifted by its minimum cost: returns `K̃` with
/// `Γ[i, j] = exp(-m_i / 2γ) K̃[i, j]` and the row minima `m`. Every row of
/// `K̃` has a unit entry, so no row underflows entirely.
pub fn gibbs_kernel_shifted(cost: ArrayView2<f64>, gamma: f64) -> (Array2<f64>, Array1<f64>) {
    let mins: Array1<f64> = cost.axis_iter(Axis(0)).map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let mut k = Array2::zeros(cost.dim());
    let scale = -1.0 / (2.0 * gamma);
    for ((mut out, row), m) in k.axis_iter_mut(Axis(0)).zip(cost.axis_iter(Axis(0))).zip(mins.iter()) {
        for (o, c) in out.iter_mut().zip(row.iter()) {
            *o = ((c - m) * scale).exp();
        }
    }
    (k, mins)
}

// Log-space products with Γ: log(Γ exp(x)) and log(Γᵀ exp(y)).
trait LogKernel {
    fn log_apply(&self, log_w: &Array1<f64>) -> Array1<f64>;
    fn log_apply_t(&self, log_u: &Array1<f64>) -> Array1<f64>;
    fn log_entry(&self, i: usize, j: usize) -> f64;
}

struct ShiftedKernel {
    k: Array2<f64>,
    // m_i / 2γ
    shift: Array1<f64>,
}

fn max_of(x: &Array1<f64>) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl LogKernel for ShiftedKernel {
    fn log_apply(&self, log_w: &Array1<f64>) -> Array1<f64> {
        let top = max_of(log_w);
        let w = log_w.mapv(|x| (x - top).exp());
        let kw = self.k.dot(&w);
        let mut out = kw.mapv(f64::ln);
        out.zip_mut_with(&self.shift, |o, s| *o += top - s);
        out
    }

    fn log_apply_t(&self, log_u: &Array1<f64>) -> Array1<f64> {
        let shifted = log_u - &self.shift;
        let top = max_of(&shifted);
        let u = shifted.mapv(|x| (x - top).exp());
        let ku = self.k.t().dot(&u);
        ku.mapv(|x| x.ln() + top)
    }

    fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.k[[i, j]].ln() - self.shift[i]
    }
}

struct LseKernel {
    // -C / 2γ
    log_k: Array2<f64>,
}

fn lse(iter: impl Iterator<Item = f64> + Clone) -> f64 {
    let top = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    top + iter.map(|x| (x - top).exp()).sum::<f64>().ln()
}

impl LogKernel for LseKernel {
    fn log_apply(&self, log_w: &Array1<f64>) -> Array1<f64> {
        self.log_k
            .axis_iter(Axis(0))
            .map(|row| lse(row.iter().zip(log_w.iter()).map(|(k, w)| k + w)))
            .collect()
    }

    fn log_apply_t(&self, log_u: &Array1<f64>) -> Array1<f64> {
        self.log_k
            .axis_iter(Axis(1))
            .map(|col| lse(col.iter().zip(log_u.iter()).map(|(k, u)| k + u)))
            .collect()
    }

    fn log_entry(&self, i: usize, j: usize) -> f64 {
        self.log_k[[i, j]]
    }
}

fn breakdown_check(x: &Array1<f64>, what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBreakdown(format!("non-finite {what}")))
    }
}

fn rel_change(new: &Array1<f64>, old: &Array1<f64>) -> f64 {
    new.iter().zip(old.iter()).map(|(a, b)| (a - b).exp_m1().abs()).fold(0.0, f64::max)
}

/// Proximal step with the row-shifted kernel.
pub fn prox_step(problem: &ProxProblem, tol_pr: f64, max_iter_pr: usize) -> Result<ProxSolution> {
    prox_step_with(problem, &ProxOptions::new(tol_pr, max_iter_pr))
}

pub fn prox_step_with(problem: &ProxProblem, opts: &ProxOptions) -> Result<ProxSolution> {
    problem.validate()?;
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::param("tol_pr", format!("must be finite and positive, got {}", opts.tol)));
    }
    if opts.max_iter == 0 {
        return Err(Error::param("max_iter_pr", "must be at least 1"));
    }
    if opts.log_domain {
        let log_k = problem.cost.mapv(|c| -c / (2.0 * problem.gamma));
        solve(problem, opts, &LseKernel { log_k })
    } else {
        let (k, mins) = gibbs_kernel_shifted(problem.cost.view(), problem.gamma);
        let shift = mins / (2.0 * problem.gamma);
        solve(problem, opts, &ShiftedKernel { k, shift })
    }
}

fn solve(problem: &ProxProblem, opts: &ProxOptions, kernel: &dyn LogKernel) -> Result<ProxSolution> {
    let n = problem.prev_values.len();
    let (eps, gamma, h) = (problem.epsilon, problem.gamma, problem.step);
    let r = problem.ratio();
    let mut clamped = 0;
    let log_a = problem.prev_values.mapv(|a| {
        if a < VALUE_FLOOR {
            clamped += 1;
            VALUE_FLOOR.ln()
        } else {
            a.ln()
        }
    });
    if clamped > 0 {
        log::warn!("clamped {clamped} previous values below {VALUE_FLOOR:e}");
    }
    let log_xi = problem.potential.mapv(|v| -v / eps - 1.0 - gamma / (2.0 * h * eps));

    let mut log_w = Array1::<f64>::zeros(n);
    let mut log_u = Array1::<f64>::from_elem(n, f64::NAN);
    let mut contraction = Vec::new();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let new_u = &log_a - &kernel.log_apply(&log_w);
        breakdown_check(&new_u, "u scaling")?;
        let lt = kernel.log_apply_t(&new_u);
        let new_w = (&log_xi - &lt) / (1.0 + r);
        breakdown_check(&new_w, "w scaling")?;
        contraction.push(hilbert_metric_log(new_w.view(), log_w.view()));
        let du = if iterations == 1 { f64::INFINITY } else { rel_change(&new_u, &log_u) };
        residual = du.max(rel_change(&new_w, &log_w));
        log_u = new_u;
        log_w = new_w;
        if residual < opts.tol {
            break;
        }
    }
    if residual >= opts.tol {
        return Err(Error::ProxNotConverged { iterations, residual });
    }

    // Closing u-update so the row marginal holds exactly.
    let gw = kernel.log_apply(&log_w);
    log_u = &log_a - &gw;
    breakdown_check(&log_u, "u scaling")?;
    let log_phi = &log_w + &kernel.log_apply_t(&log_u);
    breakdown_check(&log_phi, "next values")?;

    let mut underflow = 0;
    let next_values = log_phi.mapv(|l| {
        let v = l.exp();
        if v < VALUE_FLOOR {
            underflow += 1;
            VALUE_FLOOR
        } else {
            v
        }
    });
    if underflow > 0 {
        log::warn!("{underflow} next values underflowed and were clamped to {VALUE_FLOOR:e}");
    }
    let marginal_residual = log_u
        .iter()
        .zip(gw.iter())
        .zip(problem.prev_values.iter())
        .map(|((u, g), a)| ((u + g).exp() - a.max(VALUE_FLOOR)).abs())
        .fold(0.0, f64::max);
    let coupling = opts
        .keep_coupling
        .then(|| Array2::from_shape_fn((n, n), |(i, j)| (log_u[i] + kernel.log_entry(i, j) + log_w[j]).exp()));

    Ok(ProxSolution { next_values, coupling, log_u, log_w, iterations, residual, marginal_residual, contraction })
}

/// The proximal objective at a feasible `(M, φ)`.
pub fn prox_objective(problem: &ProxProblem, coupling: ArrayView2<f64>, phi: ArrayView1<f64>) -> f64 {
    let transport: f64 = coupling.iter().zip(problem.cost.iter()).map(|(m, c)| 0.5 * m * c).sum();
    let entropy: f64 = coupling.iter().map(|m| if *m > 0.0 { m * m.ln() } else { 0.0 }).sum();
    let free: f64 = phi
        .iter()
        .zip(problem.potential.iter())
        .map(|(p, v)| (v + problem.epsilon * p.ln()) * p)
        .sum();
    transport + problem.gamma * entropy + problem.step * free
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn problem(a: Array1<f64>, cost: Array2<f64>, v: Array1<f64>, h: f64, eps: f64) -> ProxProblem {
        ProxProblem { prev_values: a, cost, potential: v, step: h, epsilon: eps, gamma: 0.5 }
    }

    #[test]
    fn single_atom_keeps_its_mass() {
        for (v, h, eps) in [(0.0, 1e-3, 1.0), (3.0, 0.1, 6.0), (-1.0, 1.0, 0.2)] {
            let p = problem(array![1.0], array![[0.0]], array![v], h, eps);
            let s = prox_step(&p, 1e-12, 100).unwrap();
            assert_relative_eq!(s.next_values[0], 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn euclidean_cost_examples() {
        let x = array![[0.0, 1.0], [2.0, 3.0]];
        let c = cost_matrix_euclidean(x.view(), x.view()).unwrap();
        assert_eq!(c[[0, 0]], 0.0);
        assert_eq!(c[[1, 1]], 0.0);
        let c = cost_matrix_euclidean(array![[0.0]].view(), array![[3.0]].view()).unwrap();
        assert_eq!(c, array![[9.0]]);
        let a = array![[0.1, 0.2], [1.0, -1.0], [0.3, 0.7]];
        let b = array![[2.0, 0.0], [-0.5, 0.5], [0.0, 0.0]];
        let ab = cost_matrix_euclidean(a.view(), b.view()).unwrap();
        let ba = cost_matrix_euclidean(b.view(), a.view()).unwrap();
        assert_eq!(ab, ba.t());
        assert!(cost_matrix_euclidean(a.view(), array![[0.0, 0.0]].view()).is_err());
    }

    #[test]
    fn mixed_cost_examples() {
        let zero = |x: ArrayView1<f64>| Array1::zeros(x.len());
        // Coincident positions and velocities: 12‖η‖².
        let x = array![[0.4, 1.5]];
        let c = cost_matrix_mixed(x.view(), x.view(), 0.1, zero).unwrap();
        assert_relative_eq!(c[[0, 0]], 12.0 * 1.5 * 1.5, epsilon = 1e-12);
        // Zero velocities, same position: h²‖∇V‖².
        let g = |_x: ArrayView1<f64>| array![2.0];
        let x = array![[0.3, 0.0]];
        let c = cost_matrix_mixed(x.view(), x.view(), 0.1, g).unwrap();
        assert_relative_eq!(c[[0, 0]], 0.01 * 4.0, epsilon = 1e-14);
        // Free flight.
        let h = 0.05;
        let c = cost_matrix_mixed(array![[0.0, 0.8]].view(), array![[h * 0.8, 0.8]].view(), h, zero).unwrap();
        assert!(c[[0, 0]].abs() < 1e-24);
        assert!(cost_matrix_mixed(x.view(), x.view(), 0.0, zero).is_err());
    }

    #[test]
    fn gibbs_kernel_examples() {
        let k = gibbs_kernel(Array2::zeros((2, 3)).view(), 0.5).unwrap();
        assert!(k.iter().all(|v| *v == 1.0));
        let k = gibbs_kernel(array![[1.4]].view(), 0.7).unwrap();
        assert_relative_eq!(k[[0, 0]], (-1.0f64).exp(), epsilon = 1e-15);
        let cost = array![[0.5, 2.0], [3.0, 1.0]];
        let mut prev = gibbs_kernel(cost.view(), 0.1).unwrap();
        for gamma in [0.5, 1.0, 10.0, 1000.0] {
            let k = gibbs_kernel(cost.view(), gamma).unwrap();
            assert!(k.iter().zip(prev.iter()).all(|(a, b)| a >= b && *a <= 1.0));
            prev = k;
        }
        assert!(prev.iter().all(|v| (1.0 - v) < 2e-3));
    }

    fn random_problem(seed: u64, n: usize, h: f64, eps: f64) -> ProxProblem {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Array1::from_shape_fn(n, |_| rng.random_range(0.1..2.0));
        let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..10.0));
        let v = Array1::from_shape_fn(n, |_| rng.random_range(0.0..2.0));
        problem(a, cost, v, h, eps)
    }

    #[test]
    fn plain_and_log_domain_agree() {
        for seed in 0..10 {
            let p = random_problem(seed, 12, 1e-2, 1.0);
            let plain = prox_step(&p, 1e-12, 10_000).unwrap();
            let mut opts = ProxOptions::new(1e-12, 10_000);
            opts.log_domain = true;
            let logd = prox_step_with(&p, &opts).unwrap();
            for (x, y) in plain.next_values.iter().zip(logd.next_values.iter()) {
                assert_relative_eq!(x, y, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn marginals_and_mass() {
        let p = random_problem(7, 30, 1e-3, 6.0);
        let s = prox_step(&p, 1e-10, 1000).unwrap();
        let m = s.coupling.as_ref().unwrap();
        let rows = m.sum_axis(Axis(1));
        let cols = m.sum_axis(Axis(0));
        for (r, a) in rows.iter().zip(p.prev_values.iter()) {
            assert!((r - a).abs() <= 1e-10);
        }
        for (c, phi) in cols.iter().zip(s.next_values.iter()) {
            assert!((c - phi).abs() <= 1e-10);
        }
        assert!((s.next_values.sum() - p.prev_values.sum()).abs() <= 30.0 * 1e-10);
        assert!(s.marginal_residual <= 1e-10);
        assert!(m.iter().all(|v| *v > 0.0));
        assert!(s.log_u.iter().chain(s.log_w.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn scaling_the_input_scales_the_output() {
        let p = random_problem(3, 3, 1e-2, 1.0);
        let mut q = p.clone();
        q.prev_values *= 2.0;
        let a = prox_step(&p, 1e-13, 10_000).unwrap();
        let b = prox_step(&q, 1e-13, 10_000).unwrap();
        for (x, y) in a.next_values.iter().zip(b.next_values.iter()) {
            assert_relative_eq!(*y, 2.0 * x, max_relative = 1e-8);
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let p = random_problem(1, 20, 1.0, 1.0);
        match prox_step(&p, 1e-15, 2) {
            Err(Error::ProxNotConverged { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite() && residual > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn tiny_values_are_clamped() {
        let mut p = random_problem(2, 5, 1e-2, 1.0);
        p.prev_values[2] = 0.0;
        let s = prox_step(&p, 1e-10, 1000).unwrap();
        assert!(s.next_values.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn overflowing_potential_is_a_breakdown() {
        let mut p = random_problem(2, 4, 1e-3, 1e-3);
        p.potential[0] = 1e306;
        match prox_step(&p, 1e-8, 100) {
            Err(Error::NumericalBreakdown(msg)) => assert!(!msg.is_empty()),
            other => panic!("expected breakdown, got {other:?}"),
        }
        let err = Error::NumericalBreakdown("x".into());
        assert!(err.to_string().contains("consider larger γ"));
    }

    proptest! {
        #[test]
        fn outputs_positive_and_mass_conserved(
            seed in 0u64..10_000,
            n in 1usize..20,
            h in prop::sample::select(vec![1e-3, 1e-2, 1e-1]),
            eps in prop::sample::select(vec![0.5, 1.0, 6.0]),
        ) {
            let p = random_problem(seed, n, h, eps);
            let tol = 1e-9;
            let s = prox_step(&p, tol, 10_000).unwrap();
            prop_assert!(s.next_values.iter().all(|v| *v > 0.0));
            prop_assert!((s.next_values.sum() - p.prev_values.sum()).abs() <= n as f64 * tol);
            prop_assert!(s.marginal_residual <= tol);
        }
    }
}
