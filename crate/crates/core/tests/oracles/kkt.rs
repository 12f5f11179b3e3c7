//! Primal Newton solver for the entropic proximal objective on tiny instances.
//!
//! Minimizes `½⟨C, M⟩ + γ Σ M log M + h Σ_j (v_j + ε log φ_j) φ_j` over
//! `M > 0` with row sums `a`, where `φ = Mᵀ1`. Equality-constrained Newton
//! with a fraction-to-boundary backtracking line search.

use nalgebra::{DMatrix, DVector};

pub struct Instance {
    pub a: Vec<f64>,
    pub cost: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub h: f64,
    pub eps: f64,
    pub gamma: f64,
}

impl Instance {
    fn n(&self) -> usize {
        self.a.len()
    }

    fn columns(&self, m: &[f64]) -> Vec<f64> {
        let n = self.n();
        (0..n).map(|j| (0..n).map(|i| m[i * n + j]).sum()).collect()
    }

    pub fn objective(&self, m: &[f64]) -> f64 {
        let n = self.n();
        let phi = self.columns(m);
        let mut f = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = m[i * n + j];
                f += 0.5 * self.cost[i][j] * x + self.gamma * x * x.ln();
            }
        }
        for j in 0..n {
            f += self.h * (self.v[j] + self.eps * phi[j].ln()) * phi[j];
        }
        f
    }

    fn gradient(&self, m: &[f64]) -> DVector<f64> {
        let n = self.n();
        let phi = self.columns(m);
        DVector::from_fn(n * n, |k, _| {
            let (i, j) = (k / n, k % n);
            0.5 * self.cost[i][j]
                + self.gamma * (m[k].ln() + 1.0)
                + self.h * (self.v[j] + self.eps * phi[j].ln() + self.eps)
        })
    }

    fn hessian(&self, m: &[f64]) -> DMatrix<f64> {
        let n = self.n();
        let phi = self.columns(m);
        DMatrix::from_fn(n * n, n * n, |p, q| {
            let (jp, jq) = (p % n, q % n);
            let mut hpq = if jp == jq { self.h * self.eps / phi[jp] } else { 0.0 };
            if p == q {
                hpq += self.gamma / m[p];
            }
            hpq
        })
    }

    /// Returns the minimizer `M` (row-major) and the objective value.
    pub fn solve(&self) -> (Vec<f64>, f64) {
        let n = self.n();
        let nn = n * n;
        let total: f64 = self.a.iter().sum();
        // Feasible start: independent coupling.
        let mut m: Vec<f64> = (0..nn).map(|k| self.a[k / n] * self.a[k % n] / total).collect();
        for _ in 0..200 {
            let g = self.gradient(&m);
            let hs = self.hessian(&m);
            let mut kkt = DMatrix::zeros(nn + n, nn + n);
            kkt.view_mut((0, 0), (nn, nn)).copy_from(&hs);
            for i in 0..n {
                for j in 0..n {
                    kkt[(nn + i, i * n + j)] = 1.0;
                    kkt[(i * n + j, nn + i)] = 1.0;
                }
            }
            let mut rhs = DVector::zeros(nn + n);
            rhs.rows_mut(0, nn).copy_from(&(-&g));
            let sol = kkt.lu().solve(&rhs).expect("nonsingular Newton system");
            let d = sol.rows(0, nn).into_owned();
            let decrement = -g.dot(&d);
            if decrement < 1e-22 {
                break;
            }
            let mut step = 1.0f64;
            for k in 0..nn {
                if d[k] < 0.0 {
                    step = step.min(-0.99 * m[k] / d[k]);
                }
            }
            let f0 = self.objective(&m);
            loop {
                let trial: Vec<f64> = (0..nn).map(|k| m[k] + step * d[k]).collect();
                if self.objective(&trial) <= f0 - 0.25 * step * decrement || step < 1e-14 {
                    m = trial;
                    break;
                }
                step *= 0.5;
            }
        }
        let f = self.objective(&m);
        (m, f)
    }
}

/// Instances with positive `a`, costs in `[0, 10]`, `v` in `[0, 2]`,
/// `h ∈ {1e-3, 1e-2}`, `ε ∈ {1, 6}` and `γ = 0.5`.
pub fn random_instances(rng: &mut impl rand::Rng, count: usize, n: usize) -> Vec<Instance> {
    (0..count)
        .map(|_| Instance {
            a: (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
            cost: (0..n).map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect()).collect(),
            v: (0..n).map(|_| rng.random_range(0.0..2.0)).collect(),
            h: if rng.random_bool(0.5) { 1e-3 } else { 1e-2 },
            eps: if rng.random_bool(0.5) { 1.0 } else { 6.0 },
            gamma: 0.5,
        })
        .collect()
}

/// Objective gap between the scaling fixed point and the Newton solution.
pub fn objective_gap(inst: &Instance, log_domain: bool) -> f64 {
    use bridgeflow::prox::{prox_objective, prox_step_with, ProxOptions, ProxProblem};
    use ndarray::{Array1, Array2};
    let n = inst.a.len();
    let problem = ProxProblem {
        prev_values: Array1::from(inst.a.clone()),
        cost: Array2::from_shape_fn((n, n), |(i, j)| inst.cost[i][j]),
        potential: Array1::from(inst.v.clone()),
        step: inst.h,
        epsilon: inst.eps,
        gamma: inst.gamma,
    };
    let opts = ProxOptions { tol: 1e-13, max_iter: 100_000, log_domain, keep_coupling: true };
    let sol = prox_step_with(&problem, &opts).expect("prox step converges");
    let coupling = sol.coupling.as_ref().expect("coupling kept");
    let ours = prox_objective(&problem, coupling.view(), sol.next_values.view());
    let (_, reference) = inst.solve();
    (ours - reference).abs()
}
