//! Exact discrete 2-Wasserstein distance and Hilbert's projective metric.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::types::WeightedCloud;

/// Largest number of atoms per side accepted by the exact solver.
pub const EXACT_OT_CAP: usize = 2000;

/// `log(max(u/v) / min(u/v))`.
pub fn hilbert_metric(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (a, b) in u.iter().zip(v.iter()) {
        if !(*a > 0.0 && *b > 0.0) {
            return Err(Error::param("hilbert_metric", format!("entries must be positive, got ({a}, {b})")));
        }
        // Differences of logs keep the ratio finite when both entries are tiny.
        let r = a.ln() - b.ln();
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if u.is_empty() {
        return Ok(0.0);
    }
    Ok(hi - lo)
}

/// Hilbert metric between two vectors given by their logarithms.
pub fn hilbert_metric_log(log_u: ArrayView1<f64>, log_v: ArrayView1<f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (a, b) in log_u.iter().zip(log_v.iter()) {
        let r = a - b;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if lo > hi {
        0.0
    } else {
        hi - lo
    }
}

/// Optimal coupling of two discrete probability vectors.
#[derive(Debug, Clone)]
pub struct DiscreteOtPlan {
    pub cost: Array2<f64>,
    pub plan: Array2<f64>,
    pub objective: f64,
}

/// Squared Euclidean distances between the rows of `a` and the rows of `b`.
pub fn squared_distances(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
    }
    let mut out = Array2::zeros((a.nrows(), b.nrows()));
    crate::par::for_each_row(&mut out, |i, row| {
        let x = a.row(i);
        for (j, c) in row.iter_mut().enumerate() {
            *c = x.iter().zip(b.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
        }
    });
    Ok(out)
}

fn normalized(w: ArrayView1<f64>, what: &'static str) -> Result<Array1<f64>> {
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::param(what, "weights must be finite and nonnegative"));
    }
    let total: f64 = w.sum();
    if !(total > 0.0) {
        return Err(Error::param(what, "weights must have positive total"));
    }
    Ok(w.mapv(|x| x / total))
}

/// Solves `min ⟨cost, P⟩` over couplings `P` of the probability vectors `a`, `b`
/// (both normalized internally).
pub fn optimal_plan(a: ArrayView1<f64>, b: ArrayView1<f64>, cost: Array2<f64>) -> Result<DiscreteOtPlan> {
    let (n, m) = cost.dim();
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if n > EXACT_OT_CAP || m > EXACT_OT_CAP {
        return Err(Error::TransportTooLarge { rows: n, cols: m, cap: EXACT_OT_CAP });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::param("cost", "entries must be finite"));
    }
    let a = normalized(a, "a")?;
    let mut b = normalized(b, "b")?;
    // Absorb the rounding imbalance in the largest sink so supplies balance.
    let imbalance = a.sum() - b.sum();
    let jmax = b.iter().enumerate().fold(0, |best, (j, v)| if *v > b[best] { j } else { best });
    b[jmax] += imbalance;
    let cost_std = cost.as_standard_layout().into_owned();
    let flows = NetworkSimplex::new(a.as_slice().unwrap(), b.as_slice().unwrap(), cost_std.as_slice().unwrap()).solve();
    let plan = Array2::from_shape_vec((n, m), flows).expect("flow vector has n*m entries");
    let objective = plan.iter().zip(cost_std.iter()).map(|(p, c)| p * c).sum::<f64>().max(0.0);
    Ok(DiscreteOtPlan { cost, plan, objective })
}

/// Squared 2-Wasserstein distance between two weighted atom sets.
pub fn w2_squared(
    states_a: ArrayView2<f64>,
    weights_a: ArrayView1<f64>,
    states_b: ArrayView2<f64>,
    weights_b: ArrayView1<f64>,
) -> Result<f64> {
    if states_a.nrows() > EXACT_OT_CAP || states_b.nrows() > EXACT_OT_CAP {
        return Err(Error::TransportTooLarge { rows: states_a.nrows(), cols: states_b.nrows(), cap: EXACT_OT_CAP });
    }
    let cost = squared_distances(states_a, states_b)?;
    Ok(optimal_plan(weights_a, weights_b, cost)?.objective)
}

/// 2-Wasserstein distance between two clouds whose values are read as
/// (unnormalized) probability weights.
pub fn discrete_w2(cloud_a: &WeightedCloud, cloud_b: &WeightedCloud) -> Result<f64> {
    w2_squared(cloud_a.states().view(), cloud_a.values().view(), cloud_b.states().view(), cloud_b.values().view())
        .map(f64::sqrt)
}

/// One-sample Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s: Vec<f64> = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

// Primal network simplex for the uncapacitated transportation problem, with an
// artificial root and a strongly feasible spanning tree (the leaving arc is the
// last blocking arc met when traversing the pivot cycle from the entering
// arc's tail), which rules out cycling under degeneracy.
struct NetworkSimplex<'a> {
    rows: usize,
    cols: usize,
    cost: &'a [f64],
    art_cost: f64,
    // Arcs 0..rows*cols are real (i -> rows + j); then one artificial arc per node.
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    // True when the tree arc pred[v] is oriented v -> parent[v].
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    children: Vec<Vec<usize>>,
    next_arc: usize,
}

const NONE: usize = usize::MAX;

impl<'a> NetworkSimplex<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let rows = a.len();
        let cols = b.len();
        let nodes = rows + cols;
        let root = nodes;
        let real = rows * cols;
        let max_cost = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let art_cost = max_cost + 1.0;
        let mut flow = vec![0.0; real + nodes];
        let mut in_tree = vec![false; real + nodes];
        let mut parent = vec![NONE; nodes + 1];
        let mut pred = vec![NONE; nodes + 1];
        let mut up = vec![false; nodes + 1];
        let mut depth = vec![0; nodes + 1];
        let mut pi = vec![0.0; nodes + 1];
        let mut children = vec![Vec::new(); nodes + 1];
        for v in 0..nodes {
            let supply = if v < rows { a[v] } else { -b[v - rows] };
            let arc = real + v;
            parent[v] = root;
            pred[v] = arc;
            depth[v] = 1;
            in_tree[arc] = true;
            children[root].push(v);
            if supply >= 0.0 {
                up[v] = true;
                flow[arc] = supply;
                pi[v] = -art_cost;
            } else {
                up[v] = false;
                flow[arc] = -supply;
                pi[v] = art_cost;
            }
        }
        Self {
            rows,
            cols,
            cost,
            art_cost,
            flow,
            in_tree,
            parent,
            pred,
            up,
            depth,
            pi,
            children,
            next_arc: 0,
        }
    }

    fn real_arcs(&self) -> usize {
        self.rows * self.cols
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        if arc < self.real_arcs() {
            self.cost[arc]
        } else {
            self.art_cost
        }
    }

    fn reduced_cost(&self, arc: usize) -> f64 {
        let i = arc / self.cols;
        let j = self.rows + arc % self.cols;
        self.cost[arc] + self.pi[i] - self.pi[j]
    }

    // Block search pricing over the real arcs.
    fn find_entering(&mut self, tol: f64) -> Option<usize> {
        let m = self.real_arcs();
        let block = ((m as f64).sqrt() as usize).max(10).min(m);
        let mut best = NONE;
        let mut best_rc = -tol;
        let mut scanned = 0;
        let mut e = self.next_arc;
        let mut in_block = 0;
        while scanned < m {
            if !self.in_tree[e] {
                let rc = self.reduced_cost(e);
                if rc < best_rc {
                    best_rc = rc;
                    best = e;
                }
            }
            scanned += 1;
            in_block += 1;
            e += 1;
            if e == m {
                e = 0;
            }
            if in_block == block {
                if best != NONE {
                    self.next_arc = e;
                    return Some(best);
                }
                in_block = 0;
            }
        }
        if best != NONE {
            self.next_arc = e;
            Some(best)
        } else {
            None
        }
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while self.depth[u] > self.depth[v] {
            u = self.parent[u];
        }
        while self.depth[v] > self.depth[u] {
            v = self.parent[v];
        }
        while u != v {
            u = self.parent[u];
            v = self.parent[v];
        }
        u
    }

    fn pivot(&mut self, entering: usize) {
        let s = entering / self.cols;
        let t = self.rows + entering % self.cols;
        let join = self.join(s, t);

        // Ratio test. Flow travels parent -> child on the tail side and
        // child -> parent on the head side.
        let mut delta = f64::INFINITY;
        let mut leave_node = NONE;
        let mut on_tail_side = false;
        let mut u = s;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]].max(0.0);
                if d < delta {
                    delta = d;
                    leave_node = u;
                    on_tail_side = true;
                }
            }
            u = self.parent[u];
        }
        let mut u = t;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]].max(0.0);
                if d <= delta {
                    delta = d;
                    leave_node = u;
                    on_tail_side = false;
                }
            }
            u = self.parent[u];
        }
        debug_assert!(leave_node != NONE, "transportation problem cannot be unbounded");

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = s;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            let mut u = t;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }
        let leaving = self.pred[leave_node];
        self.flow[leaving] = 0.0;
        self.in_tree[leaving] = false;
        self.in_tree[entering] = true;

        // Detach the subtree at leave_node and hang it from the entering arc,
        // rerooted at the entering endpoint it contains.
        let (new_root, attach, new_root_up) = if on_tail_side { (s, t, true) } else { (t, s, false) };
        let old_parent = self.parent[leave_node];
        remove_child(&mut self.children[old_parent], leave_node);

        let mut path = vec![new_root];
        while *path.last().unwrap() != leave_node {
            let last = *path.last().unwrap();
            path.push(self.parent[last]);
        }
        for w in (1..path.len()).rev() {
            let child = path[w - 1];
            let node = path[w];
            remove_child(&mut self.children[node], child);
            self.children[child].push(node);
            self.parent[node] = child;
            self.pred[node] = self.pred[child];
            self.up[node] = !self.up[child];
        }
        self.parent[new_root] = attach;
        self.pred[new_root] = entering;
        self.up[new_root] = new_root_up;
        self.children[attach].push(new_root);

        // Recompute depth and potentials over the moved subtree from scratch so
        // rounding never accumulates in the potentials.
        let mut stack = vec![new_root];
        while let Some(v) = stack.pop() {
            let p = self.parent[v];
            self.depth[v] = self.depth[p] + 1;
            let c = self.arc_cost(self.pred[v]);
            self.pi[v] = if self.up[v] { self.pi[p] - c } else { self.pi[p] + c };
            stack.extend(self.children[v].iter().copied());
        }
    }

    fn solve(mut self) -> Vec<f64> {
        let tol = 1e-12 * self.art_cost;
        // Each nondegenerate pivot strictly decreases the objective and the
        // strongly feasible rule bounds degenerate runs; the cap is a safety net.
        let cap = 50 * (self.rows + self.cols) * (self.rows + self.cols) + 1000;
        let mut pivots = 0;
        while let Some(e) = self.find_entering(tol) {
            self.pivot(e);
            pivots += 1;
            if pivots > cap {
                log::warn!("network simplex stopped after {pivots} pivots");
                break;
            }
        }
        self.flow.truncate(self.real_arcs());
        self.flow.iter_mut().for_each(|f| *f = f.max(0.0));
        self.flow
    }
}

fn remove_child(list: &mut Vec<usize>, v: usize) {
    if let Some(pos) = list.iter().position(|&c| c == v) {
        list.swap_remove(pos);
    }
}
