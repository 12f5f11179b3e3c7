mod oracles {
    pub mod fpk_fd;
}

use oracles::fpk_fd::{backward_kolmogorov, forward_fokker_planck, transform_error, FdGrid};

#[test]
fn backward_factor_equals_reweighted_forward_density() {
    let err = transform_error(1.0, 0.5);
    assert!(err < 1e-3, "relative error {err:e}");
}

#[test]
fn finite_difference_solvers_preserve_equilibria() {
    // Constants solve the backward equation; e^{-V/ε} solves the forward one.
    let grid = FdGrid::new(-5.0, 5.0, 0.02);
    let eps = 0.7;
    let ones = vec![1.0; grid.count];
    let back = backward_kolmogorov(&grid, |x| x, eps, &ones, 0.1, 1e-5);
    assert!(back.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let gibbs: Vec<f64> = grid.nodes().iter().map(|x| (-0.5 * x * x / eps).exp()).collect();
    let fwd = forward_fokker_planck(&grid, |x| x, eps, &gibbs, 0.1, 1e-5);
    for (i, (a, b)) in fwd.iter().zip(gibbs.iter()).enumerate() {
        let x = grid.x(i);
        if x.abs() < 3.0 {
            assert!((a - b).abs() < 1e-3 * b, "x={x}: {a} vs {b}");
        }
    }
}
