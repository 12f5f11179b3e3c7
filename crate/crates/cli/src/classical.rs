//! `bridgeflow classical`: the heat-kernel bridge between one-dimensional
//! endpoints on a uniform grid.

use std::path::Path;

use bridgeflow::classical::{
    classical_control, classical_fixed_point, classical_propagate, interpolate_linear, ClassicalSolution, FactorKind,
    QuadratureKernel,
};
use bridgeflow::sde::simulate_ensemble;
use bridgeflow::{stream_rng, DriftModel, Grid1D, PolynomialPotential};
use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use crate::config::Config;
use crate::output::{time_tag, OutputDir, RunManifest, Snapshot};
use crate::solve::base_manifest;
use crate::CliError;

pub struct ClassicalReport {
    pub grid: Grid1D,
    pub solution: ClassicalSolution,
    pub manifest: RunManifest,
}

#[derive(Serialize)]
struct ResidualRecord {
    iter: usize,
    hilbert: f64,
}

/// Bridge density `φ(t)·φ̂(t)` and control `2ε ∂ₓ log φ(t)` on the grid.
pub fn classical_snapshot(
    grid: &Grid1D,
    solution: &ClassicalSolution,
    epsilon: f64,
    t: f64,
) -> Result<(Array1<f64>, Array1<f64>), CliError> {
    let phi = classical_propagate(grid, FactorKind::Phi, solution.phi1.view(), epsilon, t)?;
    let phihat = classical_propagate(grid, FactorKind::PhiHat, solution.phihat0.view(), epsilon, t)?;
    let control = classical_control(phi.view(), grid, epsilon)?;
    Ok((&phi * &phihat, control))
}

/// Time resolution of the control table used by [`classical_paths`].
pub const CONTROL_TABLE_STEP: f64 = 0.01;

/// Closed-loop paths under the grid control, tabulated every
/// [`CONTROL_TABLE_STEP`] and interpolated linearly in time and space.
pub fn classical_paths(
    grid: &Grid1D,
    solution: &ClassicalSolution,
    rho0: &bridgeflow::GaussianMixture,
    epsilon: f64,
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<Array2<f64>>, CliError> {
    let nodes = (1.0 / CONTROL_TABLE_STEP.max(dt)).round() as usize;
    let step = 1.0 / nodes as f64;
    let table: Vec<Array1<f64>> = (0..=nodes)
        .map(|k| {
            let phi = classical_propagate(grid, FactorKind::Phi, solution.phi1.view(), epsilon, k as f64 * step)?;
            Ok(classical_control(phi.view(), grid, epsilon)?)
        })
        .collect::<Result<_, CliError>>()?;
    let control = |x: ArrayView1<f64>, t: f64| -> bridgeflow::Result<Array1<f64>> {
        let s = (t / step).clamp(0.0, nodes as f64);
        let k = (s.floor() as usize).min(nodes - 1);
        let w = s - k as f64;
        let a = interpolate_linear(grid, table[k].view(), x[0]);
        let b = interpolate_linear(grid, table[k + 1].view(), x[0]);
        Ok(Array1::from_elem(1, (1.0 - w) * a + w * b))
    };
    let model = DriftModel::gradient(PolynomialPotential::zero(1));
    let initial = rho0.sample(paths, &mut stream_rng(seed, 10));
    Ok(simulate_ensemble(&initial, &model, epsilon, &control, dt, 1.0, seed, 1000)?)
}

pub fn cmd_classical(config: &Config, text: &str, out_dir: &Path) -> Result<ClassicalReport, CliError> {
    let c = config.require_classical()?.clone();
    let ends = config.require_endpoints(1)?.clone();
    config.check_snapshot_times()?;
    let grid = Grid1D::uniform(c.lower, c.upper, c.points)?;
    let nodes = grid.points().clone().insert_axis(ndarray::Axis(1));
    let rho0 = ends.rho0.pdf_rows(&nodes)?;
    let rho1 = ends.rho1.pdf_rows(&nodes)?;

    let mut out = OutputDir::create(out_dir)?;
    let mut man = base_manifest("classical", config, text);
    let result = out.stage("fixed_point", |_| {
        let kernel = QuadratureKernel::heat(&grid, c.epsilon, 1.0)?;
        classical_fixed_point(rho0.view(), rho1.view(), &kernel, c.tol, c.max_iter)
    });
    let solution = match result {
        Ok(s) => s,
        Err(e) => {
            let err = CliError::from(e);
            man.status = "failed".into();
            man.message = Some(err.to_string());
            out.finish(man)?;
            return Err(err);
        }
    };
    let records: Vec<ResidualRecord> =
        solution.residuals.iter().enumerate().map(|(i, r)| ResidualRecord { iter: i + 1, hilbert: *r }).collect();
    out.write_jsonl("diagnostics.jsonl", &records)?;
    man.residuals = records.iter().filter_map(|r| serde_json::to_value(r).ok()).collect();

    let x = grid.points();
    let header = |cols: &[&str]| -> Vec<String> {
        std::iter::once("x").chain(cols.iter().copied()).map(String::from).collect()
    };
    let rows = (0..x.len()).map(|i| [x[i], solution.phi1[i], solution.phihat0[i]]);
    out.write_csv("factors.csv", &header(&["phi1", "phihat0"]), rows)?;

    let snaps = out.stage("snapshots", |out| -> Result<Vec<Snapshot>, CliError> {
        let mut snaps = Vec::new();
        for &t in &config.output.snapshot_times {
            let (density, control) = classical_snapshot(&grid, &solution, c.epsilon, t)?;
            let tag = time_tag(t);
            let density_file = format!("snapshots/density_{tag}.csv");
            let control_file = format!("snapshots/control_{tag}.csv");
            out.write_csv(&density_file, &header(&["value"]), (0..x.len()).map(|i| [x[i], density[i]]))?;
            out.write_csv(&control_file, &header(&["u1", "valid"]), (0..x.len()).map(|i| [x[i], control[i], 1.0]))?;
            snaps.push(Snapshot { t, step: None, density: Some(density_file), control: Some(control_file) });
        }
        Ok(snaps)
    })?;
    man.snapshots = snaps;

    if let Some(sim) = &config.simulate {
        let sim = config.require_simulate().map(|_| sim.clone())?;
        let paths = out.stage("paths", |_| {
            classical_paths(&grid, &solution, &ends.rho0, c.epsilon, sim.paths, sim.dt, sim.seed)
        })?;
        let steps = paths.first().map_or(0, |p| p.nrows());
        let mut header = vec!["t".to_string()];
        header.extend((0..paths.len()).map(|i| format!("path{i}")));
        let rows = (0..steps).map(|k| {
            std::iter::once(k as f64 * sim.dt).chain(paths.iter().map(|p| p[[k, 0]])).collect::<Vec<f64>>()
        });
        out.write_csv("paths.csv", &header, rows)?;
    }
    let manifest = out.finish(man)?;
    Ok(ClassicalReport { grid, solution, manifest })
}
