//! `bridgeflow solve`: endpoint fixed point, transient factors, density and
//! control snapshots.

use std::path::Path;

use bridgeflow::bridge::{fit_space_of, run_endpoint_fixed_point_with, BridgeOptions, IterationRecord};
use bridgeflow::recovery::{compose_density_with, control_field, TensorGrid};
use bridgeflow::{compute_transient_factors, FactorState, FactorTrajectory, WeightedCloud};
use ndarray::Array2;

use crate::config::Config;
use crate::output::{blob_hash, header, time_tag, OutputDir, RunManifest, Snapshot};
use crate::CliError;

pub struct SolveReport {
    pub state: FactorState,
    pub trajectory: FactorTrajectory,
    pub manifest: RunManifest,
}

pub(crate) fn base_manifest(command: &str, config: &Config, text: &str) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        status: "ok".into(),
        message: None,
        config_hash: blob_hash(text.as_bytes()),
        config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
        stage_times: Vec::new(),
        residuals: Vec::new(),
        snapshots: Vec::new(),
        files: Vec::new(),
    }
}

pub(crate) fn write_cloud(out: &mut OutputDir, rel: &str, cloud: &WeightedCloud) -> Result<(), CliError> {
    let rows = cloud
        .states()
        .rows()
        .into_iter()
        .zip(cloud.values().iter())
        .map(|(r, v)| r.iter().copied().chain(std::iter::once(*v)).collect::<Vec<f64>>());
    out.write_csv(rel, &header(cloud.dim(), &["value"]), rows)
}

fn grid_rows(nodes: &Array2<f64>, columns: &[&[f64]]) -> Vec<Vec<f64>> {
    nodes
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.iter().copied().chain(columns.iter().map(|c| c[i])).collect())
        .collect()
}

pub fn cmd_solve(config: &Config, text: &str, out_dir: &Path) -> Result<SolveReport, CliError> {
    let model = config.require_drift()?.clone();
    let ends = config.require_endpoints(model.state_dim())?.clone();
    let solver = config.require_solver()?.clone();
    let grid: TensorGrid = config.require_grid(model.state_dim())?.clone();
    config.check_snapshot_times()?;

    let mut out = OutputDir::create(out_dir)?;
    let mut man = base_manifest("solve", config, text);
    let mut records: Vec<IterationRecord> = Vec::new();

    let result = out.stage("fixed_point", |_| {
        run_endpoint_fixed_point_with(&model, &ends.rho0, &ends.rho1, &solver, BridgeOptions::default(), |r| {
            records.push(*r)
        })
    });
    out.write_jsonl("diagnostics.jsonl", &records)?;
    man.residuals = records.iter().filter_map(|r| serde_json::to_value(r).ok()).collect();
    let state = match result {
        Ok(s) => s,
        Err(e) => {
            let err = CliError::from(e);
            man.status = "failed".into();
            man.message = Some(err.to_string());
            out.finish(man)?;
            return Err(err);
        }
    };
    for (name, cloud) in [
        ("phihat0", &state.phihat0),
        ("phi0", &state.phi0),
        ("phi1", &state.phi1),
        ("phihat1", &state.phihat1),
        ("p0", &state.p0),
        ("p1", &state.p1),
    ] {
        write_cloud(&mut out, &format!("factors/{name}.csv"), cloud)?;
    }

    let trajectory = out.stage("transient", |_| compute_transient_factors(&model, &state, &solver))?;

    let nodes = grid.nodes();
    let space = fit_space_of(&solver);
    let snapshots = out.stage("snapshots", |out| -> Result<Vec<Snapshot>, CliError> {
        let mut snaps = Vec::new();
        for &t in &config.output.snapshot_times {
            let k = trajectory.index_at(t);
            let tag = time_tag(t);
            let phihat = &trajectory.phihat_seq[k];
            let phi = trajectory.phi_at_step(k);
            write_cloud(out, &format!("snapshots/phihat_{tag}.csv"), phihat)?;
            write_cloud(out, &format!("snapshots/phi_{tag}.csv"), phi)?;

            let density = compose_density_with(phi, phihat, nodes.view(), solver.rbf_shape, space)?;
            let density_file = format!("snapshots/density_{tag}.csv");
            let d = density.to_vec();
            out.write_csv(&density_file, &header(grid.dim(), &["value"]), grid_rows(&nodes, &[&d]))?;

            let ctl = control_field(phi, &model, solver.epsilon, &grid, solver.rbf_shape, space)?;
            let control_file = format!("snapshots/control_{tag}.csv");
            let cols: Vec<Vec<f64>> = ctl.values.columns().into_iter().map(|c| c.to_vec()).collect();
            let valid: Vec<f64> = ctl.valid.iter().map(|v| if *v { 1.0 } else { 0.0 }).collect();
            let mut refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            refs.push(&valid);
            let names: Vec<String> = (1..=cols.len()).map(|i| format!("u{i}")).collect();
            let mut extra: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
            extra.push("valid");
            out.write_csv(&control_file, &header(grid.dim(), &extra), grid_rows(&nodes, &refs))?;
            snaps.push(Snapshot { t, step: Some(k), density: Some(density_file), control: Some(control_file) });
        }
        Ok(snaps)
    })?;
    man.snapshots = snapshots;
    let manifest = out.finish(man)?;
    Ok(SolveReport { state, trajectory, manifest })
}
