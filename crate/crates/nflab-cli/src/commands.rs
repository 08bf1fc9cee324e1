//! Subcommand implementations: simulate, diagnose, scaling-test, sweep.

use crate::config::RunConfig;
use crate::CliError;
use nflab::analysis::{
    cylinder_quantities, morrey_norm, uloc_norm_scalar, uloc_norm_vector, Cylinder, MorreyParams,
    SpaceTimeScalar, UlocParams,
};
use nflab::dynamics::{run_simulation, BlowupInfo, Trajectory};
use nflab::io::{self, Snapshot};
use nflab::scaling::{invariance_report, RescaleSpec};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Serialize)]
struct RunSummary {
    status: String,
    blowup: Option<BlowupInfo>,
    final_time: f64,
    final_e3: f64,
    max_uloc3: f64,
    max_cfl: f64,
    saves: usize,
}

fn write_artifacts(
    out: &Path,
    config: &RunConfig,
    traj: &Trajectory,
    blowup: &Option<BlowupInfo>,
    save_fields: bool,
) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    let echo = toml::to_string_pretty(config)
        .map_err(|e| CliError::Io(format!("config echo failed: {e}")))?;
    std::fs::write(out.join("config_echo.toml"), echo)?;
    io::write_ledger(&out.join("ledger.csv"), traj.ledger())?;
    io::write_json(&out.join("events.json"), &traj.events().to_vec())?;
    if save_fields {
        for (i, state) in traj.states().iter().enumerate() {
            io::save_state(&out.join("snapshots").join(format!("save_{i:06}")), state)?;
        }
    }
    let entries = traj.ledger().entries();
    let summary = RunSummary {
        status: if blowup.is_some() { "blew_up" } else { "completed" }.into(),
        blowup: blowup.clone(),
        final_time: traj.end_time(),
        final_e3: entries.last().map(|e| e.e3).unwrap_or(0.0),
        max_uloc3: entries.iter().map(|e| e.uloc3).fold(0.0, f64::max),
        max_cfl: traj.max_cfl,
        saves: traj.states().len(),
    };
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(())
}

fn run_config(config: &RunConfig) -> Result<(Trajectory, Option<BlowupInfo>), CliError> {
    let state = config.initial_state()?;
    let grid = state.grid();
    let cfg = config.scheme_config();
    let opts = config.sim_options(grid, state.time);
    let outcome = run_simulation(&state, &cfg, &opts)?;
    Ok((outcome.trajectory, outcome.blowup))
}

pub fn simulate(config_path: &Path, out: &Path, quiet: bool) -> Result<i32, CliError> {
    let config = RunConfig::load(config_path)?;
    let (traj, blowup) = run_config(&config)?;
    write_artifacts(out, &config, &traj, &blowup, config.run.save_fields)?;
    if !quiet {
        println!(
            "{} saves, t = {}, advisory max CFL = {:.3}",
            traj.states().len(),
            traj.end_time(),
            traj.max_cfl
        );
        if traj.max_cfl > 0.5 {
            println!("advisory: max|u| dt / h exceeded 0.5; consider a smaller dt");
        }
        if let Some(info) = &blowup {
            println!("blow-up detected at t = {}: {}", info.time, info.reason);
        }
    }
    Ok(if blowup.is_some() { 2 } else { 0 })
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnoseFile {
    diagnose: DiagnoseSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagnoseSection {
    /// uloc | cylinder | morrey
    kind: String,
    /// Snapshot file (uloc) or a simulate output directory (cylinder, morrey).
    input: PathBuf,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default = "default_stride")]
    stride: usize,
    #[serde(default)]
    cylinders: Vec<crate::config::CylinderSection>,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    radii: Vec<f64>,
    /// velocity | director_gradient (morrey data selector)
    #[serde(default = "default_selector")]
    selector: String,
}

fn default_stride() -> usize {
    2
}
fn default_selector() -> String {
    "velocity".into()
}

/// Reads a trajectory back from a simulate output directory.
fn load_trajectory(dir: &Path) -> Result<Trajectory, CliError> {
    let echo_path = dir.join("config_echo.toml");
    let text = std::fs::read_to_string(&echo_path).map_err(|e| {
        CliError::Io(format!("cannot read {}: {e}", echo_path.display()))
    })?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", echo_path.display())))?;
    let grid = config.grid()?;

    let snap_root = dir.join("snapshots");
    let mut save_dirs: Vec<PathBuf> = std::fs::read_dir(&snap_root)
        .map_err(|e| CliError::Io(format!("cannot list {}: {e}", snap_root.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    save_dirs.sort();
    let states = save_dirs
        .iter()
        .map(|d| io::load_state(d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Trajectory::from_states(
        states,
        config.scheme_config(),
        &config.ledger_params(grid),
    )?)
}

#[derive(Debug, Serialize)]
struct UlocReport {
    input: PathBuf,
    radius: f64,
    stride: usize,
    value: f64,
    center: [f64; 3],
}

pub fn diagnose(config_path: &Path, out: &Path, quiet: bool) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let file: DiagnoseFile = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;
    let spec = file.diagnose;
    std::fs::create_dir_all(out)?;

    match spec.kind.as_str() {
        "uloc" => {
            let radius = spec
                .radius
                .ok_or_else(|| CliError::Config("[diagnose] uloc needs `radius`".into()))?;
            let params = UlocParams {
                radius,
                stride: spec.stride,
            };
            let result = match io::read_snapshot(&spec.input)? {
                Snapshot::Scalar { field, .. } => uloc_norm_scalar(&field, &params)?,
                Snapshot::Vector { field, .. } | Snapshot::Director { field, .. } => {
                    uloc_norm_vector(&field, &params)?
                }
                Snapshot::Spectral { .. } => {
                    return Err(CliError::Config(
                        "[diagnose] uloc expects a physical-space snapshot".into(),
                    ))
                }
            };
            let report = UlocReport {
                input: spec.input.clone(),
                radius,
                stride: spec.stride,
                value: result.value,
                center: result.center,
            };
            io::write_json(&out.join("uloc.json"), &report)?;
            if !quiet {
                println!("uloc({}) = {}", radius, result.value);
            }
        }
        "cylinder" => {
            if spec.cylinders.is_empty() {
                return Err(CliError::Config(
                    "[diagnose] cylinder needs at least one [[diagnose.cylinders]]".into(),
                ));
            }
            let traj = load_trajectory(&spec.input)?;
            #[derive(Serialize)]
            struct Entry {
                cylinder: Cylinder,
                q_u: f64,
                q_p: f64,
                q_gradd: f64,
                total: f64,
            }
            let mut entries = Vec::new();
            for c in &spec.cylinders {
                let cyl: Cylinder = c.into();
                let q = cylinder_quantities(&traj, &cyl)?;
                entries.push(Entry {
                    total: q.total(),
                    q_u: q.q_u,
                    q_p: q.q_p,
                    q_gradd: q.q_gradd,
                    cylinder: cyl,
                });
            }
            io::write_json(&out.join("cylinders.json"), &entries)?;
            if !quiet {
                println!("{} cylinder(s) evaluated", entries.len());
            }
        }
        "morrey" => {
            let traj = load_trajectory(&spec.input)?;
            let data = match spec.selector.as_str() {
                "velocity" => SpaceTimeScalar::velocity_magnitude(&traj),
                "director_gradient" => SpaceTimeScalar::director_gradient_magnitude(&traj),
                other => {
                    return Err(CliError::Config(format!(
                        "[diagnose] unknown morrey selector `{other}`"
                    )))
                }
            };
            let params = MorreyParams {
                p: spec
                    .p
                    .ok_or_else(|| CliError::Config("[diagnose] morrey needs `p`".into()))?,
                lambda: spec
                    .lambda
                    .ok_or_else(|| CliError::Config("[diagnose] morrey needs `lambda`".into()))?,
                radii: if spec.radii.is_empty() {
                    return Err(CliError::Config("[diagnose] morrey needs `radii`".into()));
                } else {
                    spec.radii.clone()
                },
                stride: spec.stride,
            };
            let report = morrey_norm(&data, &params)?;
            io::write_json(&out.join("morrey.json"), &report)?;
            if !quiet {
                println!("morrey norm = {}", report.value);
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "[diagnose] unknown diagnostic `{other}`"
            )))
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// scaling-test
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ScalingSummaryEntry {
    lambda: f64,
    status: String,
    max_rel_dev: Option<f64>,
    report_file: Option<String>,
}

pub fn scaling_test(
    config_path: &Path,
    out: &Path,
    lambdas: &[f64],
    quiet: bool,
) -> Result<i32, CliError> {
    let config = RunConfig::load(config_path)?;
    let (traj, blowup) = run_config(&config)?;
    if blowup.is_some() {
        return Err(CliError::Io(
            "the base run blew up; no trajectory to rescale".into(),
        ));
    }
    std::fs::create_dir_all(out)?;
    let cylinders: Vec<Cylinder> = config.monitors.cylinders.iter().map(Cylinder::from).collect();

    let mut summary = Vec::new();
    for (i, &lambda) in lambdas.iter().enumerate() {
        match invariance_report(&traj, &RescaleSpec::exact(lambda), &cylinders) {
            Ok(report) => {
                let file = format!("scaling_{i}.json");
                io::write_json(&out.join(&file), &report)?;
                if !quiet {
                    println!("lambda = {lambda}: max relative deviation {:.3e}", report.max_rel_dev);
                }
                summary.push(ScalingSummaryEntry {
                    lambda,
                    status: "ok".into(),
                    max_rel_dev: Some(report.max_rel_dev),
                    report_file: Some(file),
                });
            }
            Err(e) => {
                // one incompatible lambda must not abort the others
                if !quiet {
                    println!("lambda = {lambda}: {e}");
                }
                summary.push(ScalingSummaryEntry {
                    lambda,
                    status: e.to_string(),
                    max_rel_dev: None,
                    report_file: None,
                });
            }
        }
    }
    io::write_json(&out.join("scaling_summary.json"), &summary)?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    value: f64,
    status: String,
    blowup_time: Option<f64>,
    final_e3: Option<f64>,
    max_uloc3: Option<f64>,
    events: usize,
    e3_nonincreasing: Option<bool>,
}

fn apply_axis(config: &RunConfig, axis: &str, value: f64) -> Result<RunConfig, CliError> {
    let mut c = config.clone();
    match axis {
        "initial_amplitude" => c.initial.amplitude = value,
        "gl_epsilon" => c.scheme.gl_epsilon = Some(value),
        "dt" => c.scheme.dt = value,
        "n" => {
            if value <= 0.0 || value.fract() != 0.0 {
                return Err(CliError::Config(format!(
                    "sweep axis n needs positive integers, got {value}"
                )));
            }
            c.grid.n = value as usize;
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown sweep axis `{other}` (expected initial_amplitude | gl_epsilon | dt | n)"
            )))
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn sweep(
    config_path: &Path,
    out: &Path,
    axis: &str,
    values: &[f64],
    threads: usize,
    quiet: bool,
) -> Result<i32, CliError> {
    let base = RunConfig::load(config_path)?;
    // validate every member config up front so axis typos fail fast
    for &v in values {
        apply_axis(&base, axis, v)?;
    }
    std::fs::create_dir_all(out)?;

    let jobs: Mutex<VecDeque<usize>> = Mutex::new((0..values.len()).collect());
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; values.len()]);

    std::thread::scope(|scope| {
        for _ in 0..threads.min(values.len()) {
            scope.spawn(|| loop {
                let job = jobs.lock().unwrap().pop_front();
                let Some(i) = job else { break };
                let value = values[i];
                let row = match run_sweep_member(&base, axis, value, &out.join(format!("run_{i:03}")))
                {
                    Ok(row) => row,
                    Err(e) => SweepRow {
                        value,
                        status: format!("error: {e}"),
                        blowup_time: None,
                        final_e3: None,
                        max_uloc3: None,
                        events: 0,
                        e3_nonincreasing: None,
                    },
                };
                if !quiet {
                    println!("{axis} = {value}: {}", row.status);
                }
                rows.lock().unwrap()[i] = Some(row);
            });
        }
    });

    let rows = rows.into_inner().unwrap();
    let csv_path = out.join("sweep.csv");
    let mut csv = String::from("value,status,blowup_time,final_e3,max_uloc3,events,e3_nonincreasing\n");
    for row in rows.iter().flatten() {
        let opt = |v: &Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.value,
            row.status,
            opt(&row.blowup_time),
            opt(&row.final_e3),
            opt(&row.max_uloc3),
            row.events,
            row.e3_nonincreasing
                .map(|b| b.to_string())
                .unwrap_or_default(),
        ));
    }
    std::fs::write(&csv_path, csv)?;
    Ok(0)
}

fn run_sweep_member(
    base: &RunConfig,
    axis: &str,
    value: f64,
    out: &Path,
) -> Result<SweepRow, CliError> {
    let config = apply_axis(base, axis, value)?;
    let (traj, blowup) = run_config(&config)?;
    write_artifacts(out, &config, &traj, &blowup, config.run.save_fields)?;
    let entries = traj.ledger().entries();
    let e3_nonincreasing = entries
        .windows(2)
        .all(|w| w[1].e3 <= w[0].e3 * (1.0 + 1e-9));
    Ok(SweepRow {
        value,
        status: if blowup.is_some() { "blew_up" } else { "completed" }.into(),
        blowup_time: blowup.map(|b| b.time),
        final_e3: entries.last().map(|e| e.e3),
        max_uloc3: Some(entries.iter().map(|e| e.uloc3).fold(0.0, f64::max)),
        events: traj.events().len(),
        e3_nonincreasing: Some(e3_nonincreasing),
    })
}
