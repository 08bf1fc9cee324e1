//! Run configuration: a single TOML file drives every subcommand. All
//! defaults are echoed into the output directory for provenance.

use nflab::analysis::Cylinder;
use nflab::dynamics::{
    Constraint, LedgerParams, Model, MonitorSpec, Scheme, SchemeConfig, SimOptions,
};
use nflab::initial::{preset_field, Preset, PresetParams};
use nflab::{FlowState, PeriodicGrid};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub scheme: SchemeSection,
    pub initial: InitialSection,
    pub run: RunSection,
    #[serde(default)]
    pub monitors: MonitorSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
}

fn default_length() -> f64 {
    2.0 * std::f64::consts::PI
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_constraint")]
    pub constraint: Constraint,
    #[serde(default)]
    pub gl_epsilon: Option<f64>,
    #[serde(default = "default_model")]
    pub model: Model,
    #[serde(default = "one")]
    pub viscosity: f64,
    #[serde(default = "one")]
    pub elastic_coupling: f64,
    #[serde(default = "one")]
    pub relaxation: f64,
    #[serde(default = "default_overflow_guard")]
    pub overflow_guard: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
}

fn default_scheme() -> Scheme {
    Scheme::ImexRk2
}
fn default_constraint() -> Constraint {
    Constraint::Renormalize
}
fn default_model() -> Model {
    Model::Full
}
fn one() -> f64 {
    1.0
}
fn default_overflow_guard() -> f64 {
    1e6
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Preset name; omit when loading a snapshot.
    #[serde(default)]
    pub preset: Option<String>,
    /// Directory holding velocity.nfs / director.nfs / pressure.nfs.
    #[serde(default)]
    pub snapshot_dir: Option<PathBuf>,
    /// Gaussian mollifier width applied to snapshot data.
    #[serde(default)]
    pub mollifier_width: Option<f64>,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_e0")]
    pub e0: [f64; 3],
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_mode")]
    pub max_mode: i64,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_e0() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_max_mode() -> i64 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_end: f64,
    pub save_every: usize,
    /// Write field snapshots at every save.
    #[serde(default = "default_true")]
    pub save_fields: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default)]
    pub uloc_radius: Option<f64>,
    #[serde(default = "default_stride")]
    pub uloc_stride: usize,
    /// Blow-up monitor threshold; omit to disable the monitor.
    #[serde(default)]
    pub blowup_threshold: Option<f64>,
    #[serde(default)]
    pub blowup_radius: Option<f64>,
    #[serde(default)]
    pub cylinders: Vec<CylinderSection>,
}

fn default_stride() -> usize {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderSection {
    pub center: [f64; 3],
    pub center_t: f64,
    pub radius: f64,
}

impl From<&CylinderSection> for Cylinder {
    fn from(s: &CylinderSection) -> Self {
        Cylinder {
            center: s.center,
            center_t: s.center_t,
            radius: s.radius,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid()?;
        self.scheme_config()
            .validate()
            .map_err(|e| CliError::Config(format!("[scheme] {e}")))?;
        if !(self.run.t_end >= 0.0) {
            return Err(CliError::Config(format!(
                "[run] t_end must be nonnegative, got {}",
                self.run.t_end
            )));
        }
        if self.run.save_every == 0 {
            return Err(CliError::Config("[run] save_every must be at least 1".into()));
        }
        match (&self.initial.preset, &self.initial.snapshot_dir) {
            (None, None) => Err(CliError::Config(
                "[initial] needs either `preset` or `snapshot_dir`".into(),
            )),
            (Some(_), Some(_)) => Err(CliError::Config(
                "[initial] `preset` and `snapshot_dir` are mutually exclusive".into(),
            )),
            (Some(name), None) => {
                name.parse::<Preset>()
                    .map_err(|e| CliError::Config(format!("[initial] {e}")))?;
                Ok(())
            }
            (None, Some(dir)) => {
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "[initial] snapshot_dir {} is not a readable directory",
                        dir.display()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn grid(&self) -> Result<PeriodicGrid, CliError> {
        PeriodicGrid::new(self.grid.n, self.grid.length)
            .map_err(|e| CliError::Config(format!("[grid] {e}")))
    }

    pub fn scheme_config(&self) -> SchemeConfig {
        SchemeConfig {
            dt: self.scheme.dt,
            scheme: self.scheme.scheme,
            constraint: self.scheme.constraint,
            gl_epsilon: self.scheme.gl_epsilon,
            model: self.scheme.model,
            viscosity: self.scheme.viscosity,
            elastic_coupling: self.scheme.elastic_coupling,
            relaxation: self.scheme.relaxation,
            overflow_guard: self.scheme.overflow_guard,
            dealias: self.scheme.dealias,
        }
    }

    pub fn ledger_params(&self, grid: PeriodicGrid) -> LedgerParams {
        LedgerParams {
            uloc_radius: self
                .monitors
                .uloc_radius
                .unwrap_or(0.25 * grid.length()),
            uloc_stride: self.monitors.uloc_stride,
        }
    }

    pub fn sim_options(&self, grid: PeriodicGrid, t_start: f64) -> SimOptions {
        let ledger = self.ledger_params(grid);
        let mut monitors = Vec::new();
        if let Some(threshold) = self.monitors.blowup_threshold {
            monitors.push(MonitorSpec::BlowupThreshold {
                radius: self.monitors.blowup_radius.unwrap_or(ledger.uloc_radius),
                threshold,
                stride: self.monitors.uloc_stride,
            });
        }
        SimOptions {
            t_end: t_start + self.run.t_end,
            save_every: self.run.save_every,
            ledger,
            monitors,
        }
    }

    /// Builds the initial state from the preset or the snapshot directory.
    pub fn initial_state(&self) -> Result<FlowState, CliError> {
        let grid = self.grid()?;
        if let Some(name) = &self.initial.preset {
            let preset: Preset = name
                .parse()
                .map_err(|e| CliError::Config(format!("[initial] {e}")))?;
            let params = PresetParams {
                amplitude: self.initial.amplitude,
                epsilon: self.initial.epsilon,
                e0: self.initial.e0,
                seed: self.initial.seed,
                max_mode: self.initial.max_mode,
            };
            return preset_field(preset, grid, &params)
                .map_err(|e| CliError::Config(format!("[initial] {e}")));
        }
        let dir = self.initial.snapshot_dir.as_ref().expect("validated");
        let raw = nflab::io::load_state(dir).map_err(CliError::from)?;
        if raw.grid() != grid {
            return Err(CliError::Config(format!(
                "[initial] snapshot grid (n = {}, length = {}) does not match [grid]",
                raw.grid().n(),
                raw.grid().length()
            )));
        }
        if let Some(width) = self.initial.mollifier_width {
            let (u, d) = nflab::initial::build_smooth_initial_data(
                &raw.velocity,
                raw.director.as_vector(),
                width,
            )?;
            let p = nflab::spectral::solve_pressure(&u, &d)?;
            Ok(FlowState::new(u, d, p, raw.time)?)
        } else {
            Ok(raw)
        }
    }
}
