//! Initial-data construction: mollified smooth data from raw fields, and the
//! built-in presets used by the regression and reduction experiments.

use crate::error::{Error, Result};
use crate::field::{normalize_director, DirectorField, FlowState, ScalarField, VectorField};
use crate::grid::PeriodicGrid;
use crate::spectral;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Smooth divergence-free velocity and unit director from raw data:
/// a Gaussian mollifier of the given width, then the Leray projection for
/// the velocity and the sphere projection for the director.
pub fn build_smooth_initial_data(
    u_raw: &VectorField,
    d_raw: &VectorField,
    mollifier_width: f64,
) -> Result<(VectorField, DirectorField)> {
    if u_raw.grid() != d_raw.grid() {
        return Err(Error::GridMismatch);
    }
    let u = spectral::leray_project(&spectral::mollify_vector(u_raw, mollifier_width));
    let d = normalize_director(&spectral::mollify_vector(d_raw, mollifier_width))?;
    Ok((u, d))
}

/// Built-in initial states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// u = A (sin x cos y, -cos x sin y, 0), d = e0. The classic decaying
    /// vortex; with a constant director the model reduces to plain fluid flow.
    TaylorGreen,
    /// Random band-limited divergence-free velocity, constant director.
    ConstantDirectorNs,
    /// u = 0, d = normalize(e0 + eps * band-limited perturbation).
    SmallDirectorPerturbation,
    /// Both fields random band-limited.
    RandomBandLimited,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor_green" => Ok(Self::TaylorGreen),
            "constant_director_ns" => Ok(Self::ConstantDirectorNs),
            "small_director_perturbation" => Ok(Self::SmallDirectorPerturbation),
            "random_band_limited" => Ok(Self::RandomBandLimited),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// Knobs shared by the presets; fields that a preset does not use are ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PresetParams {
    /// Velocity amplitude A.
    pub amplitude: f64,
    /// Director perturbation size.
    pub epsilon: f64,
    /// Far-field direction e0.
    pub e0: [f64; 3],
    /// Seed for the random presets.
    pub seed: u64,
    /// Largest excited mode number of random fields.
    pub max_mode: i64,
}

impl Default for PresetParams {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            epsilon: 0.05,
            e0: [0.0, 0.0, 1.0],
            seed: 0,
            max_mode: 2,
        }
    }
}

/// Builds a preset state at t = 0 with a consistent pressure.
pub fn preset_field(preset: Preset, grid: PeriodicGrid, params: &PresetParams) -> Result<FlowState> {
    let (velocity, director) = match preset {
        Preset::TaylorGreen => {
            let a = params.amplitude;
            let u = VectorField::from_fns(
                grid,
                move |x, y, _| a * x.sin() * y.cos(),
                move |x, y, _| -a * x.cos() * y.sin(),
                |_, _, _| 0.0,
            );
            (u, DirectorField::constant(grid, params.e0)?)
        }
        Preset::ConstantDirectorNs => {
            let u = random_divergence_free(grid, params.amplitude, params.seed, params.max_mode);
            (u, DirectorField::constant(grid, params.e0)?)
        }
        Preset::SmallDirectorPerturbation => {
            let u = VectorField::zeros(grid);
            let d = perturbed_director(grid, params)?;
            (u, d)
        }
        Preset::RandomBandLimited => {
            let u = random_divergence_free(grid, params.amplitude, params.seed, params.max_mode);
            let d = perturbed_director(grid, params)?;
            (u, d)
        }
    };
    let pressure = spectral::solve_pressure(&velocity, &director)?;
    FlowState::new(velocity, director, pressure, 0.0)
}

fn perturbed_director(grid: PeriodicGrid, params: &PresetParams) -> Result<DirectorField> {
    let bump = random_band_limited_vector(grid, params.epsilon, params.seed ^ 0x9e37_79b9, params.max_mode);
    let raw = VectorField::new([
        bump.component(0).map(|v| v + params.e0[0]),
        bump.component(1).map(|v| v + params.e0[1]),
        bump.component(2).map(|v| v + params.e0[2]),
    ])?;
    normalize_director(&raw)
}

/// Random real trig polynomial with modes up to `max_mode` per axis,
/// normalized so its sup norm is roughly `amplitude`. Deterministic in the seed.
pub fn random_band_limited_scalar(
    grid: PeriodicGrid,
    amplitude: f64,
    seed: u64,
    max_mode: i64,
) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes: Vec<([f64; 3], f64, f64)> = Vec::new();
    let base = 2.0 * std::f64::consts::PI / grid.length();
    for mx in 0..=max_mode {
        for my in -max_mode..=max_mode {
            for mz in -max_mode..=max_mode {
                if (mx, my, mz) == (0, 0, 0) || (mx == 0 && (my < 0 || (my == 0 && mz < 0))) {
                    continue;
                }
                modes.push((
                    [base * mx as f64, base * my as f64, base * mz as f64],
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ));
            }
        }
    }
    let raw = ScalarField::from_fn(grid, |x, y, z| {
        let mut v = 0.0;
        for (k, a, b) in &modes {
            let phase = k[0] * x + k[1] * y + k[2] * z;
            v += a * phase.cos() + b * phase.sin();
        }
        v
    });
    let sup = raw.sup_norm();
    if sup == 0.0 {
        raw
    } else {
        raw.scale(amplitude / sup)
    }
}

pub fn random_band_limited_vector(
    grid: PeriodicGrid,
    amplitude: f64,
    seed: u64,
    max_mode: i64,
) -> VectorField {
    VectorField::new([
        random_band_limited_scalar(grid, amplitude, seed.wrapping_mul(3).wrapping_add(1), max_mode),
        random_band_limited_scalar(grid, amplitude, seed.wrapping_mul(3).wrapping_add(2), max_mode),
        random_band_limited_scalar(grid, amplitude, seed.wrapping_mul(3).wrapping_add(3), max_mode),
    ])
    .expect("matching grid")
}

/// Random band-limited field projected to be divergence-free, rescaled to
/// the requested amplitude.
pub fn random_divergence_free(
    grid: PeriodicGrid,
    amplitude: f64,
    seed: u64,
    max_mode: i64,
) -> VectorField {
    let projected = spectral::leray_project(&random_band_limited_vector(grid, 1.0, seed, max_mode));
    let sup = projected.sup_norm();
    if sup == 0.0 {
        projected
    } else {
        projected.scale(amplitude / sup)
    }
}
