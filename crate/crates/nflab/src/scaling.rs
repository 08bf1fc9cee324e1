//! Parabolic rescaling of states and trajectories, and the invariance
//! harness for the scale-invariant quantities.
//!
//! The rescaling u -> lambda u(lambda x, lambda^2 t), P -> lambda^2 P,
//! d -> d(lambda x, lambda^2 t) maps the torus of side L onto the torus of
//! side L/lambda. Grid points of the target torus land exactly on grid
//! points of the source, so the exact-integer mode is a relabeling plus an
//! amplitude scaling with no interpolation at all. Reports always carry the
//! (L, N) pair of both sides to keep cross-grid comparisons honest.

use crate::analysis::{cylinder_quantities, energy_l3, uloc_norm_state, Cylinder, UlocParams};
use crate::dynamics::{LedgerParams, Trajectory};
use crate::error::{Error, Result};
use crate::field::{DirectorField, FlowState, VectorField};
use crate::grid::PeriodicGrid;
use crate::spectral;
use serde::{Deserialize, Serialize};

/// How the rescaled fields are laid onto the target grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regrid {
    /// Pure relabel: requires lambda or 1/lambda to be an integer; keeps N
    /// and is exact.
    ExactInteger,
    /// Trigonometric resampling to `target_n` points per axis before the
    /// relabel; exact for band-limited fields, approximate otherwise.
    SpectralResample { target_n: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RescaleSpec {
    pub lambda: f64,
    pub regrid: Regrid,
}

impl RescaleSpec {
    pub fn exact(lambda: f64) -> Self {
        Self {
            lambda,
            regrid: Regrid::ExactInteger,
        }
    }

    fn validate(&self) -> Result<()> {
        let lambda = self.lambda;
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::IncompatibleLambda {
                lambda,
                mode: "any".into(),
                reason: "lambda must be positive and finite".into(),
            });
        }
        if let Regrid::ExactInteger = self.regrid {
            let near_int = |x: f64| (x - x.round()).abs() < 1e-12 && x.round() >= 1.0;
            if !near_int(lambda) && !near_int(1.0 / lambda) {
                return Err(Error::IncompatibleLambda {
                    lambda,
                    mode: "exact_integer".into(),
                    reason: "lambda or 1/lambda must be an integer".into(),
                });
            }
        }
        Ok(())
    }
}

/// Parabolic rescaling of a single state: the output lives on the torus of
/// side L/lambda at time t/lambda^2, with u scaled by lambda and P by
/// lambda^2; the director is composed only.
pub fn rescale_state(state: &FlowState, spec: &RescaleSpec) -> Result<FlowState> {
    spec.validate()?;
    let lambda = spec.lambda;

    let (u, d, p) = match spec.regrid {
        Regrid::ExactInteger => (
            state.velocity.clone(),
            state.director.as_vector().clone(),
            state.pressure.clone(),
        ),
        Regrid::SpectralResample { target_n } => {
            let res = |f: &crate::field::ScalarField| spectral::resample(f, target_n);
            let u = VectorField::new([
                res(state.velocity.component(0))?,
                res(state.velocity.component(1))?,
                res(state.velocity.component(2))?,
            ])?;
            let d = VectorField::new([
                res(state.director.component(0))?,
                res(state.director.component(1))?,
                res(state.director.component(2))?,
            ])?;
            (u, d, res(&state.pressure)?)
        }
    };

    let src_grid = u.grid();
    let grid = PeriodicGrid::new(src_grid.n(), src_grid.length() / lambda)?;
    let relabel = |f: &crate::field::ScalarField, scale: f64| {
        crate::field::ScalarField::from_values(grid, f.values().iter().map(|v| v * scale).collect())
            .expect("matching point count")
    };
    let velocity = VectorField::new([
        relabel(u.component(0), lambda),
        relabel(u.component(1), lambda),
        relabel(u.component(2), lambda),
    ])?;
    let director_raw = VectorField::new([
        relabel(d.component(0), 1.0),
        relabel(d.component(1), 1.0),
        relabel(d.component(2), 1.0),
    ])?;
    let pressure = relabel(&p, lambda * lambda);
    let time = state.time / (lambda * lambda);

    match DirectorField::new(director_raw.clone()) {
        Ok(director) => FlowState::new(velocity, director, pressure, time),
        // resampling can push a unit director slightly off the sphere
        Err(_) => FlowState::new_relaxed(velocity, director_raw, pressure, time),
    }
}

/// Rescales every saved state; ledger parameters shrink with the box.
pub fn rescale_trajectory(traj: &Trajectory, spec: &RescaleSpec) -> Result<Trajectory> {
    spec.validate()?;
    let states = traj
        .states()
        .iter()
        .map(|s| rescale_state(s, spec))
        .collect::<Result<Vec<_>>>()?;
    let params = LedgerParams {
        uloc_radius: 0.25 * states[0].grid().length(),
        uloc_stride: 2,
    };
    Trajectory::from_states(states, traj.scheme().clone(), &params)
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantityComparison {
    pub name: String,
    pub before: f64,
    pub after: f64,
    pub rel_dev: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceReport {
    pub lambda: f64,
    pub grid_before: (usize, f64),
    pub grid_after: (usize, f64),
    /// Set when the regrid mode involves mode truncation.
    pub approximate: bool,
    pub quantities: Vec<QuantityComparison>,
    pub max_rel_dev: f64,
}

fn compare(name: &str, before: f64, after: f64) -> QuantityComparison {
    let scale = before.abs().max(1e-300);
    QuantityComparison {
        name: name.to_string(),
        before,
        after,
        rel_dev: (after - before).abs() / scale,
    }
}

/// Tabulates E3, the uniformly-local norm, and the cylinder quantities
/// before and after the rescaling, with relative deviations.
pub fn invariance_report(
    traj: &Trajectory,
    spec: &RescaleSpec,
    cylinders: &[Cylinder],
) -> Result<InvarianceReport> {
    let rescaled = rescale_trajectory(traj, spec)?;
    let lambda = spec.lambda;
    let grid_before = traj.grid();
    let grid_after = rescaled.grid();

    let mut quantities = Vec::new();
    for (label, idx) in [("initial", 0usize), ("final", traj.states().len() - 1)] {
        let before = &traj.states()[idx];
        let after = &rescaled.states()[idx];
        quantities.push(compare(
            &format!("E3[{label}]"),
            energy_l3(before),
            energy_l3(after),
        ));
        let radius = 0.2 * grid_before.length();
        let before_uloc = uloc_norm_state(
            before,
            &UlocParams {
                radius,
                stride: 2,
            },
        )?
        .value;
        let after_uloc = uloc_norm_state(
            after,
            &UlocParams {
                radius: radius / lambda,
                stride: 2,
            },
        )?
        .value;
        quantities.push(compare(
            &format!("uloc3[{label}]"),
            before_uloc,
            after_uloc,
        ));
    }

    for (i, cyl) in cylinders.iter().enumerate() {
        let before = cylinder_quantities(traj, cyl)?;
        let scaled_cyl = Cylinder {
            center: [
                cyl.center[0] / lambda,
                cyl.center[1] / lambda,
                cyl.center[2] / lambda,
            ],
            center_t: cyl.center_t / (lambda * lambda),
            radius: cyl.radius / lambda,
        };
        let after = cylinder_quantities(&rescaled, &scaled_cyl)?;
        quantities.push(compare(&format!("cylinder{i}.q_u"), before.q_u, after.q_u));
        quantities.push(compare(&format!("cylinder{i}.q_p"), before.q_p, after.q_p));
        quantities.push(compare(
            &format!("cylinder{i}.q_gradd"),
            before.q_gradd,
            after.q_gradd,
        ));
    }

    let max_rel_dev = quantities.iter().map(|q| q.rel_dev).fold(0.0, f64::max);
    Ok(InvarianceReport {
        lambda,
        grid_before: (grid_before.n(), grid_before.length()),
        grid_after: (grid_after.n(), grid_after.length()),
        approximate: matches!(spec.regrid, Regrid::SpectralResample { .. }),
        quantities,
        max_rel_dev,
    })
}
