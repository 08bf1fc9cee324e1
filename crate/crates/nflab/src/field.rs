//! Physical-space field containers: scalars, vectors, unit directors, and the
//! coupled flow state, plus quadrature and the smooth cutoff/bump profiles
//! used by the local diagnostics.

use crate::error::{Error, Result};
use crate::grid::{stable_sum, PeriodicGrid};

/// Pointwise unit-length tolerance accepted for directors.
pub const UNIT_TOLERANCE: f64 = 1e-12;
/// Maximum spectral divergence accepted for velocities.
pub const DIV_TOLERANCE: f64 = 1e-10;
/// Below this magnitude a raw director is considered degenerate.
pub const DEGENERATE_THRESHOLD: f64 = 1e-8;

/// One real value per grid point, row-major (x slowest, z fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.point_count()],
        }
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.point_count()],
        }
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let h = grid.spacing();
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.point_count());
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    values.push(f(ix as f64 * h, iy as f64 * h, iz as f64 * h));
                }
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.point_count() {
            return Err(Error::InvalidState(format!(
                "value count {} does not match grid with {} points",
                values.len(),
                grid.point_count()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Pointwise map into a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two fields on the same grid.
    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Midpoint quadrature (= trapezoid on the torus): spacing^3 * sum of values.
/// Spectrally exact for band-limited integrands.
pub fn integrate(field: &ScalarField) -> f64 {
    field.grid.cell_volume() * stable_sum(field.values())
}

/// Mean value over the box.
pub fn mean(field: &ScalarField) -> f64 {
    stable_sum(field.values()) / field.grid().point_count() as f64
}

/// Three scalar components sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    components: [ScalarField; 3],
}

impl VectorField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self {
            components: [
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
                ScalarField::zeros(grid),
            ],
        }
    }

    pub fn new(components: [ScalarField; 3]) -> Result<Self> {
        let g = components[0].grid();
        if components.iter().any(|c| c.grid() != g) {
            return Err(Error::GridMismatch);
        }
        Ok(Self { components })
    }

    pub fn from_fns(
        grid: PeriodicGrid,
        fx: impl Fn(f64, f64, f64) -> f64,
        fy: impl Fn(f64, f64, f64) -> f64,
        fz: impl Fn(f64, f64, f64) -> f64,
    ) -> Self {
        Self {
            components: [
                ScalarField::from_fn(grid, fx),
                ScalarField::from_fn(grid, fy),
                ScalarField::from_fn(grid, fz),
            ],
        }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.components[0].grid()
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut ScalarField {
        &mut self.components[i]
    }

    pub fn components(&self) -> &[ScalarField; 3] {
        &self.components
    }

    /// Pointwise Euclidean magnitude.
    pub fn magnitude(&self) -> ScalarField {
        let n = self.grid().point_count();
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b, c) = (
                self.components[0].values()[i],
                self.components[1].values()[i],
                self.components[2].values()[i],
            );
            values.push((a * a + b * b + c * c).sqrt());
        }
        ScalarField::from_values(self.grid(), values).expect("matching grid")
    }

    /// Pointwise squared magnitude.
    pub fn magnitude_sq(&self) -> ScalarField {
        let n = self.grid().point_count();
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let (a, b, c) = (
                self.components[0].values()[i],
                self.components[1].values()[i],
                self.components[2].values()[i],
            );
            values.push(a * a + b * b + c * c);
        }
        ScalarField::from_values(self.grid(), values).expect("matching grid")
    }

    pub fn sup_norm(&self) -> f64 {
        self.components.iter().map(|c| c.sup_norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            components: [
                self.components[0].scale(s),
                self.components[1].scale(s),
                self.components[2].scale(s),
            ],
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            components: [
                self.components[0].zip(&other.components[0], |a, b| a + b)?,
                self.components[1].zip(&other.components[1], |a, b| a + b)?,
                self.components[2].zip(&other.components[2], |a, b| a + b)?,
            ],
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Ok(Self {
            components: [
                self.components[0].zip(&other.components[0], |a, b| a - b)?,
                self.components[1].zip(&other.components[1], |a, b| a - b)?,
                self.components[2].zip(&other.components[2], |a, b| a - b)?,
            ],
        })
    }
}

/// A sphere-valued field: |d(x)| = 1 is checked at construction, not assumed.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectorField {
    inner: VectorField,
}

impl DirectorField {
    /// Accepts a raw 3-component field whose pointwise magnitude is within
    /// `UNIT_TOLERANCE` of one.
    pub fn new(raw: VectorField) -> Result<Self> {
        Self::with_tolerance(raw, UNIT_TOLERANCE)
    }

    pub fn with_tolerance(raw: VectorField, tol: f64) -> Result<Self> {
        let dev = unit_deviation(&raw);
        if dev > tol {
            return Err(Error::InvalidState(format!(
                "director deviates from the unit sphere by {dev:.3e} (tolerance {tol:.1e})"
            )));
        }
        Ok(Self { inner: raw })
    }

    /// Wraps without checking; only for code paths that renormalized already.
    pub(crate) fn new_unchecked(inner: VectorField) -> Self {
        Self { inner }
    }

    pub fn constant(grid: PeriodicGrid, e0: [f64; 3]) -> Result<Self> {
        let norm = (e0[0] * e0[0] + e0[1] * e0[1] + e0[2] * e0[2]).sqrt();
        if norm <= DEGENERATE_THRESHOLD {
            return Err(Error::ZeroDirector {
                index: 0,
                value: norm,
                threshold: DEGENERATE_THRESHOLD,
            });
        }
        let v = VectorField::from_fns(
            grid,
            |_, _, _| e0[0] / norm,
            |_, _, _| e0[1] / norm,
            |_, _, _| e0[2] / norm,
        );
        Ok(Self { inner: v })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.inner.grid()
    }

    pub fn as_vector(&self) -> &VectorField {
        &self.inner
    }

    pub fn into_vector(self) -> VectorField {
        self.inner
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        self.inner.component(i)
    }

    /// Max pointwise | |d| - 1 |.
    pub fn unit_deviation(&self) -> f64 {
        unit_deviation(&self.inner)
    }
}

fn unit_deviation(v: &VectorField) -> f64 {
    let mut dev: f64 = 0.0;
    let n = v.grid().point_count();
    for i in 0..n {
        let (a, b, c) = (
            v.component(0).values()[i],
            v.component(1).values()[i],
            v.component(2).values()[i],
        );
        dev = dev.max(((a * a + b * b + c * c).sqrt() - 1.0).abs());
    }
    dev
}

/// Projects a raw 3-component field onto the unit sphere pointwise.
///
/// Errors with `ZeroDirector` when any magnitude is at or below the
/// degenerate threshold: that signals a Ginzburg-Landau regime or a blow-up
/// candidate, never something to fix silently.
pub fn normalize_director(raw: &VectorField) -> Result<DirectorField> {
    normalize_director_with_threshold(raw, DEGENERATE_THRESHOLD)
}

pub fn normalize_director_with_threshold(
    raw: &VectorField,
    threshold: f64,
) -> Result<DirectorField> {
    let n = raw.grid().point_count();
    let mut out = VectorField::zeros(raw.grid());
    for i in 0..n {
        let (a, b, c) = (
            raw.component(0).values()[i],
            raw.component(1).values()[i],
            raw.component(2).values()[i],
        );
        let m = (a * a + b * b + c * c).sqrt();
        if m <= threshold {
            return Err(Error::ZeroDirector {
                index: i,
                value: m,
                threshold,
            });
        }
        out.component_mut(0).values_mut()[i] = a / m;
        out.component_mut(1).values_mut()[i] = b / m;
        out.component_mut(2).values_mut()[i] = c / m;
    }
    Ok(DirectorField::new_unchecked(out))
}

/// Velocity + director + pressure at one instant.
///
/// Construction validates the spectral divergence of the velocity and shifts
/// the pressure to the mean-zero gauge. The director check is relaxed for
/// Ginzburg-Landau states via [`FlowState::new_relaxed`].
#[derive(Debug, Clone)]
pub struct FlowState {
    pub velocity: VectorField,
    pub director: DirectorField,
    pub pressure: ScalarField,
    pub time: f64,
}

impl FlowState {
    pub fn new(
        velocity: VectorField,
        director: DirectorField,
        pressure: ScalarField,
        time: f64,
    ) -> Result<Self> {
        let state = Self::new_relaxed(velocity, director.into_vector(), pressure, time)?;
        let dev = state.director.unit_deviation();
        if dev > UNIT_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "director off the unit sphere by {dev:.3e}"
            )));
        }
        Ok(state)
    }

    /// Same checks minus the unit constraint (Ginzburg-Landau trajectories
    /// leave the sphere by design).
    pub fn new_relaxed(
        velocity: VectorField,
        director_raw: VectorField,
        pressure: ScalarField,
        time: f64,
    ) -> Result<Self> {
        if velocity.grid() != director_raw.grid() || velocity.grid() != pressure.grid() {
            return Err(Error::GridMismatch);
        }
        if !(time >= 0.0) {
            return Err(Error::InvalidState(format!("time must be nonnegative, got {time}")));
        }
        if !velocity.is_finite() || !director_raw.is_finite() || !pressure.is_finite() {
            return Err(Error::InvalidState("non-finite field values".into()));
        }
        let div = crate::spectral::divergence(&velocity).sup_norm();
        if div > DIV_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "velocity divergence {div:.3e} exceeds tolerance {DIV_TOLERANCE:.1e}"
            )));
        }
        let p_mean = mean(&pressure);
        let pressure = pressure.map(|v| v - p_mean);
        Ok(Self {
            velocity,
            director: DirectorField::new_unchecked(director_raw),
            pressure,
            time,
        })
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.velocity.grid()
    }
}

/// One ledger row: the globally monitored quantities at a save time.
#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub time: f64,
    /// E2 = integral of |u|^2 + |grad d|^2.
    pub e2: f64,
    /// E3 = integral of |u|^3 + |grad d|^3.
    pub e3: f64,
    /// Integral of |grad u|^2 + |lap d + |grad d|^2 d|^2.
    pub dissipation: f64,
    /// Uniformly-local L^3 norm of (u, grad d) at the configured radius.
    pub uloc3: f64,
    /// sup|grad^m u| + sup|grad^(m+1) d| for m = 0, 1, 2.
    pub sup_grad: Vec<f64>,
}

/// Time-ordered record of ledger rows.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    entries: Vec<LedgerEntry>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Entries must arrive strictly increasing in time.
    pub fn push(&mut self, entry: LedgerEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.time <= last.time {
                return Err(Error::InvalidState(format!(
                    "ledger times must be strictly increasing ({} after {})",
                    entry.time, last.time
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// C-infinity transition that rises from 0 at `t <= 0` to 1 at `t >= 1`.
pub fn smoothstep(t: f64) -> f64 {
    fn g(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            (-1.0 / t).exp()
        }
    }
    let a = g(t);
    let b = g(1.0 - t);
    a / (a + b)
}

/// Derivative of [`smoothstep`].
pub fn smoothstep_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let g = |t: f64| (-1.0 / t).exp();
    let gp = |t: f64| (-1.0 / t).exp() / (t * t);
    let (a, b) = (g(t), g(1.0 - t));
    let (ap, bp) = (gp(t), -gp(1.0 - t));
    (ap * (a + b) - a * (ap + bp)) / ((a + b) * (a + b))
}

/// Smooth radial cutoff on the torus: 1 inside `r_inner`, 0 outside `r_outer`,
/// C-infinity in between. Distances use the minimum image around `center`.
pub fn radial_cutoff(
    grid: PeriodicGrid,
    center: [f64; 3],
    r_inner: f64,
    r_outer: f64,
) -> Result<ScalarField> {
    if !(0.0 <= r_inner && r_inner < r_outer) {
        return Err(Error::PhiOutOfRange(format!(
            "need 0 <= r_inner < r_outer, got {r_inner}, {r_outer}"
        )));
    }
    if r_outer > 0.5 * grid.length() + 1e-12 {
        return Err(Error::RadiusTooLarge {
            radius: r_outer,
            half_side: 0.5 * grid.length(),
        });
    }
    Ok(ScalarField::from_fn(grid, |x, y, z| {
        let dx = grid.min_image(x - center[0]);
        let dy = grid.min_image(y - center[1]);
        let dz = grid.min_image(z - center[2]);
        let r = (dx * dx + dy * dy + dz * dz).sqrt();
        smoothstep((r_outer - r) / (r_outer - r_inner))
    }))
}

/// Compactly supported C-infinity bump `exp(1 - 1/(1 - r^2/rho^2))` inside
/// radius `rho`, zero outside; peak value 1 at the center.
pub fn bump(grid: PeriodicGrid, center: [f64; 3], rho: f64) -> Result<ScalarField> {
    if rho > 0.5 * grid.length() + 1e-12 {
        return Err(Error::RadiusTooLarge {
            radius: rho,
            half_side: 0.5 * grid.length(),
        });
    }
    Ok(ScalarField::from_fn(grid, |x, y, z| {
        let dx = grid.min_image(x - center[0]);
        let dy = grid.min_image(y - center[1]);
        let dz = grid.min_image(z - center[2]);
        let s = (dx * dx + dy * dy + dz * dz) / (rho * rho);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s)).exp()
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n, 2.0 * PI).unwrap()
    }

    #[test]
    fn integrate_constant_is_volume_times_c() {
        let g = grid(8);
        let f = ScalarField::constant(g, 2.5);
        let vol = (2.0 * PI).powi(3);
        assert!((integrate(&f) - 2.5 * vol).abs() < 1e-10 * vol);
    }

    #[test]
    fn integrate_single_mode_vanishes() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, _, _| x.sin());
        assert!(integrate(&f).abs() < 1e-12);
    }

    #[test]
    fn integrate_sin_squared_matches_closed_form() {
        // closed form: integral of sin^2(x) over [0,2pi]^3 = (2pi)^3 / 2
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, _, _| x.sin() * x.sin());
        let expected = (2.0 * PI).powi(3) / 2.0;
        assert!((integrate(&f) - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn integrate_is_linear() {
        let g = grid(8);
        let f = ScalarField::from_fn(g, |x, y, _| (x + 2.0 * y).sin());
        let h = ScalarField::from_fn(g, |_, y, z| (y - z).cos());
        let combo = f.zip(&h, |a, b| 3.0 * a - 0.5 * b).unwrap();
        let lhs = integrate(&combo);
        let rhs = 3.0 * integrate(&f) - 0.5 * integrate(&h);
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
    }

    #[test]
    fn normalize_constant_field() {
        let g = grid(8);
        let raw = VectorField::from_fns(g, |_, _, _| 0.0, |_, _, _| 0.0, |_, _, _| 2.0);
        let d = normalize_director(&raw).unwrap();
        for i in 0..g.point_count() {
            assert_eq!(d.component(2).values()[i], 1.0);
            assert_eq!(d.component(0).values()[i], 0.0);
        }
    }

    #[test]
    fn normalize_is_idempotent() {
        let g = grid(8);
        let raw = VectorField::from_fns(
            g,
            |x, _, _| x.cos(),
            |x, _, _| x.sin(),
            |_, y, _| 0.3 * y.sin(),
        );
        let once = normalize_director(&raw).unwrap();
        let twice = normalize_director(once.as_vector()).unwrap();
        for c in 0..3 {
            for (a, b) in once.component(c).values().iter().zip(twice.component(c).values()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn normalize_cancels_magnitude_factor() {
        // (cos x, sin x, 0) * (1 + 0.1 sin y) normalizes back to (cos x, sin x, 0)
        let g = grid(16);
        let raw = VectorField::from_fns(
            g,
            |x, y, _| x.cos() * (1.0 + 0.1 * y.sin()),
            |x, y, _| x.sin() * (1.0 + 0.1 * y.sin()),
            |_, _, _| 0.0,
        );
        let d = normalize_director(&raw).unwrap();
        let expect = VectorField::from_fns(g, |x, _, _| x.cos(), |x, _, _| x.sin(), |_, _, _| 0.0);
        for c in 0..3 {
            for (a, b) in d.component(c).values().iter().zip(expect.component(c).values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalize_rejects_degenerate_director() {
        let g = grid(8);
        let raw = VectorField::from_fns(
            g,
            |x, _, _| if x < 0.1 { 0.0 } else { 1.0 },
            |_, _, _| 0.0,
            |_, _, _| 0.0,
        );
        assert!(matches!(
            normalize_director(&raw),
            Err(Error::ZeroDirector { .. })
        ));
    }

    #[test]
    fn smoothstep_profile_shape() {
        assert_eq!(smoothstep(-1.0), 0.0);
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        let d = smoothstep_deriv(0.5);
        let fd = (smoothstep(0.5 + 1e-6) - smoothstep(0.5 - 1e-6)) / 2e-6;
        assert!((d - fd).abs() < 1e-6);
    }

    #[test]
    fn cutoff_respects_gradient_bound() {
        // profile slope peaks at exactly 2, so |grad phi| <= 4/R analytically;
        // the spectral measurement carries a little ringing on top
        let r: f64 = 1.2;
        let steepest = (0..1000)
            .map(|i| smoothstep_deriv(i as f64 / 999.0).abs())
            .fold(0.0, f64::max);
        assert!(steepest * 2.0 / r <= 4.0 / r * (1.0 + 1e-9));

        let g = grid(64);
        let phi = radial_cutoff(g, [PI, PI, PI], 0.5 * r, r).unwrap();
        assert!(phi.min_value() >= 0.0);
        assert!(phi.max_value() <= 1.0 + 1e-15);
        let grad = crate::spectral::gradient(&phi);
        assert!(grad.magnitude().sup_norm() <= 4.0 / r * 1.05);
    }

    #[test]
    fn bump_is_compactly_supported() {
        let g = grid(16);
        let b = bump(g, [PI, PI, PI], 1.0).unwrap();
        // support check: far corner is exactly zero
        assert_eq!(b.values()[0], 0.0);
        let center_idx = g.index(8, 8, 8);
        assert!((b.values()[center_idx] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ledger_rejects_nonincreasing_times() {
        let mut ledger = EnergyLedger::new();
        let entry = |t: f64| LedgerEntry {
            time: t,
            e2: 0.0,
            e3: 0.0,
            dissipation: 0.0,
            uloc3: 0.0,
            sup_grad: vec![0.0; 3],
        };
        ledger.push(entry(0.0)).unwrap();
        ledger.push(entry(0.5)).unwrap();
        assert!(ledger.push(entry(0.5)).is_err());
        assert!(ledger.push(entry(0.2)).is_err());
    }
}
