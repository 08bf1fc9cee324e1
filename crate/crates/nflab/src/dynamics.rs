//! Right-hand sides of the coupled system, the Ginzburg-Landau variant,
//! IMEX integrating-factor time stepping, and the two reduction modes.
//!
//! Diffusion is applied exactly through the heat multiplier; the advective,
//! elastic, and constraint terms are explicit. The sphere constraint is
//! enforced by pointwise renormalization after each stage, or relaxed to the
//! Ginzburg-Landau penalty. Pressure is never time-stepped: it is recomputed
//! from (u, d) wherever a state is materialized.

use crate::analysis::{uloc_norm_state, UlocParams};
use crate::error::{Error, Result};
use crate::field::{
    integrate, DirectorField, EnergyLedger, FlowState, LedgerEntry, ScalarField, VectorField,
};
use crate::grid::{PeriodicGrid, WaveVectorTable};
use crate::spectral::{self, SpectralField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Explicit stage combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImexEuler,
    ImexRk2,
}

/// How the unit-sphere constraint on the director is handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Pointwise projection back to the sphere after every stage.
    Renormalize,
    /// Penalty relaxation (1/eps^2)(1 - |d|^2) d; the director leaves the sphere.
    GinzburgLandau,
}

/// Which part of the coupled system is evolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Full,
    /// Fluid only; the director is carried through untouched.
    NavierStokesOnly,
    /// Director heat flow only; the velocity is carried through untouched
    /// and transport is dropped.
    HarmonicMapOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub constraint: Constraint,
    /// Required iff `constraint` is GinzburgLandau.
    pub gl_epsilon: Option<f64>,
    pub model: Model,
    /// Viscosity nu; the analysis in this crate assumes 1.
    pub viscosity: f64,
    /// Elastic coupling lambda in front of the director stress.
    pub elastic_coupling: f64,
    /// Director relaxation rate gamma.
    pub relaxation: f64,
    /// sup|u| above this declares a blow-up candidate instead of overflowing.
    pub overflow_guard: f64,
    /// 2/3-rule truncation of nonlinear products.
    pub dealias: bool,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            scheme: Scheme::ImexRk2,
            constraint: Constraint::Renormalize,
            gl_epsilon: None,
            model: Model::Full,
            viscosity: 1.0,
            elastic_coupling: 1.0,
            relaxation: 1.0,
            overflow_guard: 1e6,
            dealias: true,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidState(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        match (self.constraint, self.gl_epsilon) {
            (Constraint::GinzburgLandau, None) => Err(Error::InvalidState(
                "gl_epsilon is required for the ginzburg_landau constraint".into(),
            )),
            (Constraint::GinzburgLandau, Some(eps)) if !(eps > 0.0) => Err(Error::InvalidState(
                format!("gl_epsilon must be positive, got {eps}"),
            )),
            (Constraint::Renormalize, Some(_)) => Err(Error::InvalidState(
                "gl_epsilon is only meaningful for the ginzburg_landau constraint".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Ledger sampling choices carried by a simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LedgerParams {
    /// Ball radius of the uniformly-local L^3 norm column.
    pub uloc_radius: f64,
    /// Center stride of the sampled sup.
    pub uloc_stride: usize,
}

impl LedgerParams {
    pub fn default_for(grid: PeriodicGrid) -> Self {
        Self {
            uloc_radius: 0.25 * grid.length(),
            uloc_stride: 2,
        }
    }
}

/// Streaming monitors evaluated at every save.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MonitorSpec {
    /// Flags the first save where |||(u, grad d)|||_{L^3_r} exceeds the threshold.
    BlowupThreshold {
        radius: f64,
        threshold: f64,
        stride: usize,
    },
}

/// First-exceedance record produced by a monitor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorEvent {
    pub time: f64,
    pub value: f64,
    pub threshold: f64,
    pub radius: f64,
    pub center: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub t_end: f64,
    /// A state and ledger row are kept every this many steps.
    pub save_every: usize,
    pub ledger: LedgerParams,
    pub monitors: Vec<MonitorSpec>,
}

impl SimOptions {
    pub fn new(t_end: f64, save_every: usize, grid: PeriodicGrid) -> Self {
        Self {
            t_end,
            save_every: save_every.max(1),
            ledger: LedgerParams::default_for(grid),
            monitors: Vec::new(),
        }
    }
}

/// Saved states, the energy ledger, monitor events, and the config echo.
#[derive(Debug, Clone)]
pub struct Trajectory {
    states: Vec<FlowState>,
    ledger: EnergyLedger,
    scheme: SchemeConfig,
    events: Vec<MonitorEvent>,
    /// Largest advisory CFL number max|u| dt / h seen during the run.
    pub max_cfl: f64,
}

impl Trajectory {
    pub fn states(&self) -> &[FlowState] {
        &self.states
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    pub fn events(&self) -> &[MonitorEvent] {
        &self.events
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.states[0].grid()
    }

    pub fn start_time(&self) -> f64 {
        self.states[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.states[self.states.len() - 1].time
    }

    /// Assembles a trajectory from pre-built states, recomputing the ledger.
    /// Used by the scaling harness and snapshot reloads.
    pub fn from_states(
        states: Vec<FlowState>,
        scheme: SchemeConfig,
        ledger_params: &LedgerParams,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InsufficientSaves { needed: 1, got: 0 });
        }
        let mut ledger = EnergyLedger::new();
        for state in &states {
            ledger.push(ledger_entry(state, ledger_params)?)?;
        }
        Ok(Self {
            states,
            ledger,
            scheme,
            events: Vec::new(),
            max_cfl: 0.0,
        })
    }
}

/// Result of a run that is reported rather than propagated: the trajectory up
/// to the stopping point plus the blow-up information if one fired.
#[derive(Debug)]
pub struct SimOutcome {
    pub trajectory: Trajectory,
    pub blowup: Option<BlowupInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlowupInfo {
    pub time: f64,
    pub reason: String,
}

// ---------------------------------------------------------------------------
// right-hand sides
// ---------------------------------------------------------------------------

type Hat3 = [SpectralField; 3];
type Grad3 = [[ScalarField; 3]; 3];

fn to_hat(v: &VectorField) -> Hat3 {
    [
        spectral::forward(v.component(0)),
        spectral::forward(v.component(1)),
        spectral::forward(v.component(2)),
    ]
}

fn from_hat(h: &Hat3) -> VectorField {
    VectorField::new([
        spectral::inverse(&h[0]),
        spectral::inverse(&h[1]),
        spectral::inverse(&h[2]),
    ])
    .expect("matching grid")
}

fn gradient_from_hat(hat: &Hat3) -> Grad3 {
    let row = |h: &SpectralField| {
        [
            spectral::inverse(&spectral::derivative_spectral(h, 0)),
            spectral::inverse(&spectral::derivative_spectral(h, 1)),
            spectral::inverse(&spectral::derivative_spectral(h, 2)),
        ]
    };
    [row(&hat[0]), row(&hat[1]), row(&hat[2])]
}

struct VelocityTendency {
    n_hat: Hat3,
    p_hat: SpectralField,
}

/// Nonlinear + pressure part of the velocity equation in spectral space:
/// N_u^j = -i k_k g_jk - i k_j P with g = u (x) u + lambda grad d (.) grad d
/// and P solving the Poisson relation for g. Divergence-free mode by mode.
fn velocity_nonlinear(
    table: &WaveVectorTable,
    u: &VectorField,
    grad_d: Option<&Grad3>,
    lambda: f64,
    dealias: bool,
) -> VelocityTendency {
    let grid = u.grid();
    let n = grid.n();
    let npts = grid.point_count();
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    const LOOKUP: [[usize; 3]; 3] = [[0, 3, 4], [3, 1, 5], [4, 5, 2]];

    let mut hat_g: Vec<SpectralField> = Vec::with_capacity(6);
    for &(j, k) in &pairs {
        let mut values = vec![0.0; npts];
        let uj = u.component(j).values();
        let uk = u.component(k).values();
        for (v, (a, b)) in values.iter_mut().zip(uj.iter().zip(uk)) {
            *v = a * b;
        }
        if let Some(grad) = grad_d {
            for a in 0..3 {
                let gj = grad[a][j].values();
                let gk = grad[a][k].values();
                for (v, (x, y)) in values.iter_mut().zip(gj.iter().zip(gk)) {
                    *v += lambda * x * y;
                }
            }
        }
        let mut hat = spectral::forward(&ScalarField::from_values(grid, values).expect("grid"));
        if dealias {
            spectral::dealias(&mut hat);
        }
        hat_g.push(hat);
    }

    let mut p_hat = SpectralField::zeros(grid);
    let mut n_hat = [
        SpectralField::zeros(grid),
        SpectralField::zeros(grid),
        SpectralField::zeros(grid),
    ];
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let kv = [table.deriv_k(ix), table.deriv_k(iy), table.deriv_k(iz)];
                let ksq = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                let mut p = Complex64::ZERO;
                if ksq != 0.0 {
                    for (slot, &(j, k)) in pairs.iter().enumerate() {
                        let sym = if j == k { 1.0 } else { 2.0 };
                        p -= sym * kv[j] * kv[k] / ksq * hat_g[slot].coeffs()[idx];
                    }
                }
                p_hat.coeffs_mut()[idx] = p;
                for j in 0..3 {
                    let mut acc = Complex64::ZERO;
                    for k in 0..3 {
                        acc += Complex64::new(0.0, -kv[k]) * hat_g[LOOKUP[j][k]].coeffs()[idx];
                    }
                    acc += Complex64::new(0.0, -kv[j]) * p;
                    n_hat[j].coeffs_mut()[idx] = acc;
                }
                idx += 1;
            }
        }
    }
    VelocityTendency { n_hat, p_hat }
}

/// Explicit part of the director equation in spectral space (diffusion is
/// handled by the integrating factor): -u.grad d plus either the curvature
/// term gamma |grad d|^2 d or the penalty gamma (1/eps^2)(1-|d|^2) d.
fn director_nonlinear(
    u: Option<&VectorField>,
    d: &VectorField,
    grad_d: Option<&Grad3>,
    constraint: Constraint,
    gl_epsilon: Option<f64>,
    gamma: f64,
    dealias: bool,
) -> Hat3 {
    let grid = d.grid();
    let npts = grid.point_count();

    let mut curvature = vec![0.0; npts];
    match constraint {
        Constraint::Renormalize => {
            let grad = grad_d.expect("renormalize constraint needs the director gradient");
            for a in 0..3 {
                for j in 0..3 {
                    for (c, v) in curvature.iter_mut().zip(grad[a][j].values()) {
                        *c += v * v;
                    }
                }
            }
        }
        Constraint::GinzburgLandau => {
            let inv_eps_sq = 1.0 / gl_epsilon.expect("gl constraint carries eps").powi(2);
            let (dx, dy, dz) = (
                d.component(0).values(),
                d.component(1).values(),
                d.component(2).values(),
            );
            for (i, c) in curvature.iter_mut().enumerate() {
                let m2 = dx[i] * dx[i] + dy[i] * dy[i] + dz[i] * dz[i];
                *c = inv_eps_sq * (1.0 - m2);
            }
        }
    }

    let mut out: Vec<SpectralField> = Vec::with_capacity(3);
    for a in 0..3 {
        let mut values: Vec<f64> = d
            .component(a)
            .values()
            .iter()
            .zip(&curvature)
            .map(|(&da, &c)| gamma * c * da)
            .collect();
        if let Some(u) = u {
            let grad = grad_d.expect("advection needs the director gradient");
            for j in 0..3 {
                let uj = u.component(j).values();
                let gj = grad[a][j].values();
                for (v, (x, y)) in values.iter_mut().zip(uj.iter().zip(gj)) {
                    *v -= x * y;
                }
            }
        }
        let mut hat = spectral::forward(&ScalarField::from_values(grid, values).expect("grid"));
        if dealias {
            spectral::dealias(&mut hat);
        }
        out.push(hat);
    }
    out.try_into().expect("three components")
}

/// Full velocity tendency -u.grad u + nu lap u - grad P - lambda div(grad d (.) grad d)
/// in physical space, with the pressure recomputed from (u, d).
pub fn rhs_velocity(state: &FlowState) -> VectorField {
    rhs_velocity_with(state, &SchemeConfig::default())
}

pub fn rhs_velocity_with(state: &FlowState, cfg: &SchemeConfig) -> VectorField {
    let table = spectral::wavevectors(state.grid());
    let grad_d = match cfg.model {
        Model::NavierStokesOnly => None,
        _ => Some(gradient_from_hat(&to_hat(state.director.as_vector()))),
    };
    let tendency = velocity_nonlinear(
        &table,
        &state.velocity,
        grad_d.as_ref(),
        cfg.elastic_coupling,
        cfg.dealias,
    );
    let u_hat = to_hat(&state.velocity);
    let mut out = tendency.n_hat;
    let n = state.grid().n();
    for j in 0..3 {
        let mut idx = 0;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    out[j].coeffs_mut()[idx] -=
                        cfg.viscosity * table.k_sq_deriv(ix, iy, iz) * u_hat[j].coeffs()[idx];
                    idx += 1;
                }
            }
        }
    }
    from_hat(&out)
}

/// Director tendency -u.grad d + gamma (lap d + |grad d|^2 d), physical space.
pub fn rhs_director(state: &FlowState) -> VectorField {
    let d = state.director.as_vector();
    let d_hat = to_hat(d);
    let grad = gradient_from_hat(&d_hat);
    let n_hat = director_nonlinear(
        Some(&state.velocity),
        d,
        Some(&grad),
        Constraint::Renormalize,
        None,
        1.0,
        true,
    );
    add_diffusion_and_invert(&d_hat, n_hat, 1.0, state.grid())
}

/// Ginzburg-Landau director tendency -u.grad d + lap d + (1/eps^2)(1-|d|^2) d.
/// The director need not be unit here.
pub fn rhs_director_gl(state: &FlowState, eps: f64) -> VectorField {
    let d = state.director.as_vector();
    let d_hat = to_hat(d);
    let grad = gradient_from_hat(&d_hat);
    let n_hat = director_nonlinear(
        Some(&state.velocity),
        d,
        Some(&grad),
        Constraint::GinzburgLandau,
        Some(eps),
        1.0,
        true,
    );
    add_diffusion_and_invert(&d_hat, n_hat, 1.0, state.grid())
}

fn add_diffusion_and_invert(
    d_hat: &Hat3,
    mut n_hat: Hat3,
    gamma: f64,
    grid: PeriodicGrid,
) -> VectorField {
    let table = spectral::wavevectors(grid);
    let n = grid.n();
    for a in 0..3 {
        let mut idx = 0;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    n_hat[a].coeffs_mut()[idx] -=
                        gamma * table.k_sq_deriv(ix, iy, iz) * d_hat[a].coeffs()[idx];
                    idx += 1;
                }
            }
        }
    }
    from_hat(&n_hat)
}

// ---------------------------------------------------------------------------
// time stepping
// ---------------------------------------------------------------------------

/// Per-run context: wavevectors and the cached heat multipliers.
struct StepContext {
    table: Arc<WaveVectorTable>,
    /// exp(-nu |k|^2 dt) per mode.
    damp_u: Vec<f64>,
    /// exp(-gamma |k|^2 dt) per mode.
    damp_d: Vec<f64>,
    cfg: SchemeConfig,
}

impl StepContext {
    fn new(grid: PeriodicGrid, cfg: &SchemeConfig) -> Self {
        let table = spectral::wavevectors(grid);
        let n = grid.n();
        let mut damp_u = Vec::with_capacity(grid.point_count());
        let mut damp_d = Vec::with_capacity(grid.point_count());
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let ksq = table.k_sq_full(ix, iy, iz);
                    damp_u.push((-cfg.viscosity * ksq * cfg.dt).exp());
                    damp_d.push((-cfg.relaxation * ksq * cfg.dt).exp());
                }
            }
        }
        Self {
            table,
            damp_u,
            damp_d,
            cfg: cfg.clone(),
        }
    }
}

/// A consistent physical/spectral snapshot of the evolving fields.
struct Stage {
    u: VectorField,
    u_hat: Hat3,
    d: VectorField,
    d_hat: Hat3,
}

impl Stage {
    fn from_state(state: &FlowState) -> Self {
        let u = state.velocity.clone();
        let d = state.director.as_vector().clone();
        let u_hat = to_hat(&u);
        let d_hat = to_hat(&d);
        Self { u, u_hat, d, d_hat }
    }
}

struct Tendency {
    u: Option<Hat3>,
    d: Option<Hat3>,
}

fn eval_tendency(ctx: &StepContext, stage: &Stage) -> Tendency {
    let cfg = &ctx.cfg;
    let need_grad_d = match (cfg.model, cfg.constraint) {
        (Model::NavierStokesOnly, _) => false,
        (Model::HarmonicMapOnly, Constraint::GinzburgLandau) => false,
        _ => true,
    };
    let grad_d = if need_grad_d {
        Some(gradient_from_hat(&stage.d_hat))
    } else {
        None
    };

    let u = match cfg.model {
        Model::HarmonicMapOnly => None,
        Model::Full => Some(velocity_nonlinear(
            &ctx.table,
            &stage.u,
            grad_d.as_ref(),
            cfg.elastic_coupling,
            cfg.dealias,
        )),
        Model::NavierStokesOnly => Some(velocity_nonlinear(
            &ctx.table,
            &stage.u,
            None,
            cfg.elastic_coupling,
            cfg.dealias,
        )),
    };

    let d = match cfg.model {
        Model::NavierStokesOnly => None,
        Model::Full => Some(director_nonlinear(
            Some(&stage.u),
            &stage.d,
            grad_d.as_ref(),
            cfg.constraint,
            cfg.gl_epsilon,
            cfg.relaxation,
            cfg.dealias,
        )),
        Model::HarmonicMapOnly => Some(director_nonlinear(
            None,
            &stage.d,
            grad_d.as_ref(),
            cfg.constraint,
            cfg.gl_epsilon,
            cfg.relaxation,
            cfg.dealias,
        )),
    };

    Tendency {
        u: u.map(|t| t.n_hat),
        d,
    }
}

/// hat_out = damp * (hat + dt * k1)  (predictor / Euler combination)
fn if_euler_combine(hat: &Hat3, k1: &Hat3, damp: &[f64], dt: f64) -> Hat3 {
    let mut out = hat.clone();
    for a in 0..3 {
        for (slot, (o, k)) in out[a]
            .coeffs_mut()
            .iter_mut()
            .zip(k1[a].coeffs())
            .enumerate()
        {
            *o = damp[slot] * (*o + dt * k);
        }
    }
    out
}

/// hat_out = damp * hat + dt/2 * (damp * k1 + k2)  (Heun corrector)
fn if_heun_combine(hat: &Hat3, k1: &Hat3, k2: &Hat3, damp: &[f64], dt: f64) -> Hat3 {
    let mut out = hat.clone();
    for a in 0..3 {
        for (slot, o) in out[a].coeffs_mut().iter_mut().enumerate() {
            let k1v = k1[a].coeffs()[slot];
            let k2v = k2[a].coeffs()[slot];
            *o = damp[slot] * *o + 0.5 * dt * (damp[slot] * k1v + k2v);
        }
    }
    out
}

fn project_hat(ctx: &StepContext, hat: &mut Hat3) {
    let n = ctx.table.grid().n();
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let kv = [
                    ctx.table.deriv_k(ix),
                    ctx.table.deriv_k(iy),
                    ctx.table.deriv_k(iz),
                ];
                let ksq = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                if ksq != 0.0 {
                    let dot = kv[0] * hat[0].coeffs()[idx]
                        + kv[1] * hat[1].coeffs()[idx]
                        + kv[2] * hat[2].coeffs()[idx];
                    for (a, k_a) in kv.iter().enumerate() {
                        hat[a].coeffs_mut()[idx] -= k_a / ksq * dot;
                    }
                }
                idx += 1;
            }
        }
    }
}

/// Materializes a consistent stage from updated spectral fields, applying the
/// velocity projection and the director constraint.
fn finalize_stage(ctx: &StepContext, mut u_hat: Hat3, d_hat: Hat3) -> Result<Stage> {
    let cfg = &ctx.cfg;
    if cfg.model != Model::HarmonicMapOnly {
        project_hat(ctx, &mut u_hat);
    }
    let u = from_hat(&u_hat);
    let (d, d_hat) = match (cfg.model, cfg.constraint) {
        (Model::NavierStokesOnly, _) | (_, Constraint::GinzburgLandau) => {
            (from_hat(&d_hat), d_hat)
        }
        (_, Constraint::Renormalize) => {
            let raw = from_hat(&d_hat);
            let d = crate::field::normalize_director(&raw)?.into_vector();
            let d_hat = to_hat(&d);
            (d, d_hat)
        }
    };
    Ok(Stage { u, u_hat, d, d_hat })
}

fn advance(ctx: &StepContext, stage: &Stage) -> Result<Stage> {
    let cfg = &ctx.cfg;
    let dt = cfg.dt;
    let k1 = eval_tendency(ctx, stage);

    match cfg.scheme {
        Scheme::ImexEuler => {
            let u_hat = match &k1.u {
                None => stage.u_hat.clone(),
                Some(k) => if_euler_combine(&stage.u_hat, k, &ctx.damp_u, dt),
            };
            let d_hat = match &k1.d {
                None => stage.d_hat.clone(),
                Some(k) => if_euler_combine(&stage.d_hat, k, &ctx.damp_d, dt),
            };
            finalize_stage(ctx, u_hat, d_hat)
        }
        Scheme::ImexRk2 => {
            let u_pred = match &k1.u {
                None => stage.u_hat.clone(),
                Some(k) => if_euler_combine(&stage.u_hat, k, &ctx.damp_u, dt),
            };
            let d_pred = match &k1.d {
                None => stage.d_hat.clone(),
                Some(k) => if_euler_combine(&stage.d_hat, k, &ctx.damp_d, dt),
            };
            let predictor = finalize_stage(ctx, u_pred, d_pred)?;
            let k2 = eval_tendency(ctx, &predictor);
            let u_hat = match (&k1.u, &k2.u) {
                (Some(a), Some(b)) => if_heun_combine(&stage.u_hat, a, b, &ctx.damp_u, dt),
                _ => stage.u_hat.clone(),
            };
            let d_hat = match (&k1.d, &k2.d) {
                (Some(a), Some(b)) => if_heun_combine(&stage.d_hat, a, b, &ctx.damp_d, dt),
                _ => stage.d_hat.clone(),
            };
            finalize_stage(ctx, u_hat, d_hat)
        }
    }
}

fn guard_stage(stage: &Stage, time: f64, guard: f64) -> Result<()> {
    if !stage.u.is_finite() || !stage.d.is_finite() {
        return Err(Error::BlowUpDetected {
            time,
            reason: "non-finite field values".into(),
        });
    }
    let sup = stage.u.sup_norm();
    if sup > guard {
        return Err(Error::BlowUpDetected {
            time,
            reason: format!("sup|u| = {sup:.3e} exceeded the overflow guard {guard:.1e}"),
        });
    }
    Ok(())
}

fn materialize(ctx: &StepContext, stage: &Stage, time: f64) -> Result<FlowState> {
    let grad_d = gradient_from_hat(&stage.d_hat);
    let with_pressure = velocity_nonlinear(
        &ctx.table,
        &stage.u,
        Some(&grad_d),
        ctx.cfg.elastic_coupling,
        ctx.cfg.dealias,
    );
    let pressure = spectral::inverse(&with_pressure.p_hat);
    match ctx.cfg.constraint {
        Constraint::Renormalize => {
            let director = DirectorField::new(stage.d.clone())?;
            FlowState::new(stage.u.clone(), director, pressure, time)
        }
        Constraint::GinzburgLandau => {
            FlowState::new_relaxed(stage.u.clone(), stage.d.clone(), pressure, time)
        }
    }
}

/// Advances a state by one step of the configured scheme. The output passes
/// the flow-state invariants; a non-finite value or an overflow-guard hit
/// surfaces as `BlowUpDetected`.
pub fn step(state: &FlowState, cfg: &SchemeConfig) -> Result<FlowState> {
    cfg.validate()?;
    let ctx = StepContext::new(state.grid(), cfg);
    let stage = Stage::from_state(state);
    let next = advance(&ctx, &stage)?;
    let time = state.time + cfg.dt;
    guard_stage(&next, time, cfg.overflow_guard)?;
    materialize(&ctx, &next, time)
}

fn ledger_entry(state: &FlowState, params: &LedgerParams) -> Result<LedgerEntry> {
    let grid = state.grid();
    let u = &state.velocity;
    let d_hat = to_hat(state.director.as_vector());
    let grad_d = gradient_from_hat(&d_hat);

    let mut grad_d_sq = vec![0.0; grid.point_count()];
    for a in 0..3 {
        for j in 0..3 {
            for (s, v) in grad_d_sq.iter_mut().zip(grad_d[a][j].values()) {
                *s += v * v;
            }
        }
    }
    let u_sq = u.magnitude_sq();

    let e2_field = ScalarField::from_values(
        grid,
        u_sq.values()
            .iter()
            .zip(&grad_d_sq)
            .map(|(a, b)| a + b)
            .collect(),
    )?;
    let e2 = integrate(&e2_field);

    let e3_field = ScalarField::from_values(
        grid,
        u_sq.values()
            .iter()
            .zip(&grad_d_sq)
            .map(|(a, b)| a.powf(1.5) + b.powf(1.5))
            .collect(),
    )?;
    let e3 = integrate(&e3_field);

    // dissipation integrand: |grad u|^2 + |lap d + |grad d|^2 d|^2
    let grad_u = gradient_from_hat(&to_hat(u));
    let mut diss = vec![0.0; grid.point_count()];
    for a in 0..3 {
        for j in 0..3 {
            for (s, v) in diss.iter_mut().zip(grad_u[a][j].values()) {
                *s += v * v;
            }
        }
    }
    let lap_d = spectral::laplacian_vector(state.director.as_vector());
    for a in 0..3 {
        let da = state.director.component(a).values();
        let la = lap_d.component(a).values();
        for (i, s) in diss.iter_mut().enumerate() {
            let tension = la[i] + grad_d_sq[i] * da[i];
            *s += tension * tension;
        }
    }
    let dissipation = integrate(&ScalarField::from_values(grid, diss)?);

    let uloc3 = uloc_norm_state(
        state,
        &UlocParams {
            radius: params.uloc_radius,
            stride: params.uloc_stride,
        },
    )?
    .value;

    let sup_grad = sup_gradient_norms(state, 3);

    Ok(LedgerEntry {
        time: state.time,
        e2,
        e3,
        dissipation,
        uloc3,
        sup_grad,
    })
}

/// sup|grad^m u| + sup|grad^(m+1) d| for m = 0..orders-1; derivative tensors
/// are measured in the Frobenius norm with multinomial multiplicities.
pub fn sup_gradient_norms(state: &FlowState, orders: usize) -> Vec<f64> {
    let grid = state.grid();
    let u_hat = to_hat(&state.velocity);
    let d_hat = to_hat(state.director.as_vector());
    (0..orders)
        .map(|m| {
            derivative_tensor_sup(&u_hat, m, grid) + derivative_tensor_sup(&d_hat, m + 1, grid)
        })
        .collect()
}

/// sup over the grid of the Frobenius magnitude of the order-m derivative
/// tensor of a 3-component field.
fn derivative_tensor_sup(hat: &Hat3, m: usize, grid: PeriodicGrid) -> f64 {
    if m == 0 {
        return from_hat(hat).magnitude().sup_norm();
    }
    let table = spectral::wavevectors(grid);
    let n = grid.n();
    let mut sq = vec![0.0; grid.point_count()];
    // multi-indices (ax, ay, az) with |alpha| = m, weighted multinomially
    for ax in 0..=m {
        for ay in 0..=(m - ax) {
            let az = m - ax - ay;
            let mult = multinomial(m, ax, ay, az) as f64;
            for comp in hat.iter() {
                let mut der = comp.clone();
                let mut idx = 0;
                for ix in 0..n {
                    for iy in 0..n {
                        for iz in 0..n {
                            let ik = Complex64::new(0.0, 1.0);
                            let factor = (ik * table.deriv_k(ix)).powu(ax as u32)
                                * (ik * table.deriv_k(iy)).powu(ay as u32)
                                * (ik * table.deriv_k(iz)).powu(az as u32);
                            der.coeffs_mut()[idx] *= factor;
                            idx += 1;
                        }
                    }
                }
                let phys = spectral::inverse(&der);
                for (s, v) in sq.iter_mut().zip(phys.values()) {
                    *s += mult * v * v;
                }
            }
        }
    }
    sq.iter().fold(0.0f64, |acc, &v| acc.max(v)).sqrt()
}

fn multinomial(m: usize, a: usize, b: usize, c: usize) -> usize {
    fn fact(k: usize) -> usize {
        (1..=k).product::<usize>().max(1)
    }
    fact(m) / (fact(a) * fact(b) * fact(c))
}

/// Runs the configured scheme from `initial` to `t_end`, collecting saves,
/// ledger rows, and monitor events. Blow-up is reported in the outcome with
/// the trajectory up to the last completed save.
pub fn run_simulation(
    initial: &FlowState,
    cfg: &SchemeConfig,
    opts: &SimOptions,
) -> Result<SimOutcome> {
    cfg.validate()?;
    if opts.t_end < initial.time {
        return Err(Error::InvalidState(format!(
            "t_end {} precedes the initial time {}",
            opts.t_end, initial.time
        )));
    }
    let grid = initial.grid();
    let ctx = StepContext::new(grid, cfg);
    let n_steps = ((opts.t_end - initial.time) / cfg.dt).round() as usize;

    let mut ledger = EnergyLedger::new();
    let mut states = Vec::new();
    let mut events: Vec<MonitorEvent> = Vec::new();
    let mut fired: Vec<bool> = vec![false; opts.monitors.len()];
    let mut max_cfl: f64 = 0.0;

    let record = |state: &FlowState,
                  ledger: &mut EnergyLedger,
                  events: &mut Vec<MonitorEvent>,
                  fired: &mut Vec<bool>|
     -> Result<()> {
        ledger.push(ledger_entry(state, &opts.ledger)?)?;
        for (slot, monitor) in opts.monitors.iter().enumerate() {
            if fired[slot] {
                continue;
            }
            match monitor {
                MonitorSpec::BlowupThreshold {
                    radius,
                    threshold,
                    stride,
                } => {
                    let result = uloc_norm_state(
                        state,
                        &UlocParams {
                            radius: *radius,
                            stride: *stride,
                        },
                    )?;
                    if result.value > *threshold {
                        fired[slot] = true;
                        events.push(MonitorEvent {
                            time: state.time,
                            value: result.value,
                            threshold: *threshold,
                            radius: *radius,
                            center: result.center,
                        });
                    }
                }
            }
        }
        Ok(())
    };

    record(initial, &mut ledger, &mut events, &mut fired)?;
    states.push(initial.clone());

    let mut stage = Stage::from_state(initial);
    let mut blowup = None;
    let h = grid.spacing();
    for i in 1..=n_steps {
        let time = initial.time + i as f64 * cfg.dt;
        match advance(&ctx, &stage).and_then(|next| {
            guard_stage(&next, time, cfg.overflow_guard)?;
            Ok(next)
        }) {
            Ok(next) => {
                stage = next;
                max_cfl = max_cfl.max(stage.u.sup_norm() * cfg.dt / h);
                if i % opts.save_every == 0 || i == n_steps {
                    let state = materialize(&ctx, &stage, time)?;
                    record(&state, &mut ledger, &mut events, &mut fired)?;
                    states.push(state);
                }
            }
            Err(Error::BlowUpDetected { time, reason }) => {
                blowup = Some(BlowupInfo { time, reason });
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(SimOutcome {
        trajectory: Trajectory {
            states,
            ledger,
            scheme: cfg.clone(),
            events,
            max_cfl,
        },
        blowup,
    })
}

/// Like [`run_simulation`] but propagates blow-up as an error with the
/// offending time attached.
pub fn simulate(initial: &FlowState, cfg: &SchemeConfig, opts: &SimOptions) -> Result<Trajectory> {
    let outcome = run_simulation(initial, cfg, opts)?;
    if let Some(info) = outcome.blowup {
        return Err(Error::BlowUpDetected {
            time: info.time,
            reason: info.reason,
        });
    }
    Ok(outcome.trajectory)
}
