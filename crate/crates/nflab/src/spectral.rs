//! Fourier-space operators on the periodic grid: transforms, derivatives,
//! Leray projection, Riesz transforms, inverse Laplacian, heat propagator,
//! the pressure solve, and the elastic stress of the director field.
//!
//! Conventions. Odd-derivative multipliers (gradient, divergence, Riesz)
//! zero the Nyquist slot so real fields map to real fields; the Poisson
//! algebra (pressure, inverse Laplacian) uses the same derivative
//! wavevectors so that residuals like `lap P + div div g` vanish mode by
//! mode. The heat propagator keeps the full `|k|^2`, Nyquist included,
//! since damping is well defined there. All Riesz-type multipliers map the
//! k = 0 mode to zero: the mean-zero pressure gauge.

use crate::error::{Error, Result};
use crate::field::{DirectorField, ScalarField, VectorField};
use crate::grid::{PeriodicGrid, WaveVectorTable};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct FftPair {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Plan cache keyed by transform length; the only shared state in the crate.
fn plans(n: usize) -> Arc<FftPair> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<FftPair>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(FftPair {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Fourier coefficients of one field component, N^3 modes in FFT slot order.
#[derive(Debug, Clone)]
pub struct SpectralField {
    grid: PeriodicGrid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self {
            grid,
            coeffs: vec![Complex64::ZERO; grid.point_count()],
        }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient of the mode in slot (ix, iy, iz).
    pub fn coeff(&self, ix: usize, iy: usize, iz: usize) -> Complex64 {
        self.coeffs[self.grid.index(ix, iy, iz)]
    }

    /// Largest |c(-k) - conj(c(k))| over all mode pairs; zero for the
    /// transform of a real field up to rounding.
    pub fn conjugate_symmetry_defect(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    let a = self.coeffs[self.grid.index(ix, iy, iz)];
                    let (jx, jy, jz) = ((n - ix) % n, (n - iy) % n, (n - iz) % n);
                    let b = self.coeffs[self.grid.index(jx, jy, jz)];
                    worst = worst.max((b - a.conj()).norm());
                }
            }
        }
        worst
    }
}

fn fft3_in_place(grid: PeriodicGrid, data: &mut [Complex64], forward: bool) {
    let n = grid.n();
    let pair = plans(n);
    let fft = if forward { &pair.forward } else { &pair.inverse };
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    let mut lane = vec![Complex64::ZERO; n];

    // axis 2: contiguous lanes
    for chunk in data.chunks_exact_mut(n) {
        fft.process_with_scratch(chunk, &mut scratch);
    }
    // axis 1: stride n
    for ix in 0..n {
        for iz in 0..n {
            let base = ix * n * n + iz;
            for iy in 0..n {
                lane[iy] = data[base + iy * n];
            }
            fft.process_with_scratch(&mut lane, &mut scratch);
            for iy in 0..n {
                data[base + iy * n] = lane[iy];
            }
        }
    }
    // axis 0: stride n^2
    for iy in 0..n {
        for iz in 0..n {
            let base = iy * n + iz;
            for ix in 0..n {
                lane[ix] = data[base + ix * n * n];
            }
            fft.process_with_scratch(&mut lane, &mut scratch);
            for ix in 0..n {
                data[base + ix * n * n] = lane[ix];
            }
        }
    }
}

/// Physical to spectral. Unnormalized forward transform.
pub fn forward(field: &ScalarField) -> SpectralField {
    let grid = field.grid();
    let mut coeffs: Vec<Complex64> = field
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft3_in_place(grid, &mut coeffs, true);
    SpectralField { grid, coeffs }
}

/// Spectral to physical, taking the real part; normalization 1/N^3 applied here.
pub fn inverse(field: &SpectralField) -> ScalarField {
    let grid = field.grid;
    let mut data = field.coeffs.clone();
    fft3_in_place(grid, &mut data, false);
    let scale = 1.0 / grid.point_count() as f64;
    ScalarField::from_values(grid, data.iter().map(|c| c.re * scale).collect())
        .expect("matching grid")
}

/// Largest imaginary residue left by an inverse transform; a real-output
/// operator should keep this at rounding level.
pub fn inverse_imag_residual(field: &SpectralField) -> f64 {
    let grid = field.grid;
    let mut data = field.coeffs.clone();
    fft3_in_place(grid, &mut data, false);
    let scale = 1.0 / grid.point_count() as f64;
    data.iter().fold(0.0f64, |m, c| m.max((c.im * scale).abs()))
}

/// Shared wavevector table per grid (cheap to build, cached for reuse).
pub fn wavevectors(grid: PeriodicGrid) -> Arc<WaveVectorTable> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<WaveVectorTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (grid.n(), grid.length().to_bits());
    let mut guard = cache.lock().expect("wavevector cache poisoned");
    guard
        .entry(key)
        .or_insert_with(|| Arc::new(WaveVectorTable::new(grid)))
        .clone()
}

/// Applies a per-mode multiplier in place.
fn apply_multiplier(field: &mut SpectralField, f: impl Fn(usize, usize, usize) -> Complex64) {
    let n = field.grid.n();
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                field.coeffs[idx] *= f(ix, iy, iz);
                idx += 1;
            }
        }
    }
}

/// Derivative along one axis, as a spectral multiplier i k_axis.
pub fn derivative_spectral(field: &SpectralField, axis: usize) -> SpectralField {
    let table = wavevectors(field.grid);
    let mut out = field.clone();
    let n = field.grid.n();
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let slot = [ix, iy, iz][axis];
                let k = table.deriv_k(slot);
                out.coeffs[idx] *= Complex64::new(0.0, k);
                idx += 1;
            }
        }
    }
    out
}

pub fn derivative(field: &ScalarField, axis: usize) -> ScalarField {
    inverse(&derivative_spectral(&forward(field), axis))
}

/// Gradient of a scalar field.
pub fn gradient(field: &ScalarField) -> VectorField {
    let hat = forward(field);
    VectorField::new([
        inverse(&derivative_spectral(&hat, 0)),
        inverse(&derivative_spectral(&hat, 1)),
        inverse(&derivative_spectral(&hat, 2)),
    ])
    .expect("matching grid")
}

/// Spectral divergence of a vector field.
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let table = wavevectors(grid);
    let n = grid.n();
    let hats = [
        forward(v.component(0)),
        forward(v.component(1)),
        forward(v.component(2)),
    ];
    let mut out = SpectralField::zeros(grid);
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let k = [table.deriv_k(ix), table.deriv_k(iy), table.deriv_k(iz)];
                let mut acc = Complex64::ZERO;
                for (a, hat) in hats.iter().enumerate() {
                    acc += Complex64::new(0.0, k[a]) * hat.coeffs[idx];
                }
                out.coeffs[idx] = acc;
                idx += 1;
            }
        }
    }
    inverse(&out)
}

/// All nine partial derivatives of a vector field: `out[i][j] = d_j v_i`.
pub fn vector_gradient(v: &VectorField) -> [[ScalarField; 3]; 3] {
    let make_row = |c: &ScalarField| {
        let hat = forward(c);
        [
            inverse(&derivative_spectral(&hat, 0)),
            inverse(&derivative_spectral(&hat, 1)),
            inverse(&derivative_spectral(&hat, 2)),
        ]
    };
    [
        make_row(v.component(0)),
        make_row(v.component(1)),
        make_row(v.component(2)),
    ]
}

/// Laplacian via the derivative-convention `|k'|^2`.
pub fn laplacian(field: &ScalarField) -> ScalarField {
    let grid = field.grid();
    let table = wavevectors(grid);
    let mut hat = forward(field);
    apply_multiplier(&mut hat, |ix, iy, iz| {
        Complex64::new(-table.k_sq_deriv(ix, iy, iz), 0.0)
    });
    inverse(&hat)
}

pub fn laplacian_vector(v: &VectorField) -> VectorField {
    VectorField::new([
        laplacian(v.component(0)),
        laplacian(v.component(1)),
        laplacian(v.component(2)),
    ])
    .expect("matching grid")
}

/// Inverse Laplacian with the mean-zero gauge: multiplier -1/|k'|^2 for
/// k != 0, zero on the mean mode.
pub fn inverse_laplacian(field: &ScalarField) -> ScalarField {
    let grid = field.grid();
    let table = wavevectors(grid);
    let mut hat = forward(field);
    apply_multiplier(&mut hat, |ix, iy, iz| {
        let ksq = table.k_sq_deriv(ix, iy, iz);
        if ksq == 0.0 {
            Complex64::ZERO
        } else {
            Complex64::new(-1.0 / ksq, 0.0)
        }
    });
    inverse(&hat)
}

/// j-th Riesz transform: multiplier i k_j / |k|, zero on the mean mode.
pub fn riesz_transform(axis: usize, field: &ScalarField) -> ScalarField {
    inverse(&riesz_spectral(&forward(field), axis))
}

pub fn riesz_spectral(field: &SpectralField, axis: usize) -> SpectralField {
    let table = wavevectors(field.grid);
    let n = field.grid.n();
    let mut out = field.clone();
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let ksq = table.k_sq_deriv(ix, iy, iz);
                let m = if ksq == 0.0 {
                    Complex64::ZERO
                } else {
                    let slot = [ix, iy, iz][axis];
                    Complex64::new(0.0, table.deriv_k(slot) / ksq.sqrt())
                };
                out.coeffs[idx] *= m;
                idx += 1;
            }
        }
    }
    out
}

/// Leray projection onto divergence-free fields: per mode k != 0,
/// v <- v - k (k . v) / |k|^2; the mean mode passes through.
pub fn leray_project(v: &VectorField) -> VectorField {
    let grid = v.grid();
    let table = wavevectors(grid);
    let n = grid.n();
    let mut hats = [
        forward(v.component(0)),
        forward(v.component(1)),
        forward(v.component(2)),
    ];
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let k = [table.deriv_k(ix), table.deriv_k(iy), table.deriv_k(iz)];
                let ksq = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                if ksq != 0.0 {
                    let dot = k[0] * hats[0].coeffs[idx]
                        + k[1] * hats[1].coeffs[idx]
                        + k[2] * hats[2].coeffs[idx];
                    for (a, k_a) in k.iter().enumerate() {
                        hats[a].coeffs[idx] -= k_a / ksq * dot;
                    }
                }
                idx += 1;
            }
        }
    }
    let [hx, hy, hz] = hats;
    VectorField::new([inverse(&hx), inverse(&hy), inverse(&hz)]).expect("matching grid")
}

/// Heat semigroup: multiplier exp(-|k|^2 tau) with the full Nyquist-included
/// spectrum. `tau` must be nonnegative.
pub fn heat_propagate(field: &ScalarField, tau: f64) -> Result<ScalarField> {
    if tau < 0.0 {
        return Err(Error::NegativeTime(tau));
    }
    let grid = field.grid();
    let table = wavevectors(grid);
    let mut hat = forward(field);
    apply_multiplier(&mut hat, |ix, iy, iz| {
        Complex64::new((-table.k_sq_full(ix, iy, iz) * tau).exp(), 0.0)
    });
    Ok(inverse(&hat))
}

pub fn heat_propagate_vector(v: &VectorField, tau: f64) -> Result<VectorField> {
    Ok(VectorField::new([
        heat_propagate(v.component(0), tau)?,
        heat_propagate(v.component(1), tau)?,
        heat_propagate(v.component(2), tau)?,
    ])
    .expect("matching grid"))
}

/// Gaussian mollifier exp(-w^2 |k|^2 / 2), the spectral stand-in for
/// convolution with a width-w kernel.
pub fn mollify(field: &ScalarField, width: f64) -> ScalarField {
    let grid = field.grid();
    let table = wavevectors(grid);
    let mut hat = forward(field);
    apply_multiplier(&mut hat, |ix, iy, iz| {
        Complex64::new((-0.5 * width * width * table.k_sq_full(ix, iy, iz)).exp(), 0.0)
    });
    inverse(&hat)
}

pub fn mollify_vector(v: &VectorField, width: f64) -> VectorField {
    VectorField::new([
        mollify(v.component(0), width),
        mollify(v.component(1), width),
        mollify(v.component(2), width),
    ])
    .expect("matching grid")
}

/// 2/3-rule truncation of a spectral field, in place.
pub fn dealias(field: &mut SpectralField) {
    let table = wavevectors(field.grid);
    let n = field.grid.n();
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                if !table.keep_mode(ix, iy, iz) {
                    field.coeffs[idx] = Complex64::ZERO;
                }
                idx += 1;
            }
        }
    }
}

/// Symmetric elastic stress of a director: S_ij = sum_a d_i d^a d_j d^a.
/// Stored as the six unique entries (xx, yy, zz, xy, xz, yz).
#[derive(Debug, Clone)]
pub struct StressField {
    pub entries: [ScalarField; 6],
}

impl StressField {
    /// (i, j) entry with i, j in 0..3.
    pub fn entry(&self, i: usize, j: usize) -> &ScalarField {
        const LOOKUP: [[usize; 3]; 3] = [[0, 3, 4], [3, 1, 5], [4, 5, 2]];
        &self.entries[LOOKUP[i][j]]
    }
}

/// Elastic stress of the director field and its spectral row divergence.
pub fn ericksen_stress(d: &DirectorField) -> (StressField, VectorField) {
    let grad = vector_gradient(d.as_vector());
    stress_from_gradient(&grad)
}

/// Same computation from a precomputed gradient `grad[a][j] = d_j d^a`.
pub fn stress_from_gradient(grad: &[[ScalarField; 3]; 3]) -> (StressField, VectorField) {
    let grid = grad[0][0].grid();
    let npts = grid.point_count();
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];
    let mut entries: Vec<ScalarField> = Vec::with_capacity(6);
    for &(i, j) in &pairs {
        let mut values = vec![0.0; npts];
        for a in 0..3 {
            let gi = grad[a][i].values();
            let gj = grad[a][j].values();
            for (v, (x, y)) in values.iter_mut().zip(gi.iter().zip(gj)) {
                *v += x * y;
            }
        }
        entries.push(ScalarField::from_values(grid, values).expect("matching grid"));
    }
    let stress = StressField {
        entries: entries.try_into().expect("six entries"),
    };
    let mut rows = Vec::with_capacity(3);
    for i in 0..3 {
        let row = VectorField::new([
            stress.entry(i, 0).clone(),
            stress.entry(i, 1).clone(),
            stress.entry(i, 2).clone(),
        ])
        .expect("matching grid");
        rows.push(divergence(&row));
    }
    let div = VectorField::new(rows.try_into().expect("three rows")).expect("matching grid");
    (stress, div)
}

/// Pressure from the Poisson relation -lap P = div div g with
/// g_jk = u^j u^k + grad_j d . grad_k d, solved per mode k != 0 as
/// P_hat = -(k_j k_k / |k|^2) g_hat_jk. Mean-zero by construction.
pub fn solve_pressure(u: &VectorField, d: &DirectorField) -> Result<ScalarField> {
    if u.grid() != d.grid() {
        return Err(Error::GridMismatch);
    }
    let grad_d = vector_gradient(d.as_vector());
    Ok(pressure_from_parts(u, Some(&grad_d)))
}

/// Pressure with a precomputed director gradient; `None` means the director
/// term is absent (pure fluid reduction).
pub fn pressure_from_parts(u: &VectorField, grad_d: Option<&[[ScalarField; 3]; 3]>) -> ScalarField {
    let grid = u.grid();
    let table = wavevectors(grid);
    let n = grid.n();
    let npts = grid.point_count();
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

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
                    *v += x * y;
                }
            }
        }
        let g = ScalarField::from_values(grid, values).expect("matching grid");
        hat_g.push(forward(&g));
    }

    let mut p_hat = SpectralField::zeros(grid);
    let mut idx = 0;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                let kv = [table.deriv_k(ix), table.deriv_k(iy), table.deriv_k(iz)];
                let ksq = kv[0] * kv[0] + kv[1] * kv[1] + kv[2] * kv[2];
                if ksq != 0.0 {
                    let mut acc = Complex64::ZERO;
                    for (slot, &(j, k)) in pairs.iter().enumerate() {
                        let w = kv[j] * kv[k] / ksq;
                        let sym = if j == k { 1.0 } else { 2.0 };
                        acc += sym * w * hat_g[slot].coeffs[idx];
                    }
                    p_hat.coeffs[idx] = -acc;
                }
                idx += 1;
            }
        }
    }
    inverse(&p_hat)
}

/// Trigonometric resampling onto a grid with `n_new` points per axis: modes
/// are copied where they exist, zero-padded or truncated otherwise. Exact in
/// both directions for band-limited fields.
pub fn resample(field: &ScalarField, n_new: usize) -> Result<ScalarField> {
    let old = field.grid();
    let new = PeriodicGrid::new(n_new, old.length())?;
    if n_new == old.n() {
        return Ok(field.clone());
    }
    let hat = forward(field);
    let mut out = SpectralField::zeros(new);
    let half: i64 = (old.n().min(n_new) as i64) / 2;
    let scale = new.point_count() as f64 / old.point_count() as f64;
    for ix in 0..old.n() {
        let mx = old.mode_number(ix);
        if mx.abs() >= half {
            continue;
        }
        for iy in 0..old.n() {
            let my = old.mode_number(iy);
            if my.abs() >= half {
                continue;
            }
            for iz in 0..old.n() {
                let mz = old.mode_number(iz);
                if mz.abs() >= half {
                    continue;
                }
                let slot = |m: i64| -> usize {
                    if m >= 0 {
                        m as usize
                    } else {
                        (m + n_new as i64) as usize
                    }
                };
                out.coeffs[new.index(slot(mx), slot(my), slot(mz))] =
                    hat.coeffs[old.index(ix, iy, iz)] * scale;
            }
        }
    }
    Ok(inverse(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::integrate;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid(n: usize) -> PeriodicGrid {
        PeriodicGrid::new(n, 2.0 * PI).unwrap()
    }

    /// Random band-limited trig polynomial with an analytic evaluator.
    pub(crate) struct TrigPoly {
        modes: Vec<([i64; 3], f64, f64)>,
    }

    impl TrigPoly {
        pub(crate) fn random(seed: u64, max_mode: i64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut modes = Vec::new();
            for mx in 0..=max_mode {
                for my in -max_mode..=max_mode {
                    for mz in -max_mode..=max_mode {
                        if (mx, my, mz) == (0, 0, 0) || (mx == 0 && (my < 0 || (my == 0 && mz < 0)))
                        {
                            continue;
                        }
                        modes.push((
                            [mx, my, mz],
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                        ));
                    }
                }
            }
            Self { modes }
        }

        pub(crate) fn eval(&self, x: f64, y: f64, z: f64) -> f64 {
            let mut v = 0.0;
            for (m, a, b) in &self.modes {
                let phase = m[0] as f64 * x + m[1] as f64 * y + m[2] as f64 * z;
                v += a * phase.cos() + b * phase.sin();
            }
            v
        }

        pub(crate) fn sample(&self, grid: PeriodicGrid) -> ScalarField {
            ScalarField::from_fn(grid, |x, y, z| self.eval(x, y, z))
        }
    }

    #[test]
    fn round_trip_is_tight() {
        let g = grid(16);
        let f = TrigPoly::random(3, 3).sample(g);
        let back = inverse(&forward(&f));
        let scale = f.sup_norm();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn forward_of_real_field_is_conjugate_symmetric() {
        let g = grid(8);
        let f = TrigPoly::random(11, 2).sample(g);
        let hat = forward(&f);
        assert!(hat.conjugate_symmetry_defect() < 1e-9 * g.point_count() as f64);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = grid(8);
        let f = ScalarField::constant(g, 4.2);
        assert_eq!(gradient(&f).sup_norm(), 0.0);
    }

    #[test]
    fn gradient_of_sin_is_cos() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, _, _| x.sin());
        let grad = gradient(&f);
        let expect = ScalarField::from_fn(g, |x, _, _| x.cos());
        for (a, b) in grad.component(0).values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(grad.component(1).sup_norm() < 1e-12);
        assert!(grad.component(2).sup_norm() < 1e-12);
    }

    #[test]
    fn gradient_matches_fd_oracle() {
        // 4th-order centered differences of the analytic evaluator
        let g = grid(64);
        let poly = TrigPoly::random(5, 3);
        let f = poly.sample(g);
        let grad = gradient(&f);
        let hfd = 2.0e-3;
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for ix in (0..64).step_by(7) {
            for iy in (0..64).step_by(7) {
                for iz in (0..64).step_by(7) {
                    let [x, y, z] = g.point(g.index(ix, iy, iz));
                    let fd = (8.0 * (poly.eval(x + hfd, y, z) - poly.eval(x - hfd, y, z))
                        - (poly.eval(x + 2.0 * hfd, y, z) - poly.eval(x - 2.0 * hfd, y, z)))
                        / (12.0 * hfd);
                    let got = grad.component(0).values()[g.index(ix, iy, iz)];
                    worst = worst.max((got - fd).abs());
                    scale = scale.max(fd.abs());
                }
            }
        }
        assert!(worst / scale < 1e-6, "rel err {}", worst / scale);
    }

    #[test]
    fn leray_annihilates_gradients() {
        let g = grid(16);
        let psi = TrigPoly::random(5, 3).sample(g);
        let gp = gradient(&psi);
        let projected = leray_project(&gp);
        assert!(projected.sup_norm() < 1e-10 * (1.0 + gp.sup_norm()));
    }

    #[test]
    fn leray_fixes_divergence_free_fields() {
        let g = grid(16);
        let v = VectorField::from_fns(
            g,
            |_, y, _| y.sin(),
            |x, _, _| (2.0 * x).cos(),
            |x, y, _| (x + y).sin(),
        );
        // this field is divergence-free (each component independent of its own axis)
        let p = leray_project(&v);
        let diff = p.sub(&v).unwrap();
        assert!(diff.sup_norm() < 1e-12 * v.sup_norm());
    }

    #[test]
    fn leray_plane_wave_closed_form() {
        // v = a exp(ik.x) maps to (a - k (k.a)/|k|^2) exp(ik.x)
        let g = grid(16);
        let k = [1.0, 2.0, 0.0];
        let a = [1.0, 0.5, -0.3];
        let wave =
            |x: f64, y: f64, z: f64| (k[0] * x + k[1] * y + k[2] * z).cos();
        let v = VectorField::from_fns(
            g,
            |x, y, z| a[0] * wave(x, y, z),
            |x, y, z| a[1] * wave(x, y, z),
            |x, y, z| a[2] * wave(x, y, z),
        );
        let ksq = 5.0;
        let dot = k[0] * a[0] + k[1] * a[1] + k[2] * a[2];
        let proj = [
            a[0] - k[0] * dot / ksq,
            a[1] - k[1] * dot / ksq,
            a[2] - k[2] * dot / ksq,
        ];
        let p = leray_project(&v);
        let expect = VectorField::from_fns(
            g,
            |x, y, z| proj[0] * wave(x, y, z),
            |x, y, z| proj[1] * wave(x, y, z),
            |x, y, z| proj[2] * wave(x, y, z),
        );
        let diff = p.sub(&expect).unwrap();
        assert!(diff.sup_norm() < 1e-12);
    }

    #[test]
    fn leray_is_idempotent_and_self_adjoint() {
        let g = grid(16);
        let v = VectorField::from_fns(
            g,
            |x, y, _| (x + y).sin(),
            |x, _, z| (x - z).cos(),
            |_, y, z| (2.0 * y + z).sin(),
        );
        let w = VectorField::from_fns(
            g,
            |_, y, z| (y * 1.0 + z).cos(),
            |x, _, _| (2.0 * x).sin(),
            |x, y, _| (x - 2.0 * y).cos(),
        );
        let pv = leray_project(&v);
        let ppv = leray_project(&pv);
        assert!(ppv.sub(&pv).unwrap().sup_norm() < 1e-12 * (1.0 + pv.sup_norm()));

        // <Pv, w> = <v, Pw> in the discrete L^2 inner product
        let pw = leray_project(&w);
        let inner = |a: &VectorField, b: &VectorField| -> f64 {
            let mut total = 0.0;
            for c in 0..3 {
                total += integrate(&a.component(c).zip(b.component(c), |x, y| x * y).unwrap());
            }
            total
        };
        let lhs = inner(&pv, &w);
        let rhs = inner(&v, &pw);
        assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn riesz_constant_maps_to_zero() {
        let g = grid(8);
        let f = ScalarField::constant(g, 3.0);
        assert!(riesz_transform(0, &f).sup_norm() < 1e-14);
    }

    #[test]
    fn riesz_of_sin_x_on_the_two_modes() {
        // hand evaluation: sin x lives on the modes k = (+-1, 0, 0), where
        // the multiplier i k_1/|k| acts as +-i, turning sin x into cos x
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, _, _| x.sin());
        let r = riesz_transform(0, &f);
        let expect = ScalarField::from_fn(g, |x, _, _| x.cos());
        for (a, b) in r.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn riesz_composition_resolves_identity() {
        let g = grid(16);
        let f = TrigPoly::random(7, 4).sample(g);
        let mut acc = ScalarField::zeros(g);
        for j in 0..3 {
            let rr = riesz_transform(j, &riesz_transform(j, &f));
            acc = acc.zip(&rr, |a, b| a + b).unwrap();
        }
        let mean_f = crate::field::mean(&f);
        let expect = f.map(|v| -(v - mean_f));
        let scale = f.sup_norm();
        for (a, b) in acc.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn riesz_output_of_real_field_is_real() {
        let g = grid(16);
        let f = TrigPoly::random(9, 4).sample(g);
        let hat = riesz_spectral(&forward(&f), 1);
        assert!(inverse_imag_residual(&hat) < 1e-12 * (1.0 + f.sup_norm()));
    }

    #[test]
    fn heat_propagate_identity_at_zero() {
        let g = grid(8);
        let f = TrigPoly::random(2, 2).sample(g);
        let out = heat_propagate(&f, 0.0).unwrap();
        for (a, b) in f.values().iter().zip(out.values()) {
            assert!((a - b).abs() < 1e-13 * (1.0 + f.sup_norm()));
        }
        assert!(heat_propagate(&f, -0.1).is_err());
    }

    #[test]
    fn heat_propagate_damps_single_mode() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, y, _| (x + 2.0 * y).sin());
        let tau = 0.05;
        let out = heat_propagate(&f, tau).unwrap();
        let factor = (-5.0 * tau).exp();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b * factor).abs() < 1e-13);
        }
    }

    #[test]
    fn heat_propagate_semigroup() {
        let g = grid(16);
        let f = TrigPoly::random(13, 3).sample(g);
        let one = heat_propagate(&heat_propagate(&f, 0.02).unwrap(), 0.03).unwrap();
        let two = heat_propagate(&f, 0.05).unwrap();
        for (a, b) in one.values().iter().zip(two.values()) {
            assert!((a - b).abs() < 1e-13 * (1.0 + f.sup_norm()));
        }
    }

    #[test]
    fn inverse_laplacian_eigenmode_and_gauge() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, _, _| x.sin());
        let out = inverse_laplacian(&f);
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a + b).abs() < 1e-12);
        }
        let c = ScalarField::constant(g, 7.0);
        assert!(inverse_laplacian(&c).sup_norm() < 1e-13);
    }

    #[test]
    fn inverse_laplacian_round_trip() {
        let g = grid(16);
        let f = TrigPoly::random(17, 4).sample(g);
        let mean_f = crate::field::mean(&f);
        let back = laplacian(&inverse_laplacian(&f));
        let scale = f.sup_norm();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a + mean_f - b).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn stress_of_constant_director_is_zero() {
        let g = grid(8);
        let d = DirectorField::constant(g, [0.0, 0.0, 1.0]).unwrap();
        let (stress, div) = ericksen_stress(&d);
        for e in &stress.entries {
            assert_eq!(e.sup_norm(), 0.0);
        }
        assert_eq!(div.sup_norm(), 0.0);
    }

    #[test]
    fn stress_of_helical_director() {
        // d = (cos x, sin x, 0): only the (1,1) entry survives and equals 1
        let g = grid(16);
        let raw = VectorField::from_fns(g, |x, _, _| x.cos(), |x, _, _| x.sin(), |_, _, _| 0.0);
        let d = DirectorField::new(raw).unwrap();
        let (stress, _) = ericksen_stress(&d);
        for (a, val) in stress.entries.iter().zip([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]) {
            let dev = a
                .values()
                .iter()
                .fold(0.0f64, |m, &v| m.max((v - val).abs()));
            assert!(dev < 1e-10, "entry deviates by {dev}");
        }
    }

    #[test]
    fn stress_divergence_identity() {
        // div (grad d . grad d) = lap d . grad d + grad(|grad d|^2 / 2), any smooth d
        let g = grid(64);
        let raw = VectorField::from_fns(
            g,
            |x, y, _| (0.4 * (x.sin() + (2.0 * y).cos())).cos(),
            |x, y, _| (0.4 * (x.sin() + (2.0 * y).cos())).sin(),
            |_, y, z| 0.2 * (y + z).sin(),
        );
        let d = normalize_director_from(&raw);
        let (_, div) = ericksen_stress(&d);

        let grad = vector_gradient(d.as_vector());
        let lap = laplacian_vector(d.as_vector());
        let mut gradsq = ScalarField::zeros(g);
        for a in 0..3 {
            for j in 0..3 {
                gradsq = gradsq.zip(&grad[a][j], |s, v| s + v * v).unwrap();
            }
        }
        let grad_half = gradient(&gradsq.scale(0.5));
        for i in 0..3 {
            let mut expect = grad_half.component(i).clone();
            for a in 0..3 {
                expect = expect
                    .zip(&lap.component(a).zip(&grad[a][i], |l, gi| l * gi).unwrap(), |s, v| s + v)
                    .unwrap();
            }
            let got = div.component(i);
            let scale = expect.sup_norm().max(1.0);
            for (x, y) in got.values().iter().zip(expect.values()) {
                assert!((x - y).abs() < 1e-6 * scale);
            }
        }
    }

    fn normalize_director_from(raw: &VectorField) -> DirectorField {
        crate::field::normalize_director(raw).unwrap()
    }

    #[test]
    fn pressure_zero_for_trivial_state() {
        let g = grid(8);
        let u = VectorField::zeros(g);
        let d = DirectorField::constant(g, [0.0, 0.0, 1.0]).unwrap();
        let p = solve_pressure(&u, &d).unwrap();
        assert!(p.sup_norm() < 1e-14);
    }

    #[test]
    fn pressure_taylor_green_closed_form() {
        // momentum balance for u = (sin x cos y, -cos x sin y, 0) forces
        // P = (cos 2x + cos 2y)/4 in the mean-zero gauge
        let g = grid(32);
        let u = VectorField::from_fns(
            g,
            |x, y, _| x.sin() * y.cos(),
            |x, y, _| -(x.cos() * y.sin()),
            |_, _, _| 0.0,
        );
        let d = DirectorField::constant(g, [0.0, 0.0, 1.0]).unwrap();
        let p = solve_pressure(&u, &d).unwrap();
        let expect = ScalarField::from_fn(g, |x, y, _| ((2.0 * x).cos() + (2.0 * y).cos()) / 4.0);
        for (a, b) in p.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn pressure_residual_is_spectrally_small() {
        let g = grid(16);
        let u = leray_project(&VectorField::from_fns(
            g,
            |x, y, _| (x + y).sin(),
            |_, y, z| (y - 2.0 * z).cos(),
            |x, _, z| (z + 3.0 * x).sin(),
        ));
        let raw = VectorField::from_fns(
            g,
            |x, _, _| (0.3 * x.sin()).cos(),
            |x, _, _| (0.3 * x.sin()).sin(),
            |_, y, _| 0.1 * y.cos(),
        );
        let d = normalize_director_from(&raw);
        let p = solve_pressure(&u, &d).unwrap();

        // residual lap P + div div g, all derivatives spectral
        let lap_p = laplacian(&p);
        let grad_d = vector_gradient(d.as_vector());
        let mut ddg = ScalarField::zeros(g);
        for j in 0..3 {
            for k in 0..3 {
                let mut gjk: Vec<f64> = u
                    .component(j)
                    .values()
                    .iter()
                    .zip(u.component(k).values())
                    .map(|(a, b)| a * b)
                    .collect();
                for a in 0..3 {
                    for (v, (x, y)) in gjk
                        .iter_mut()
                        .zip(grad_d[a][j].values().iter().zip(grad_d[a][k].values()))
                    {
                        *v += x * y;
                    }
                }
                let gf = ScalarField::from_values(g, gjk).unwrap();
                let d2 = derivative(&derivative(&gf, j), k);
                ddg = ddg.zip(&d2, |s, v| s + v).unwrap();
            }
        }
        let resid = lap_p.zip(&ddg, |a, b| a + b).unwrap();
        assert!(resid.sup_norm() < 1e-8, "residual {}", resid.sup_norm());
    }

    #[test]
    fn pressure_invariant_under_director_shift() {
        // adding a constant to a director component leaves grad d unchanged
        let g = grid(8);
        let u = VectorField::zeros(g);
        let raw = VectorField::from_fns(
            g,
            |x, _, _| (0.2 * x.sin()).cos(),
            |x, _, _| (0.2 * x.sin()).sin(),
            |_, _, _| 0.0,
        );
        let d = normalize_director_from(&raw);
        let p1 = solve_pressure(&u, &d).unwrap();
        let shifted = VectorField::new([
            d.component(0).map(|v| v + 0.7),
            d.component(1).clone(),
            d.component(2).clone(),
        ])
        .unwrap();
        // bypass the unit check: gradients are what matters here
        let d2 = DirectorField::new_unchecked(shifted);
        let p2 = solve_pressure(&u, &d2).unwrap();
        for (a, b) in p1.values().iter().zip(p2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mollify_multiplies_each_mode() {
        let g = grid(16);
        let f = ScalarField::from_fn(g, |x, y, _| (x + 2.0 * y).sin());
        let w = 0.3;
        let out = mollify(&f, w);
        let factor = (-0.5 * w * w * 5.0).exp();
        for (a, b) in out.values().iter().zip(f.values()) {
            assert!((a - b * factor).abs() < 1e-13);
        }
    }

    #[test]
    fn resample_round_trip_band_limited() {
        let g = grid(16);
        let f = TrigPoly::random(21, 3).sample(g);
        let up = resample(&f, 32).unwrap();
        let down = resample(&up, 16).unwrap();
        for (a, b) in down.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + f.sup_norm()));
        }
    }

    #[test]
    fn dealias_zeroes_high_modes() {
        let g = grid(8);
        let f = ScalarField::from_fn(g, |x, _, _| (3.0 * x).sin() + x.sin());
        let mut hat = forward(&f);
        dealias(&mut hat);
        let back = inverse(&hat);
        let expect = ScalarField::from_fn(g, |x, _, _| x.sin());
        for (a, b) in back.values().iter().zip(expect.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
