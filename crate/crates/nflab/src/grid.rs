//! Uniform periodic grids on the torus `[0, L)^3` and their wavevector tables.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Uniform N^3 discretization of a torus of side `length`.
///
/// Points sit at `x_i = i * spacing` with `spacing = length / n`, so the grid
/// never contains the far face: periodicity identifies it with `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    n: usize,
    length: f64,
}

impl PeriodicGrid {
    /// `n` must be even and at least 4 (transform convention needs a clean
    /// Nyquist split), `length` strictly positive.
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::BadGrid(n));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidState(format!("box side must be positive, got {length}")));
        }
        Ok(Self { n, length })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Number of grid points, `n^3`.
    pub fn point_count(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Volume of one grid cell, the quadrature weight.
    pub fn cell_volume(&self) -> f64 {
        let h = self.spacing();
        h * h * h
    }

    pub fn volume(&self) -> f64 {
        self.length * self.length * self.length
    }

    /// Row-major flat index with x slowest, z fastest.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    #[inline]
    pub fn coords_of(&self, index: usize) -> (usize, usize, usize) {
        let iz = index % self.n;
        let iy = (index / self.n) % self.n;
        let ix = index / (self.n * self.n);
        (ix, iy, iz)
    }

    /// Physical coordinates of a flat index.
    pub fn point(&self, index: usize) -> [f64; 3] {
        let (ix, iy, iz) = self.coords_of(index);
        let h = self.spacing();
        [ix as f64 * h, iy as f64 * h, iz as f64 * h]
    }

    /// Signed mode number of transform slot `i`: `0..n/2-1` then `-n/2..-1`.
    #[inline]
    pub fn mode_number(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Nearest grid index to a physical coordinate, wrapped onto the torus.
    pub fn nearest_index_1d(&self, x: f64) -> usize {
        let h = self.spacing();
        let i = (x / h).round() as i64;
        i.rem_euclid(self.n as i64) as usize
    }

    /// Minimum-image displacement between two coordinates along one axis.
    #[inline]
    pub fn min_image(&self, dx: f64) -> f64 {
        let l = self.length;
        let mut d = dx % l;
        if d > 0.5 * l {
            d -= l;
        } else if d < -0.5 * l {
            d += l;
        }
        d
    }

    /// Offsets of all grid points inside a ball of radius `radius` around a
    /// grid point, sorted by distance (ties broken lexicographically so that
    /// partial sums are reproducible and radius-monotone by construction).
    pub fn ball_offsets(&self, radius: f64) -> Result<Vec<BallOffset>> {
        if radius > 0.5 * self.length + 1e-12 {
            return Err(Error::RadiusTooLarge {
                radius,
                half_side: 0.5 * self.length,
            });
        }
        let h = self.spacing();
        let reach = (radius / h).floor() as i64;
        let mut offsets = Vec::new();
        for ox in -reach..=reach {
            for oy in -reach..=reach {
                for oz in -reach..=reach {
                    let d2 = (ox * ox + oy * oy + oz * oz) as f64 * h * h;
                    if d2 <= radius * radius * (1.0 + 1e-14) {
                        offsets.push(BallOffset {
                            offset: [ox, oy, oz],
                            distance: d2.sqrt(),
                        });
                    }
                }
            }
        }
        offsets.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .unwrap()
                .then(a.offset.cmp(&b.offset))
        });
        Ok(offsets)
    }
}

/// One lattice offset inside a ball mask, with its Euclidean distance.
#[derive(Debug, Clone, Copy)]
pub struct BallOffset {
    pub offset: [i64; 3],
    pub distance: f64,
}

/// Per-mode wavevector data for a grid, computed once and shared.
///
/// `deriv_k` carries the odd-derivative convention: the Nyquist slot is
/// zeroed so first derivatives of real fields stay real. `k_sq_full` keeps
/// the true `|k|^2` (Nyquist included) for diffusion multipliers.
#[derive(Debug, Clone)]
pub struct WaveVectorTable {
    grid: PeriodicGrid,
    /// 2*pi/L * mode number, with the Nyquist slot zeroed. Indexed per axis slot.
    deriv_k: Vec<f64>,
    /// 2*pi/L * mode number with Nyquist = -n/2 kept, squared, per axis slot.
    k_axis_sq_full: Vec<f64>,
    /// 2/3-rule survival per axis slot.
    dealias_keep: Vec<bool>,
}

impl WaveVectorTable {
    pub fn new(grid: PeriodicGrid) -> Self {
        let n = grid.n();
        let base = 2.0 * std::f64::consts::PI / grid.length();
        let cutoff = (n as i64) / 3;
        let mut deriv_k = Vec::with_capacity(n);
        let mut k_axis_sq_full = Vec::with_capacity(n);
        let mut dealias_keep = Vec::with_capacity(n);
        for i in 0..n {
            let m = grid.mode_number(i);
            let k_full = base * m as f64;
            k_axis_sq_full.push(k_full * k_full);
            deriv_k.push(if m == -(n as i64) / 2 { 0.0 } else { k_full });
            dealias_keep.push(m.abs() <= cutoff);
        }
        Self {
            grid,
            deriv_k,
            k_axis_sq_full,
            dealias_keep,
        }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    /// Derivative wavenumber along `axis` for slot `i` (Nyquist zeroed).
    #[inline]
    pub fn deriv_k(&self, i: usize) -> f64 {
        self.deriv_k[i]
    }

    /// Full `|k|^2` of one mode (Nyquist included), for heat-type multipliers.
    #[inline]
    pub fn k_sq_full(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.k_axis_sq_full[ix] + self.k_axis_sq_full[iy] + self.k_axis_sq_full[iz]
    }

    /// `|k'|^2` in the derivative convention; zero exactly on the mean mode
    /// and on pure-Nyquist modes.
    #[inline]
    pub fn k_sq_deriv(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        let (a, b, c) = (self.deriv_k[ix], self.deriv_k[iy], self.deriv_k[iz]);
        a * a + b * b + c * c
    }

    #[inline]
    pub fn keep_mode(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.dealias_keep[ix] && self.dealias_keep[iy] && self.dealias_keep[iz]
    }
}

/// Deterministic pairwise sum; error grows like log(n) instead of n.
pub fn stable_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    stable_sum(&values[..mid]) + stable_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(PeriodicGrid::new(3, 1.0).is_err());
        assert!(PeriodicGrid::new(7, 1.0).is_err());
        assert!(PeriodicGrid::new(0, 1.0).is_err());
        assert!(PeriodicGrid::new(8, -1.0).is_err());
        assert!(PeriodicGrid::new(8, 1.0).is_ok());
    }

    #[test]
    fn spacing_times_n_is_length() {
        let g = PeriodicGrid::new(32, 2.0 * std::f64::consts::PI).unwrap();
        assert_eq!(g.spacing() * g.n() as f64, g.length());
    }

    #[test]
    fn mode_numbers_cover_symmetric_range() {
        let g = PeriodicGrid::new(8, 1.0).unwrap();
        let modes: Vec<i64> = (0..8).map(|i| g.mode_number(i)).collect();
        assert_eq!(modes, vec![0, 1, 2, 3, -4, -3, -2, -1]);
    }

    #[test]
    fn zero_mode_present_exactly_once() {
        let g = PeriodicGrid::new(16, 1.0).unwrap();
        let zeros = (0..16).filter(|&i| g.mode_number(i) == 0).count();
        assert_eq!(zeros, 1);
    }

    #[test]
    fn nyquist_deriv_is_zeroed() {
        let g = PeriodicGrid::new(8, 2.0 * std::f64::consts::PI).unwrap();
        let table = WaveVectorTable::new(g);
        assert_eq!(table.deriv_k(4), 0.0);
        assert_eq!(table.deriv_k(1), 1.0);
        assert_eq!(table.deriv_k(7), -1.0);
        // the full |k|^2 keeps the Nyquist energy
        assert!(table.k_sq_full(4, 0, 0) > 0.0);
    }

    #[test]
    fn ball_offsets_sorted_and_bounded() {
        let g = PeriodicGrid::new(16, 2.0 * std::f64::consts::PI).unwrap();
        let offsets = g.ball_offsets(1.0).unwrap();
        assert!(!offsets.is_empty());
        for w in offsets.windows(2) {
            assert!(w[0].distance <= w[1].distance);
        }
        assert!(offsets.iter().all(|o| o.distance <= 1.0 + 1e-12));
        assert!(g.ball_offsets(10.0).is_err());
    }

    #[test]
    fn min_image_wraps() {
        let g = PeriodicGrid::new(8, 4.0).unwrap();
        assert!((g.min_image(3.5) - (-0.5)).abs() < 1e-15);
        assert!((g.min_image(-3.5) - 0.5).abs() < 1e-15);
        assert!((g.min_image(1.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stable_sum_matches_naive_on_small_input() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((stable_sum(&v) - naive).abs() < 1e-10);
    }
}
