//! Periodic lattices and real-valued fields on them.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Periodic lattice `{0, h, .., (n-1)h}^d` with `h = L/n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub n: usize,
    pub length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return invalid(format!("grid dimension must be 1 or 2, got {dim}"));
        }
        if n < 4 || !n.is_power_of_two() {
            return invalid(format!("grid size must be a power of two >= 4, got {n}"));
        }
        if !(length.is_finite() && length > 0.0) {
            return invalid(format!("domain length must be positive, got {length}"));
        }
        Ok(Self { dim, n, length })
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Number of lattice sites, `n^d`.
    pub fn sites(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Volume of one lattice cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Multi-index of a flat site index (row-major, last axis fastest).
    pub fn unravel(&self, site: usize) -> [usize; 2] {
        if self.dim == 1 {
            [site, 0]
        } else {
            [site / self.n, site % self.n]
        }
    }

    pub fn ravel(&self, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            idx[0]
        } else {
            idx[0] * self.n + idx[1]
        }
    }

    pub fn coordinate(&self, site: usize) -> [f64; 2] {
        let h = self.spacing();
        let [i, j] = self.unravel(site);
        [i as f64 * h, j as f64 * h]
    }

    /// Signed integer wavenumber for an FFT-ordered index along one axis.
    pub fn wavenumber(&self, k: usize) -> i64 {
        if k < self.n / 2 {
            k as i64
        } else {
            k as i64 - self.n as i64
        }
    }

    /// Angular frequency vector `2 pi k / L` of a flat FFT-ordered mode.
    pub fn frequency(&self, mode: usize) -> [f64; 2] {
        let base = 2.0 * PI / self.length;
        let [a, b] = self.unravel(mode);
        if self.dim == 1 {
            [base * self.wavenumber(a) as f64, 0.0]
        } else {
            [
                base * self.wavenumber(a) as f64,
                base * self.wavenumber(b) as f64,
            ]
        }
    }

    pub fn frequency_norm_sq(&self, mode: usize) -> f64 {
        let [a, b] = self.frequency(mode);
        a * a + b * b
    }

    /// Flat index of the mode with negated wavenumber.
    pub fn conjugate_mode(&self, mode: usize) -> usize {
        let n = self.n;
        let [a, b] = self.unravel(mode);
        let neg = |k: usize| (n - k) % n;
        if self.dim == 1 {
            neg(a)
        } else {
            self.ravel([neg(a), neg(b)])
        }
    }

    /// Flat index of `x - y` with periodic wrap.
    pub fn difference(&self, x: usize, y: usize) -> usize {
        let n = self.n;
        let [x0, x1] = self.unravel(x);
        let [y0, y1] = self.unravel(y);
        self.ravel([(x0 + n - y0) % n, (x1 + n - y1) % n])
    }

    /// Site closest to the centre of the box.
    pub fn centre(&self) -> usize {
        self.ravel([self.n / 2, self.n / 2])
    }

    /// Smallest periodic image of a site, as a displacement from the origin.
    pub fn periodic_offset(&self, site: usize) -> [f64; 2] {
        let h = self.spacing();
        let [a, b] = self.unravel(site);
        let wrap = |k: usize| self.wavenumber(k) as f64 * h;
        [wrap(a), if self.dim == 1 { 0.0 } else { wrap(b) }]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.sites()],
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.sites()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.sites() {
            return invalid(format!(
                "field has {} values but grid has {} sites",
                values.len(),
                grid.sites()
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.sites()).map(|s| f(grid.coordinate(s))).collect();
        Self { grid, values }
    }

    /// Lattice approximation of the integral, `h^d * sum`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// `h^d * sum(f g)`.
    pub fn dot(&self, other: &Field) -> f64 {
        dot(&self.values, &other.values) * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(GridSpec::new(3, 16, 1.0).is_err());
        assert!(GridSpec::new(1, 12, 1.0).is_err());
        assert!(GridSpec::new(1, 16, -1.0).is_err());
        assert!(GridSpec::new(2, 16, 4.0).is_ok());
    }

    #[test]
    fn conjugate_is_involution() {
        let g = GridSpec::new(2, 8, 3.0).unwrap();
        for m in 0..g.sites() {
            let c = g.conjugate_mode(m);
            assert_eq!(g.conjugate_mode(c), m);
            let (f, fc) = (g.frequency(m), g.frequency(c));
            // Nyquist maps to itself, everything else flips sign.
            for ax in 0..2 {
                let nyq = (f[ax].abs() - PI * 8.0 / 3.0).abs() < 1e-12;
                assert!(nyq || (f[ax] + fc[ax]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn difference_wraps() {
        let g = GridSpec::new(1, 8, 1.0).unwrap();
        assert_eq!(g.difference(1, 3), 6);
        assert_eq!(g.difference(5, 5), 0);
    }
}
