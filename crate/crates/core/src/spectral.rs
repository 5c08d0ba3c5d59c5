//! Spectral measures of spatially homogeneous Gaussian noise.
//!
//! The covariance is `Lambda(x) = int e^{i xi x} g(xi) dxi`, so every density is
//! `(2 pi)^{-d}` times the Fourier transform of the covariance function.

use crate::error::{invalid, Error, Result};
use crate::fourier::{Fourier, Workspace};
use crate::grid::{Field, GridSpec};
use crate::quadrature::Quadrature;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Flat density; the noise is white in space.
    #[serde(rename = "white", alias = "white_noise")]
    WhiteNoise,
    /// Covariance `|x|^{-eta}`, density proportional to `|xi|^{eta - d}`.
    Riesz { eta: f64 },
    /// Density `(2 pi)^{-d} (1 + |xi|^2)^{-order}`.
    Bessel { order: f64 },
    /// Covariance `exp(-|x| / scale)`.
    #[serde(rename = "exponential", alias = "exponential_cov")]
    ExponentialCov { scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralMeasure {
    #[serde(flatten)]
    pub family: Family,
    pub dim: usize,
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(dim: usize) -> f64 {
    2.0 * PI.powf(dim as f64 / 2.0) / gamma(dim as f64 / 2.0)
}

/// Volume of the unit ball in `R^d`.
pub fn ball_volume(dim: usize) -> f64 {
    sphere_area(dim) / dim as f64
}

impl SpectralMeasure {
    pub fn new(family: Family, dim: usize) -> Result<Self> {
        let m = Self { family, dim };
        m.validate()?;
        Ok(m)
    }

    pub fn white(dim: usize) -> Result<Self> {
        Self::new(Family::WhiteNoise, dim)
    }

    pub fn riesz(eta: f64, dim: usize) -> Result<Self> {
        Self::new(Family::Riesz { eta }, dim)
    }

    pub fn bessel(order: f64, dim: usize) -> Result<Self> {
        Self::new(Family::Bessel { order }, dim)
    }

    pub fn exponential(scale: f64, dim: usize) -> Result<Self> {
        Self::new(Family::ExponentialCov { scale }, dim)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        if !(1..=3).contains(&d) {
            return invalid(format!("noise dimension must be 1, 2 or 3, got {d}"));
        }
        match self.family {
            Family::WhiteNoise => Ok(()),
            Family::Riesz { eta } if eta > 0.0 && eta < d as f64 => Ok(()),
            Family::Riesz { eta } => invalid(format!("Riesz exponent must lie in (0, {d}), got {eta}")),
            Family::Bessel { order } if order > 0.0 && order.is_finite() => Ok(()),
            Family::Bessel { order } => invalid(format!("Bessel order must be positive, got {order}")),
            Family::ExponentialCov { scale } if scale > 0.0 && scale.is_finite() => Ok(()),
            Family::ExponentialCov { scale } => {
                invalid(format!("exponential covariance scale must be positive, got {scale}"))
            }
        }
    }

    fn norm(&self) -> f64 {
        (2.0 * PI).powi(-(self.dim as i32))
    }

    /// Prefactor `c` in the Riesz density `c |xi|^{eta - d}`.
    pub fn riesz_constant(eta: f64, dim: usize) -> f64 {
        let d = dim as f64;
        (2.0 * PI).powf(-d) * PI.powf(d / 2.0) * 2f64.powf(d - eta) * gamma((d - eta) / 2.0)
            / gamma(eta / 2.0)
    }

    /// Density as a function of `r = |xi|`. Infinite at the origin for Riesz.
    pub fn radial_density(&self, r: f64) -> f64 {
        let d = self.dim as f64;
        match self.family {
            Family::WhiteNoise => self.norm(),
            Family::Riesz { eta } => {
                if r == 0.0 {
                    f64::INFINITY
                } else {
                    Self::riesz_constant(eta, self.dim) * r.powf(eta - d)
                }
            }
            Family::Bessel { order } => self.norm() * (1.0 + r * r).powf(-order),
            Family::ExponentialCov { scale } => {
                let cd = 2f64.powf(d) * PI.powf((d - 1.0) / 2.0) * gamma((d + 1.0) / 2.0);
                self.norm() * cd * scale.powf(d) * (1.0 + scale * scale * r * r).powf(-(d + 1.0) / 2.0)
            }
        }
    }

    pub fn density(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.dim {
            return invalid(format!("frequency has {} components, measure has dimension {}", xi.len(), self.dim));
        }
        Ok(self.radial_density(xi.iter().map(|v| v * v).sum::<f64>().sqrt()))
    }

    /// Whether `int g(xi) / (1 + |xi|^2) dxi` is finite, decided in closed form.
    pub fn dalang_holds(&self) -> bool {
        let d = self.dim as f64;
        match self.family {
            Family::WhiteNoise => self.dim == 1,
            Family::Riesz { eta } => eta < 2.0,
            Family::Bessel { order } => 2.0 * order + 2.0 > d,
            Family::ExponentialCov { .. } => true,
        }
    }

    /// Mode variances per unit time on a periodic grid: `g(xi) (2 pi / L)^d`.
    ///
    /// For Riesz the zero mode carries the mass of the ball with the same
    /// volume as one frequency cell, which is finite because `eta > 0`.
    pub fn mode_weights(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        if grid.dim != self.dim {
            return invalid(format!("grid dimension {} does not match noise dimension {}", grid.dim, self.dim));
        }
        let cell = (2.0 * PI / grid.length).powi(self.dim as i32);
        let mut w = Vec::with_capacity(grid.sites());
        for m in 0..grid.sites() {
            let r = grid.frequency_norm_sq(m).sqrt();
            let v = match self.family {
                Family::Riesz { eta } if m == 0 => {
                    let rho = (cell / ball_volume(self.dim)).powf(1.0 / self.dim as f64);
                    sphere_area(self.dim) * Self::riesz_constant(eta, self.dim) * rho.powf(eta) / eta
                }
                _ => self.radial_density(r) * cell,
            };
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::NegativeDensity { index: m, value: v });
            }
            w.push(v);
        }
        Ok(w)
    }

    /// Truncated Dalang integrals at each cutoff with a convergence verdict.
    pub fn dalang_integral(&self, cutoffs: &[f64]) -> Result<DalangReport> {
        if cutoffs.len() < 3 {
            return invalid("Dalang check needs at least three cutoffs");
        }
        if cutoffs[0] <= 0.0 || cutoffs.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("Dalang cutoffs must be positive and strictly increasing");
        }
        let s = sphere_area(self.dim);
        let d = self.dim as i32;
        let f = |r: f64| s * self.radial_density(r) * r.powi(d - 1) / (1.0 + r * r);
        let q = Quadrature::default();
        let mut acc = q.to_zero(f, cutoffs[0])?;
        let mut truncated = vec![acc];
        for w in cutoffs.windows(2) {
            acc += q.geometric(f, w[0], w[1]);
            truncated.push(acc);
        }
        let k = cutoffs.len();
        let inc = |i: usize| (truncated[i + 1] - truncated[i]) / (cutoffs[i + 1] / cutoffs[i]).ln();
        let (last, prev) = (inc(k - 2), inc(k - 3));
        let ratio = if prev > 0.0 { last / prev } else { 0.0 };
        Ok(DalangReport {
            cutoffs: cutoffs.to_vec(),
            value: acc,
            truncated,
            ratio,
            converges: ratio < 0.9,
        })
    }
}

pub const DEFAULT_DALANG_CUTOFFS: [f64; 6] = [1e1, 1e2, 1e3, 1e4, 1e5, 1e6];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DalangReport {
    pub cutoffs: Vec<f64>,
    pub truncated: Vec<f64>,
    /// Ratio of the last two increments, each per unit of `log R`.
    pub ratio: f64,
    pub converges: bool,
    /// Largest truncation.
    pub value: f64,
}

/// `sum_xi |h^d DFT(phi)(xi)|^2 w(xi)`, the squared norm in the reproducing
/// space of the noise restricted to the grid.
pub struct HNorm {
    fourier: Fourier,
    weights: Vec<f64>,
    cell: f64,
}

impl HNorm {
    pub fn new(grid: GridSpec, measure: &SpectralMeasure) -> Result<Self> {
        Ok(Self {
            weights: measure.mode_weights(&grid)?,
            fourier: Fourier::new(grid),
            cell: grid.cell_volume(),
        })
    }

    pub fn workspace(&self) -> Workspace {
        self.fourier.workspace()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn norm_sq(&self, phi: &[f64], ws: &mut Workspace) -> f64 {
        self.fourier.forward_real(phi, ws);
        let c2 = self.cell * self.cell;
        ws.buf.iter().zip(&self.weights).map(|(z, w)| z.norm_sqr() * w).sum::<f64>() * c2
    }

    /// Norms of two fields from one transform, using conjugate symmetry.
    pub fn norm_sq_pair(&self, a: &[f64], b: &[f64], ws: &mut Workspace) -> (f64, f64) {
        use rustfft::num_complex::Complex64;
        for ((z, &x), &y) in ws.buf.iter_mut().zip(a).zip(b) {
            *z = Complex64::new(x, y);
        }
        self.fourier.forward(ws);
        let grid = self.fourier.grid();
        let (mut na, mut nb) = (0.0, 0.0);
        for m in 0..grid.sites() {
            let z = ws.buf[m];
            let zc = ws.buf[grid.conjugate_mode(m)].conj();
            let fa = (z + zc) * 0.5;
            let fb = (z - zc) * rustfft::num_complex::Complex64::new(0.0, -0.5);
            na += fa.norm_sqr() * self.weights[m];
            nb += fb.norm_sqr() * self.weights[m];
        }
        let c2 = self.cell * self.cell;
        (na * c2, nb * c2)
    }
}

/// One-shot version of [`HNorm::norm_sq`].
pub fn h_norm_sq(phi: &Field, measure: &SpectralMeasure) -> Result<f64> {
    let h = HNorm::new(phi.grid, measure)?;
    let mut ws = h.workspace();
    Ok(h.norm_sq(&phi.values, &mut ws))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn riesz_density_in_one_dimension() {
        // The covariance |x|^{-1/2} transforms to sqrt(2 pi) |xi|^{-1/2}.
        let m = SpectralMeasure::riesz(0.5, 1).unwrap();
        let expect = (2.0 * PI).sqrt() / (2.0 * PI) * 4f64.powf(-0.5);
        assert_relative_eq!(m.density(&[4.0]).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn exponential_density_is_cauchy_in_one_dimension() {
        let m = SpectralMeasure::exponential(2.0, 1).unwrap();
        let x: f64 = 0.7;
        let expect = 2.0 / (PI * (1.0 + 4.0 * x * x));
        assert_relative_eq!(m.density(&[x]).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn exponential_density_integrates_to_covariance_at_zero() {
        for d in 1..=3 {
            let m = SpectralMeasure::exponential(0.8, d).unwrap();
            let s = sphere_area(d);
            let total = Quadrature::default()
                .half_line(|r| s * m.radial_density(r) * r.powi(d as i32 - 1), 1.0)
                .unwrap();
            assert_relative_eq!(total, 1.0, max_relative = 1e-8);
        }
    }

    #[test]
    fn parameter_ranges_are_enforced() {
        assert!(SpectralMeasure::riesz(1.0, 1).is_err());
        assert!(SpectralMeasure::riesz(0.0, 2).is_err());
        assert!(SpectralMeasure::bessel(-1.0, 1).is_err());
        assert!(SpectralMeasure::white(4).is_err());
        assert!(SpectralMeasure::white(1).unwrap().density(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn white_noise_dalang_value_is_one_half() {
        let m = SpectralMeasure::white(1).unwrap();
        let r = m.dalang_integral(&DEFAULT_DALANG_CUTOFFS).unwrap();
        assert!(r.converges);
        assert_relative_eq!(r.value, 0.5 - 1.0 / (PI * 1e6), max_relative = 1e-10);
    }

    #[test]
    fn dalang_verdicts_match_closed_form() {
        let cases = [
            SpectralMeasure::white(1).unwrap(),
            SpectralMeasure::white(2).unwrap(),
            SpectralMeasure::white(3).unwrap(),
            SpectralMeasure::riesz(0.5, 1).unwrap(),
            SpectralMeasure::riesz(1.5, 2).unwrap(),
            SpectralMeasure::riesz(2.5, 3).unwrap(),
            SpectralMeasure::bessel(1.0, 2).unwrap(),
            SpectralMeasure::bessel(0.25, 3).unwrap(),
            SpectralMeasure::exponential(1.0, 3).unwrap(),
        ];
        for m in cases {
            let r = m.dalang_integral(&DEFAULT_DALANG_CUTOFFS).unwrap();
            assert_eq!(r.converges, m.dalang_holds(), "{m:?} ratio {}", r.ratio);
        }
    }

    #[test]
    fn white_noise_norm_is_parseval() {
        let grid = GridSpec::new(1, 32, 5.0).unwrap();
        let phi = Field::from_fn(grid, |x| (x[0] - 2.0).exp().min(3.0));
        let n = h_norm_sq(&phi, &SpectralMeasure::white(1).unwrap()).unwrap();
        let direct = phi.values.iter().map(|v| v * v).sum::<f64>() * grid.cell_volume();
        assert_relative_eq!(n, direct, max_relative = 1e-12);
    }

    #[test]
    fn paired_norms_match_single_norms() {
        let grid = GridSpec::new(2, 8, 3.0).unwrap();
        let h = HNorm::new(grid, &SpectralMeasure::riesz(0.7, 2).unwrap()).unwrap();
        let mut ws = h.workspace();
        let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..64).map(|i| ((i * i) % 7) as f64).collect();
        let (na, nb) = h.norm_sq_pair(&a, &b, &mut ws);
        assert_relative_eq!(na, h.norm_sq(&a, &mut ws), max_relative = 1e-10);
        assert_relative_eq!(nb, h.norm_sq(&b, &mut ws), max_relative = 1e-10);
    }
}
