//! Heat kernel and the variance function `Phi(t) = int_0^t J(s) ds`, where
//! `J(s) = int e^{-2 s |xi|^2} g(xi) dxi`.

use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;
use crate::quadrature::Quadrature;
use crate::spectral::{sphere_area, Family, SpectralMeasure};
use serde::Serialize;
use statrs::function::gamma::gamma as gamma_fn;
use std::f64::consts::PI;

/// Heat kernel `(4 pi t)^{-d/2} exp(-|x|^2 / 4t)` of `d/dt = Laplacian`.
pub fn gamma(t: f64, x: &[f64]) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("heat kernel needs t > 0, got {t}"));
    }
    let d = x.len() as f64;
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((4.0 * PI * t).powf(-d / 2.0) * (-r2 / (4.0 * t)).exp())
}

/// Fourier transform of the heat kernel, `exp(-t |xi|^2)`.
pub fn fourier_gamma(t: f64, xi: &[f64]) -> f64 {
    (-t * xi.iter().map(|v| v * v).sum::<f64>()).exp()
}

/// Evaluates `J` and `Phi` for one spectral measure.
#[derive(Clone, Debug)]
pub struct PhiEvaluator {
    measure: SpectralMeasure,
    pub quadrature: Quadrature,
    closed_form: bool,
}

impl PhiEvaluator {
    /// Uses closed forms where they exist, quadrature otherwise.
    pub fn new(measure: SpectralMeasure) -> Self {
        Self {
            measure,
            quadrature: Quadrature::default(),
            closed_form: true,
        }
    }

    /// Always integrates numerically.
    pub fn quadrature_only(measure: SpectralMeasure) -> Self {
        Self {
            closed_form: false,
            ..Self::new(measure)
        }
    }

    pub fn measure(&self) -> &SpectralMeasure {
        &self.measure
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > 0.0 && t.is_finite()) {
            return invalid(format!("time must be positive, got {t}"));
        }
        Ok(())
    }

    fn check_dalang(&self) -> Result<()> {
        if self.measure.dalang_holds() {
            Ok(())
        } else {
            Err(Error::Divergent(format!(
                "{:?} in dimension {} violates the Dalang condition",
                self.measure.family, self.measure.dim
            )))
        }
    }

    pub fn j_rate(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if self.closed_form {
            if let Some(v) = self.j_closed(t) {
                return Ok(v);
            }
        }
        self.j_rate_quadrature(t)
    }

    pub fn j_rate_quadrature(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let d = self.measure.dim as i32;
        let s = sphere_area(self.measure.dim);
        let m = self.measure;
        self.quadrature.half_line(
            |r| s * m.radial_density(r) * r.powi(d - 1) * (-2.0 * t * r * r).exp(),
            (2.0 * t).sqrt().recip(),
        )
    }

    pub fn phi(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        self.check_dalang()?;
        if self.closed_form {
            if let Some(v) = self.phi_closed(t) {
                return Ok(v);
            }
        }
        self.phi_quadrature(t)
    }

    /// Time integral of the quadrature `J` with dyadic refinement toward 0.
    pub fn phi_quadrature(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        self.check_dalang()?;
        self.integrate_j(0.0, t)
    }

    /// `int_a^b J(s) ds`, for `0 <= a < b`.
    pub fn phi_between(&self, a: f64, b: f64) -> Result<f64> {
        if !(0.0 <= a && a < b) {
            return invalid(format!("need 0 <= a < b, got [{a}, {b}]"));
        }
        if self.closed_form && self.phi_closed(1.0).is_some() {
            let lo = if a == 0.0 { 0.0 } else { self.phi(a)? };
            return Ok(self.phi(b)? - lo);
        }
        self.integrate_j(a, b)
    }

    fn integrate_j(&self, a: f64, b: f64) -> Result<f64> {
        let q = Quadrature {
            rel_tol: 1e-10,
            ..self.quadrature
        };
        let j = |s: f64| self.j_rate_quadrature(s).unwrap_or(f64::NAN);
        let v = if a == 0.0 {
            q.to_zero(j, b)?
        } else {
            q.geometric(j, a, b)
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Divergent(format!("J is not integrable on [{a}, {b}]")))
        }
    }

    fn j_closed(&self, t: f64) -> Option<f64> {
        let d = self.measure.dim;
        match self.measure.family {
            Family::WhiteNoise => Some((2.0 * PI).powi(-(d as i32)) * (PI / (2.0 * t)).powf(d as f64 / 2.0)),
            Family::Riesz { eta } => {
                let c = SpectralMeasure::riesz_constant(eta, d);
                Some(c * sphere_area(d) * gamma_fn(eta / 2.0) / (2.0 * (2.0 * t).powf(eta / 2.0)))
            }
            _ => None,
        }
    }

    /// Closed form of `Phi(t)`, when the family has one.
    pub fn phi_closed(&self, t: f64) -> Option<f64> {
        let d = self.measure.dim;
        match self.measure.family {
            Family::WhiteNoise if d == 1 => Some((t / (2.0 * PI)).sqrt()),
            Family::Riesz { eta } if eta < 2.0 => {
                let c = SpectralMeasure::riesz_constant(eta, d);
                let e = 1.0 - eta / 2.0;
                Some(c * sphere_area(d) * gamma_fn(eta / 2.0) / 2.0 * 2f64.powf(-eta / 2.0) * t.powf(e) / e)
            }
            _ => None,
        }
    }

    /// Checks `J(T) (tau2 - tau1) <= int_{tau1}^{tau2} J(t - s) ds`.
    pub fn phi_increment_lower(&self, t: f64, horizon: f64, tau1: f64, tau2: f64) -> Result<IncrementBound> {
        if !(0.0 <= tau1 && tau1 < tau2 && tau2 <= t && t <= horizon) {
            return invalid("need 0 <= tau1 < tau2 <= t <= T");
        }
        let lhs = self.j_rate(horizon)? * (tau2 - tau1);
        let rhs = self.phi_between(t - tau2, t - tau1)?;
        Ok(IncrementBound { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IncrementBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Exact variance of the linear lattice scheme: started from zero with unit
/// additive noise, after `steps` steps of size `dt` the value at any site has
/// variance `sum_k dt sum_xi w(xi) e^{-2 (steps - k) dt |xi|^2}`.
pub fn lattice_variance(grid: &GridSpec, measure: &SpectralMeasure, dt: f64, steps: usize) -> Result<f64> {
    let w = measure.mode_weights(grid)?;
    let mut total = 0.0;
    for (m, wm) in w.iter().enumerate() {
        let q = (-2.0 * dt * grid.frequency_norm_sq(m)).exp();
        // Geometric sum of q^j for j = 1..=steps.
        let s = if q == 1.0 {
            steps as f64
        } else {
            q * (1.0 - q.powi(steps as i32)) / (1.0 - q)
        };
        total += wm * dt * s;
    }
    Ok(total)
}
