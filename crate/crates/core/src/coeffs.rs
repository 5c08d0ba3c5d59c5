use serde::{Deserialize, Serialize};

/// Scalar nonlinearity used for the diffusion or drift coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientFn {
    /// `c0 + sin_amp * sin(v) + cos_amp * cos(v)`.
    Trig {
        c0: f64,
        #[serde(default)]
        sin_amp: f64,
        #[serde(default)]
        cos_amp: f64,
    },
    /// `c0 + slope * v`.
    Affine {
        c0: f64,
        #[serde(default)]
        slope: f64,
    },
}

impl CoefficientFn {
    pub const fn constant(c: f64) -> Self {
        CoefficientFn::Affine { c0: c, slope: 0.0 }
    }

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        match *self {
            CoefficientFn::Trig { c0, sin_amp, cos_amp } => {
                let (s, c) = v.sin_cos();
                c0 + sin_amp * s + cos_amp * c
            }
            CoefficientFn::Affine { c0, slope } => c0 + slope * v,
        }
    }

    #[inline]
    pub fn derivative(&self, v: f64) -> f64 {
        match *self {
            CoefficientFn::Trig { sin_amp, cos_amp, .. } => {
                let (s, c) = v.sin_cos();
                sin_amp * c - cos_amp * s
            }
            CoefficientFn::Affine { slope, .. } => slope,
        }
    }

    /// `(f(u) - f(v)) / (u - v)`, or `f'(v)` when the points nearly coincide.
    #[inline]
    pub fn divided_difference(&self, u: f64, v: f64) -> f64 {
        if (u - v).abs() < 1e-12 {
            self.derivative(v)
        } else {
            (self.value(u) - self.value(v)) / (u - v)
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            CoefficientFn::Trig { sin_amp, cos_amp, .. } => sin_amp == 0.0 && cos_amp == 0.0,
            CoefficientFn::Affine { slope, .. } => slope == 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.is_constant() && self.value(0.0) == 0.0
    }

    /// `sup |f|` over the real line; infinite for a non-constant affine map.
    pub fn sup_norm(&self) -> f64 {
        match *self {
            CoefficientFn::Trig { c0, sin_amp, cos_amp } => c0.abs() + sin_amp.hypot(cos_amp),
            CoefficientFn::Affine { c0, slope: 0.0 } => c0.abs(),
            CoefficientFn::Affine { .. } => f64::INFINITY,
        }
    }

    /// `inf |f|` over the real line.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            CoefficientFn::Trig { c0, sin_amp, cos_amp } => (c0.abs() - sin_amp.hypot(cos_amp)).max(0.0),
            CoefficientFn::Affine { c0, slope: 0.0 } => c0.abs(),
            CoefficientFn::Affine { .. } => 0.0,
        }
    }

    /// `sup |f'|`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            CoefficientFn::Trig { sin_amp, cos_amp, .. } => sin_amp.hypot(cos_amp),
            CoefficientFn::Affine { slope, .. } => slope.abs(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub sigma: CoefficientFn,
    pub drift: CoefficientFn,
}

impl Coefficients {
    /// Additive noise without drift; the solution is Gaussian.
    pub fn linear() -> Self {
        Self {
            sigma: CoefficientFn::constant(1.0),
            drift: CoefficientFn::constant(0.0),
        }
    }

    pub fn sine_diffusion() -> Self {
        Self {
            sigma: CoefficientFn::Trig { c0: 1.0, sin_amp: 0.5, cos_amp: 0.0 },
            drift: CoefficientFn::constant(0.0),
        }
    }

    pub fn drift() -> Self {
        Self {
            sigma: CoefficientFn::Trig { c0: 1.0, sin_amp: 0.5, cos_amp: 0.0 },
            drift: CoefficientFn::Trig { c0: 0.0, sin_amp: 0.0, cos_amp: 0.3 },
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "linear" => Some(Self::linear()),
            "sine-diffusion" => Some(Self::sine_diffusion()),
            "drift" => Some(Self::drift()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["linear", "sine-diffusion", "drift"];

    /// True when the solution is a Gaussian field with variance `sigma^2 Phi`.
    pub fn is_additive(&self) -> bool {
        self.sigma.is_constant() && self.drift.is_zero()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bounds_bracket_values(c0 in -2.0..2.0f64, a in -1.0..1.0f64, b in -1.0..1.0f64, v in -50.0..50.0f64) {
            let f = CoefficientFn::Trig { c0, sin_amp: a, cos_amp: b };
            let x = f.value(v).abs();
            prop_assert!(x <= f.sup_norm() + 1e-12);
            prop_assert!(x >= f.lower_bound() - 1e-12);
            prop_assert!(f.derivative(v).abs() <= f.lipschitz() + 1e-12);
        }

        #[test]
        fn divided_difference_is_a_secant(u in -5.0..5.0f64, v in -5.0..5.0f64) {
            let f = Coefficients::drift().sigma;
            let dd = f.divided_difference(u, v);
            prop_assert!((f.value(v) + dd * (u - v) - f.value(u)).abs() < 1e-11);
        }
    }

    #[test]
    fn presets() {
        assert!(Coefficients::linear().is_additive());
        assert!(!Coefficients::sine_diffusion().is_additive());
        assert_eq!(Coefficients::sine_diffusion().sigma.lower_bound(), 0.5);
        assert!((Coefficients::drift().drift.sup_norm() - 0.3).abs() < 1e-15);
        assert!(Coefficients::preset("nope").is_none());
    }
}
