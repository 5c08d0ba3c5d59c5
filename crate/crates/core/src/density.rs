//! Density of `u(T, x_obs)`: Monte Carlo samples, a kernel estimate, a
//! two-sided Gaussian envelope fit, and pathwise bounds on the martingale and
//! drift parts of the observation.

use crate::error::{invalid, Error, Result};
use crate::kernel::PhiEvaluator;
use crate::solver::{observed_values, run_ensemble, Simulator, StepObserver};
use crate::spectral::HNorm;
use crate::stats::{mean, variance};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

pub const MIN_SAMPLES: usize = 1000;

/// `M` samples of `u(T, x_obs)`, in path order.
pub fn collect_samples(sim: &Simulator, paths: usize, seed: u64) -> Result<Vec<f64>> {
    if paths < MIN_SAMPLES {
        return invalid(format!("need at least {MIN_SAMPLES} paths, got {paths}"));
    }
    Ok(observed_values(sim, paths, seed)?.values)
}

/// Gaussian kernel density estimate on a fixed grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Kde {
    pub y: Vec<f64>,
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
    pub bandwidth: f64,
    pub samples: usize,
}

impl Kde {
    /// Trapezoidal mass over the grid.
    pub fn integral(&self) -> f64 {
        self.y
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(y, p)| 0.5 * (y[1] - y[0]) * (p[0] + p[1]))
            .sum()
    }

    /// Largest contiguous index range around the mode where the relative
    /// standard error stays below 20%.
    pub fn reliable_range(&self) -> Option<(usize, usize)> {
        let ok = |i: usize| self.density[i] > 0.0 && self.stderr[i] < 0.2 * self.density[i];
        let mode = (0..self.y.len()).max_by(|&a, &b| self.density[a].total_cmp(&self.density[b]))?;
        if !ok(mode) {
            return None;
        }
        let (mut lo, mut hi) = (mode, mode);
        while lo > 0 && ok(lo - 1) {
            lo -= 1;
        }
        while hi + 1 < self.y.len() && ok(hi + 1) {
            hi += 1;
        }
        Some((lo, hi))
    }
}

/// Grid from four bandwidths below the smallest sample to four above the largest.
pub fn default_grid(samples: &[f64], points: usize) -> Result<Vec<f64>> {
    let h = silverman(samples)?;
    let lo = samples.iter().copied().fold(f64::INFINITY, f64::min) - 4.0 * h;
    let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * h;
    let n = points.max(2);
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

/// `1.06 * sd * M^{-1/5}`.
pub fn silverman(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return invalid("need at least two samples");
    }
    let sd = variance(samples).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    Ok(1.06 * sd * (samples.len() as f64).powf(-0.2))
}

/// Kernel estimate with a binomial standard error: a Gaussian kernel of
/// bandwidth `h` behaves like a window of width `w = 2 sqrt(pi) h`, giving
/// `se = sqrt(p (1 - p w) / (M w))`.
pub fn kde(samples: &[f64], y: &[f64]) -> Result<Kde> {
    if samples.len() < MIN_SAMPLES {
        return invalid(format!("need at least {MIN_SAMPLES} samples, got {}", samples.len()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return invalid("samples must be finite");
    }
    let h = silverman(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let norm = 1.0 / (m * h * (2.0 * PI).sqrt());
    let reach = 9.0 * h;
    let w = 2.0 * PI.sqrt() * h;
    let mut density = Vec::with_capacity(y.len());
    let mut stderr = Vec::with_capacity(y.len());
    for &yi in y {
        let a = sorted.partition_point(|&s| s < yi - reach);
        let b = sorted.partition_point(|&s| s <= yi + reach);
        let p = norm * sorted[a..b].iter().map(|&s| (-0.5 * ((yi - s) / h).powi(2)).exp()).sum::<f64>();
        density.push(p);
        stderr.push((p * (1.0 - p * w).max(0.0) / (m * w)).sqrt());
    }
    Ok(Kde { y: y.to_vec(), density, stderr, bandwidth: h, samples: samples.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsReport {
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Two-sided Kolmogorov-Smirnov distance to `Normal(mu, var)`, judged at the
/// asymptotic 1% level `1.63 / sqrt(M)`.
pub fn ks_normal(samples: &[f64], mu: f64, var: f64) -> Result<KsReport> {
    let n = Normal::new(mu, var.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = n.cdf(x);
            (f - i as f64 / m).max((i + 1) as f64 / m - f)
        })
        .fold(0.0, f64::max);
    let threshold = 1.63 / m.sqrt();
    Ok(KsReport { statistic: d, threshold, pass: d < threshold })
}

/// KS check of an additive-noise ensemble against `Normal(F_0, Phi(T))`.
pub fn gaussian_case_check(sim: &Simulator, phi: &PhiEvaluator, samples: &[f64]) -> Result<KsReport> {
    let cfg = sim.config();
    if !cfg.coeffs.is_additive() || cfg.coeffs.sigma.value(0.0) != 1.0 {
        return invalid("the Gaussian check needs sigma = 1 and b = 0");
    }
    let t = cfg.horizon();
    ks_normal(samples, sim.f0(t), phi.phi(t)?)
}

/// Constants of `C1 Phi^{-1/2} exp(-z^2 / C2) <= p <= c1 Phi^{-1/2} exp(-(|z| - s)_+^2 / c2)`
/// with `z = (y - F_0) / sqrt(Phi)` and `s = c3 T / sqrt(Phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub lower_c1: f64,
    pub lower_c2: f64,
    pub upper_c1: f64,
    pub upper_c2: f64,
    pub c3: f64,
    /// Mean vertical gap in log space between each curve and the estimate.
    pub lower_residual: f64,
    pub upper_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityReport {
    pub samples: usize,
    pub f0: f64,
    pub phi_t: f64,
    pub horizon: f64,
    pub kde: Kde,
    pub reliable: Option<(f64, f64)>,
    pub fit: Option<EnvelopeFit>,
    /// Curvature `-d^2 log p / dz^2 / 2` of a parabola fitted on the tails.
    pub tail_curvature: Option<f64>,
    /// The tail curvature lies between `1 / c2` and `1 / C2`.
    pub tail_consistent: bool,
    pub envelopes_hold: bool,
    pub consistent: bool,
    pub gap_ok: bool,
    pub integral: f64,
    pub pass: bool,
}

impl DensityReport {
    pub fn lower_envelope(&self, y: f64) -> f64 {
        self.fit.map_or(f64::NAN, |f| {
            let z2 = (y - self.f0).powi(2) / self.phi_t;
            f.lower_c1 / self.phi_t.sqrt() * (-z2 / f.lower_c2).exp()
        })
    }

    pub fn upper_envelope(&self, y: f64) -> f64 {
        self.fit.map_or(f64::NAN, |f| {
            let r = ((y - self.f0).abs() - f.c3 * self.horizon).max(0.0);
            f.upper_c1 / self.phi_t.sqrt() * (-r * r / (f.upper_c2 * self.phi_t)).exp()
        })
    }
}

/// Vertices of the upper (`sign = 1`) or lower (`sign = -1`) convex hull of
/// points sorted by abscissa.
fn hull(pts: &[(f64, f64)], sign: f64) -> Vec<(f64, f64)> {
    let mut h: Vec<(f64, f64)> = Vec::new();
    for &p in pts {
        if let Some(last) = h.last() {
            if last.0 == p.0 {
                if sign * p.1 > sign * last.1 {
                    h.pop();
                } else {
                    continue;
                }
            }
        }
        while h.len() >= 2 {
            let (a, b) = (h[h.len() - 2], h[h.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if sign * cross >= 0.0 {
                h.pop();
            } else {
                break;
            }
        }
        h.push(p);
    }
    h
}

/// Supporting line `y = a + k x` of the point set, above it for `sign = 1` and
/// below for `sign = -1`, that minimizes the summed vertical gap. The optimum
/// is the hull edge spanning the mean abscissa.
fn support_line(pts: &mut [(f64, f64)], sign: f64) -> Option<(f64, f64)> {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let h = hull(pts, sign);
    if h.len() < 2 {
        return None;
    }
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let i = h.windows(2).position(|w| w[1].0 >= xbar).unwrap_or(h.len() - 2);
    let (p, q) = (h[i], h[i + 1]);
    let k = (q.1 - p.1) / (q.0 - p.0);
    Some((p.1 - k * p.0, k))
}

/// Fits both envelopes on the reliable range of `kde` and checks them.
///
/// `c3` is the drift bound `sup|b|`; the upper curve is shifted by `c3 T`.
pub fn envelope_check(kde: Kde, f0: f64, phi_t: f64, horizon: f64, c3: f64) -> Result<DensityReport> {
    if !(phi_t > 0.0) || !(c3 >= 0.0) {
        return invalid("need Phi(T) > 0 and c3 >= 0");
    }
    let integral = kde.integral();
    let range = kde.reliable_range();
    let sp = phi_t.sqrt();
    let shift = c3 * horizon / sp;
    let mut report = DensityReport {
        samples: kde.samples,
        f0,
        phi_t,
        horizon,
        reliable: range.map(|(a, b)| (kde.y[a], kde.y[b])),
        fit: None,
        tail_curvature: None,
        tail_consistent: false,
        envelopes_hold: false,
        consistent: false,
        gap_ok: false,
        integral,
        pass: false,
        kde,
    };
    let Some((lo, hi)) = range else { return Ok(report) };
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .map(|i| ((report.kde.y[i] - f0) / sp, (report.kde.density[i] * sp).ln()))
        .collect();

    let mut low: Vec<(f64, f64)> = pts.iter().map(|&(z, l)| (z * z, l)).collect();
    let mut up: Vec<(f64, f64)> = pts.iter().map(|&(z, l)| ((z.abs() - shift).max(0.0).powi(2), l)).collect();
    let (Some((b, mu)), Some((a, ka))) = (support_line(&mut low, -1.0), support_line(&mut up, 1.0)) else {
        return Ok(report);
    };
    let (mu, ka) = (-mu, -ka);
    if !(mu > 0.0 && ka > 0.0) {
        return Ok(report);
    }
    let fit = EnvelopeFit {
        lower_c1: b.exp(),
        lower_c2: 1.0 / mu,
        upper_c1: a.exp(),
        upper_c2: 1.0 / ka,
        c3,
        lower_residual: low.iter().map(|&(x, l)| l - (b - mu * x)).sum::<f64>() / low.len() as f64,
        upper_residual: up.iter().map(|&(x, l)| (a - ka * x) - l).sum::<f64>() / up.len() as f64,
    };
    report.fit = Some(fit);

    let tol = 1e-9;
    let mut hold = true;
    let mut consistent = true;
    for i in lo..=hi {
        let y = report.kde.y[i];
        let (lw, p, hg) = (report.lower_envelope(y), report.kde.density[i], report.upper_envelope(y));
        hold &= lw <= p * (1.0 + tol) && p <= hg * (1.0 + tol);
        consistent &= lw <= hg * (1.0 + tol);
    }
    report.envelopes_hold = hold;
    report.consistent = consistent;
    report.gap_ok = fit.lower_c2 <= 10.0 * fit.upper_c2;

    let tail: Vec<(f64, f64)> = pts.iter().copied().filter(|p| p.0.abs() >= 1.0).collect();
    report.tail_curvature = quadratic_coefficient(&tail).map(|c| -c);
    if let Some(g) = report.tail_curvature {
        let (a, b) = (1.0 / fit.lower_c2, 1.0 / fit.upper_c2);
        report.tail_consistent = a.min(b) <= g && g <= a.max(b);
    }
    report.pass = hold && consistent && report.gap_ok && (integral - 1.0).abs() < 1e-3;
    Ok(report)
}

/// Leading coefficient of the least-squares parabola through the points.
fn quadratic_coefficient(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 4 {
        return None;
    }
    let mut a = [[0.0f64; 4]; 3];
    for &(x, y) in pts {
        let row = [1.0, x, x * x];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += row[i] * row[j];
            }
            a[i][3] += row[i] * y;
        }
    }
    for c in 0..3 {
        let piv = (c..3).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        a.swap(c, piv);
        if a[c][c].abs() < 1e-300 {
            return None;
        }
        for r in 0..3 {
            if r != c {
                let f = a[r][c] / a[c][c];
                let pivot = a[c];
                for (x, p) in a[r].iter_mut().zip(pivot).skip(c) {
                    *x -= f * p;
                }
            }
        }
    }
    Some(a[2][3] / a[2][2])
}

/// Samples, kernel estimate and envelope check for one configuration.
pub fn density_envelope(sim: &Simulator, phi: &PhiEvaluator, paths: usize, seed: u64, points: usize) -> Result<(Vec<f64>, DensityReport)> {
    let cfg = sim.config();
    if !(cfg.coeffs.sigma.lower_bound() > 0.0) {
        return Err(Error::Degenerate("the diffusion coefficient is not bounded away from zero".into()));
    }
    let c3 = cfg.coeffs.drift.sup_norm();
    if !c3.is_finite() || !cfg.coeffs.sigma.sup_norm().is_finite() {
        return invalid("the envelope needs bounded coefficients");
    }
    let samples = collect_samples(sim, paths, seed)?;
    let grid = default_grid(&samples, points)?;
    let k = kde(&samples, &grid)?;
    let t = cfg.horizon();
    let report = envelope_check(k, sim.f0(t), phi.phi(t)?, t, c3)?;
    Ok((samples, report))
}

/// Per-path martingale bracket and drift part of the observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PathBounds {
    pub quadratic_variation: f64,
    pub drift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathwiseReport {
    pub paths: usize,
    pub qv_bound: f64,
    pub drift_bound: f64,
    pub max_qv: f64,
    pub max_drift: f64,
    pub qv_violations: usize,
    pub drift_violations: usize,
    pub pass: bool,
}

struct BoundObserver<'a> {
    sim: &'a Simulator,
    hn: &'a HNorm,
    ws: crate::fourier::Workspace,
    pending: Option<Vec<f64>>,
    qv: f64,
    drift: f64,
}

impl BoundObserver<'_> {
    fn flush(&mut self, next: Option<Vec<f64>>) {
        let dt = self.sim.config().dt;
        match (self.pending.take(), next) {
            (Some(a), Some(b)) => {
                let (x, y) = self.hn.norm_sq_pair(&a, &b, &mut self.ws);
                self.qv += dt * (x + y);
            }
            (Some(a), None) | (None, Some(a)) => self.pending = Some(a),
            (None, None) => {}
        }
    }
}

impl StepObserver for BoundObserver<'_> {
    fn state(&mut self, k: usize, u: &[f64]) {
        let cfg = self.sim.config();
        if k >= cfg.steps {
            return;
        }
        let g = self.sim.kernel(k);
        let c = cfg.coeffs;
        let weighted: Vec<f64> = g.iter().zip(u).map(|(g, &v)| g * c.sigma.value(v)).collect();
        self.drift += cfg.grid.cell_volume() * cfg.dt * g.iter().zip(u).map(|(g, &v)| g * c.drift.value(v)).sum::<f64>();
        self.flush(Some(weighted));
    }
}

/// `<M>_T = sum_k dt |G_k sigma(u_k)|_H^2` and `sum_k h^d dt <G_k, b(u_k)>` on each path.
pub fn path_bounds(sim: &Simulator, paths: usize, seed: u64) -> Result<Vec<PathBounds>> {
    let cfg = sim.config();
    let hn = HNorm::new(cfg.grid, &cfg.measure)?;
    sim.observation_kernels();
    Ok(run_ensemble(paths, |p| {
        let mut ws = sim.workspace();
        let mut obs = BoundObserver { sim, hn: &hn, ws: hn.workspace(), pending: None, qv: 0.0, drift: 0.0 };
        sim.run(seed, p, cfg.steps, &mut ws, &mut obs)?;
        if let Some(a) = obs.pending.take() {
            obs.qv += cfg.dt * hn.norm_sq(&a, &mut obs.ws);
        }
        Ok(PathBounds { quadratic_variation: obs.qv, drift: obs.drift })
    })?
    .values)
}

/// Checks `<M>_T <= |sigma|_inf^2 Phi(T) * 1.02` and `|drift| <= |b|_inf T * 1.02` on every path.
pub fn pathwise_bounds(sim: &Simulator, phi: &PhiEvaluator, paths: usize, seed: u64) -> Result<PathwiseReport> {
    let cfg = sim.config();
    let t = cfg.horizon();
    let qv_bound = cfg.coeffs.sigma.sup_norm().powi(2) * phi.phi(t)? * 1.02;
    let drift_bound = cfg.coeffs.drift.sup_norm() * t * 1.02;
    let b = path_bounds(sim, paths, seed)?;
    let qv_violations = b.iter().filter(|p| !(p.quadratic_variation <= qv_bound)).count();
    let drift_violations = b.iter().filter(|p| !(p.drift.abs() <= drift_bound)).count();
    Ok(PathwiseReport {
        paths: b.len(),
        qv_bound,
        drift_bound,
        max_qv: b.iter().map(|p| p.quadratic_variation).fold(0.0, f64::max),
        max_drift: b.iter().map(|p| p.drift.abs()).fold(0.0, f64::max),
        qv_violations,
        drift_violations,
        pass: qv_violations == 0 && drift_violations == 0,
    })
}

/// Sample mean and its distance from `F_0` in standard errors.
pub fn mean_offset(samples: &[f64], f0: f64) -> f64 {
    (mean(samples) - f0) / (variance(samples) / samples.len() as f64).sqrt()
}
