//! First Malliavin derivative of the lattice scheme.
//!
//! Differentiating `u_{k+1} = S(u_k + b(u_k) dt + sigma(u_k) dW_k)` with respect
//! to the noise at step `r` and site `z` gives
//!
//! * `D u_k = 0` for `k <= r`,
//! * `D u_{r+1} = S(sigma(u_r(z)) delta_z)` with a unit-mass delta,
//! * `D u_{k+1} = S((1 + a_k) D u_k)` afterwards, `a_k = b'(u_k) dt + sigma'(u_k) dW_k`.
//!
//! [`propagate_derivative`] runs this forward for every source at once. For a
//! single observed functional the same numbers come out of a backward
//! (adjoint) sweep, see [`adjoint_derivative`], at the cost of one extra
//! transform pair per step.

use crate::error::{invalid, Error, Result};
use crate::grid::GridSpec;
use crate::kernel::PhiEvaluator;
use crate::solver::{run_ensemble, Blowup, SolutionPath, Simulator};
use crate::spectral::HNorm;
use crate::stats::{fit_line, mean, MomentEstimate, ScalingReport};
use serde::Serialize;

/// Largest grid for which the full tensor is built.
pub const MAX_TENSOR_SITES: usize = 128;
pub const MAX_TENSOR_STEPS: usize = 256;

/// `D_{r,z} u(t_obs, x)` for every source step `r < obs_step`, source site `z`
/// and site `x`.
pub struct DerivativeField {
    pub grid: GridSpec,
    pub dt: f64,
    pub obs_step: usize,
    data: Vec<f64>,
}

impl DerivativeField {
    /// Field `x -> D_{r,z} u(t_obs, x)`; zero when `r >= obs_step`.
    pub fn slice(&self, r: usize, z: usize) -> Vec<f64> {
        let n = self.grid.sites();
        if r >= self.obs_step {
            return vec![0.0; n];
        }
        let off = (r * n + z) * n;
        self.data[off..off + n].to_vec()
    }

    /// Derivative of `u(t_obs, x)` as a function of the source.
    pub fn observed(&self, x: usize) -> ObservedDerivative {
        let n = self.grid.sites();
        let slices = (0..self.obs_step)
            .map(|r| (0..n).map(|z| self.data[(r * n + z) * n + x]).collect())
            .collect();
        ObservedDerivative { grid: self.grid, dt: self.dt, first: 0, slices }
    }
}

/// `z -> D_{r,z} F` for source steps `r` in `first..first + slices.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservedDerivative {
    pub grid: GridSpec,
    pub dt: f64,
    pub first: usize,
    pub slices: Vec<Vec<f64>>,
}

impl ObservedDerivative {
    /// `sum_{r in steps} dt * |D_r F|_H^2`. Steps outside the stored range
    /// contribute nothing.
    pub fn norm_steps(&self, hn: &HNorm, steps: std::ops::Range<usize>) -> f64 {
        let mut ws = hn.workspace();
        let lo = steps.start.max(self.first);
        let hi = steps.end.min(self.first + self.slices.len());
        (lo..hi).map(|r| self.dt * hn.norm_sq(&self.slices[r - self.first], &mut ws)).sum()
    }

    /// Per-step contributions `dt * |D_r F|_H^2`, in source order.
    pub fn step_norms(&self, hn: &HNorm) -> Vec<f64> {
        let mut ws = hn.workspace();
        let mut out = Vec::with_capacity(self.slices.len());
        let mut it = self.slices.chunks(2);
        for pair in &mut it {
            if pair.len() == 2 {
                let (a, b) = hn.norm_sq_pair(&pair[0], &pair[1], &mut ws);
                out.push(self.dt * a);
                out.push(self.dt * b);
            } else {
                out.push(self.dt * hn.norm_sq(&pair[0], &mut ws));
            }
        }
        out
    }
}

/// `int_a^e |D_r F|_H^2 dr` with source steps `r` satisfying `a <= t_r < e`.
pub fn ht_norm_sq(d: &ObservedDerivative, hn: &HNorm, a: f64, e: f64) -> Result<f64> {
    if !(0.0 <= a && a <= e) {
        return invalid(format!("window [{a}, {e}] is not ordered"));
    }
    let to_step = |t: f64| (t / d.dt - 1e-9).ceil().max(0.0) as usize;
    Ok(d.norm_steps(hn, to_step(a)..to_step(e)))
}

fn derivative_inputs(sim: &Simulator, path: &SolutionPath, k: usize, dw: &[f64], a: &mut [f64]) {
    let c = sim.config().coeffs;
    let dt = sim.config().dt;
    for ((ai, &u), &w) in a.iter_mut().zip(&path.states[k].values).zip(dw) {
        *ai = c.drift.derivative(u) * dt + c.sigma.derivative(u) * w;
    }
}

/// Forward propagation of the whole derivative tensor up to `obs_step`.
pub fn propagate_derivative(sim: &Simulator, path: &SolutionPath, obs_step: usize) -> Result<DerivativeField> {
    let grid = sim.grid();
    let n = grid.sites();
    if grid.dim != 1 || n > MAX_TENSOR_SITES || path.steps() > MAX_TENSOR_STEPS {
        return Err(Error::TooLarge(format!(
            "tensor needs d = 1, n <= {MAX_TENSOR_SITES} and at most {MAX_TENSOR_STEPS} steps; got d = {}, n = {n}, {} steps",
            grid.dim,
            path.steps()
        )));
    }
    if obs_step > path.steps() {
        return invalid("observation step beyond the end of the path");
    }
    let cfg = sim.config();
    let linear = cfg.coeffs.sigma.is_constant() && cfg.coeffs.drift.is_constant();
    let mut ws = sim.fourier().workspace();
    let mut delta = vec![0.0; n];
    delta[0] = 1.0 / grid.cell_volume();
    sim.heat_step(&mut delta, &mut ws);
    let kernel = delta;

    let mut data = vec![0.0; obs_step * n * n];
    let mut dw = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut nws = sim.sampler().workspace();
    for k in 0..obs_step {
        // Evolve rows born at earlier steps.
        let live = &mut data[..k * n * n];
        if !linear {
            path.noise.fill(k, &mut nws, &mut dw);
            derivative_inputs(sim, path, k, &dw, &mut a);
            for row in live.chunks_mut(n) {
                for (v, ai) in row.iter_mut().zip(&a) {
                    *v *= 1.0 + ai;
                }
            }
        }
        let mut rows = live.chunks_mut(n);
        while let Some(r1) = rows.next() {
            match rows.next() {
                Some(r2) => sim.heat_step_pair(r1, r2, &mut ws),
                None => sim.heat_step(r1, &mut ws),
            }
        }
        // Sources at step k enter through one smoothed kick.
        let u = &path.states[k].values;
        for z in 0..n {
            let s = cfg.coeffs.sigma.value(u[z]);
            let row = &mut data[(k * n + z) * n..(k * n + z + 1) * n];
            for (x, v) in row.iter_mut().enumerate() {
                *v = s * kernel[grid.difference(x, z)];
            }
        }
    }
    Ok(DerivativeField { grid, dt: cfg.dt, obs_step, data })
}

/// Derivative of `F = F_0 + sum_{k < end} c_k`, the observation functional
/// truncated after step `end`, for sources `r` in `window`.
///
/// Backward sweep: with `w_k = h^d G_k a_k`, `mu_k = w_k + (1 + a_k) S mu_{k+1}`
/// and `mu_end = 0`, the derivative is
/// `D_{r,z} F = sigma(u_r(z)) (G_r(z) + (S mu_{r+1})(z) / h^d)`.
pub fn adjoint_derivative(
    sim: &Simulator,
    path: &SolutionPath,
    end: usize,
    window: std::ops::Range<usize>,
) -> Result<ObservedDerivative> {
    if window.start > window.end || window.end > end || end > path.steps() {
        return invalid("need window inside 0..end and end within the path");
    }
    let cfg = sim.config();
    let n = sim.grid().sites();
    let hd = sim.grid().cell_volume();
    let linear = cfg.coeffs.sigma.is_constant() && cfg.coeffs.drift.is_constant();
    let mut ws = sim.fourier().workspace();
    let mut nws = sim.sampler().workspace();
    let mut mu = vec![0.0; n];
    let mut dw = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut slices = vec![Vec::new(); window.len()];
    let mut active = false;
    for k in (window.start..end).rev() {
        if active {
            sim.heat_step(&mut mu, &mut ws);
        }
        let g = sim.kernel(k);
        let u = &path.states[k].values;
        if window.contains(&k) {
            slices[k - window.start] = (0..n)
                .map(|z| cfg.coeffs.sigma.value(u[z]) * (g[z] + mu[z] / hd))
                .collect();
        }
        if !linear && k > window.start {
            path.noise.fill(k, &mut nws, &mut dw);
            derivative_inputs(sim, path, k, &dw, &mut a);
            for i in 0..n {
                mu[i] = hd * g[i] * a[i] + (1.0 + a[i]) * mu[i];
            }
            active = true;
        }
    }
    Ok(ObservedDerivative { grid: sim.grid(), dt: cfg.dt, first: window.start, slices })
}

/// Outcome of the deterministic linear-case identity `|Du(t, x)|^2 = Phi(t)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityReport {
    pub norm: f64,
    pub phi_t: f64,
    pub relative_error: f64,
    /// Cumulative window norms against `Phi(delta)`; slope should be 1.
    pub windows: ScalingReport,
    pub pass: bool,
}

/// Builds the full tensor for one path and compares its `H_t` norm with `Phi(t)`.
pub fn linear_identity(sim: &Simulator, phi: &PhiEvaluator, seed: u64) -> Result<IdentityReport> {
    let cfg = sim.config();
    let path = sim.solve(seed, 0)?;
    let d = propagate_derivative(sim, &path, cfg.steps)?.observed(cfg.x_obs);
    let hn = HNorm::new(cfg.grid, &cfg.measure)?;
    let per = d.step_norms(&hn);
    let norm: f64 = per.iter().sum();
    let t = cfg.horizon();
    let phi_t = phi.phi(t)?;
    let rel = (norm - phi_t).abs() / phi_t;
    let (x, est) = window_curve(&per, cfg.dt, phi)?;
    let windows = ScalingReport::fit(x, &est, 1.0, 0.15)?;
    Ok(IdentityReport { norm, phi_t, relative_error: rel, windows, pass: rel < 0.05 })
}

/// Cumulative norms over trailing windows of 2^j steps.
fn window_curve(per: &[f64], dt: f64, phi: &PhiEvaluator) -> Result<(Vec<f64>, Vec<MomentEstimate>)> {
    let n = per.len();
    let mut x = Vec::new();
    let mut est = Vec::new();
    let mut w = (n / 64).max(1);
    while w <= n {
        let s: f64 = per[n - w..].iter().sum();
        x.push(phi.phi(w as f64 * dt)?);
        est.push(MomentEstimate { mean: s, stderr: 0.0, count: 1 });
        w *= 2;
    }
    Ok((x, est))
}

fn check_decade(widths: &[usize]) -> Result<()> {
    let lo = widths.iter().copied().min().unwrap_or(0);
    let hi = widths.iter().copied().max().unwrap_or(0);
    if widths.len() < 3 || lo == 0 || (hi as f64) < 10.0 * lo as f64 {
        return invalid("need at least three positive widths spanning a decade");
    }
    Ok(())
}

/// `E |Du(T, x_obs)|^{2p}_{H_{T - delta, T}}` for each `delta` (in steps),
/// regressed against `Phi(delta)`. The expected slope is `p`.
pub fn window_norm_scaling(
    sim: &Simulator,
    phi: &PhiEvaluator,
    deltas: &[usize],
    p: u32,
    paths: usize,
    seed: u64,
) -> Result<ScalingReport> {
    check_decade(deltas)?;
    let cfg = sim.config();
    let n = cfg.steps;
    let widest = *deltas.iter().max().unwrap();
    if widest > n {
        return invalid("window wider than the time horizon");
    }
    let hn = HNorm::new(cfg.grid, &cfg.measure)?;
    sim.observation_kernels();
    let ens = run_ensemble(paths, |i| {
        let path = sim.solve(seed, i).map_err(|_| Blowup { step: 0 })?;
        let d = adjoint_derivative(sim, &path, n, n - widest..n).expect("valid window");
        let per = d.step_norms(&hn);
        Ok(deltas
            .iter()
            .map(|&w| per[widest - w..].iter().sum::<f64>().powi(p as i32))
            .collect::<Vec<f64>>())
    })?;
    let est: Vec<MomentEstimate> = (0..deltas.len())
        .map(|j| MomentEstimate::from_samples(&ens.values.iter().map(|v| v[j]).collect::<Vec<_>>()))
        .collect();
    let x = deltas
        .iter()
        .map(|&w| phi.phi(w as f64 * cfg.dt))
        .collect::<Result<Vec<_>>>()?;
    ScalingReport::fit(x, &est, p as f64, 0.15 * p as f64)
}

/// Quantile of `X` at which the small-ball curve starts. Starting in the bulk
/// (say at the median) measures the shape of the distribution, not its left tail.
pub const SMALL_BALL_QUANTILE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SmallBallPoint {
    pub fraction: f64,
    pub eps: f64,
    pub probability: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NegativeMomentReport {
    pub paths: usize,
    pub delta_g: f64,
    /// `eps` at fraction 1: the empirical `SMALL_BALL_QUANTILE` of `X`.
    pub anchor: f64,
    pub curve: Vec<SmallBallPoint>,
    /// Each halving of `eps` divides `P(X < eps)` by at least 4.
    pub decay_ok: bool,
    pub moment_half: f64,
    pub moment_full: f64,
    pub relative_change: f64,
    pub stable: bool,
    /// Log-log slope of the small-ball curve when enough points are non-zero.
    pub slope: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub pass: bool,
}

/// Samples of `X = Delta^{-1} int_{t_{n-1}}^{t_n} |D_r F_n|_H^2 dr` over
/// `paths` paths, with `Delta = Phi(t - t_{n-1}) - Phi(t - t_n)`.
pub fn malliavin_ratio_samples(
    sim: &Simulator,
    phi: &PhiEvaluator,
    interval: (usize, usize),
    paths: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let cfg = sim.config();
    let (lo, hi) = interval;
    if !(lo < hi && hi <= cfg.steps) {
        return invalid("interval must satisfy t_{n-1} < t_n <= T");
    }
    let t = cfg.horizon();
    let t_hi = hi as f64 * cfg.dt;
    let before = phi.phi(t - lo as f64 * cfg.dt)?;
    let after = if hi == cfg.steps { 0.0 } else { phi.phi(t - t_hi)? };
    let delta = before - after;
    let hn = HNorm::new(cfg.grid, &cfg.measure)?;
    sim.observation_kernels();
    let ens = run_ensemble(paths, |i| {
        let path = sim.solve(seed, i).map_err(|_| Blowup { step: 0 })?;
        let d = adjoint_derivative(sim, &path, hi, lo..hi).expect("valid window");
        Ok(d.step_norms(&hn).iter().sum::<f64>() / delta)
    })?;
    Ok((delta, ens.values))
}

/// Small-ball curve and stability of `E[X^{-p}]` under doubling the sample.
///
/// Runs `2 * paths` paths; the first `paths` give the half-sample moment.
pub fn negative_moment_probe(
    sim: &Simulator,
    phi: &PhiEvaluator,
    interval: (usize, usize),
    p: u32,
    paths: usize,
    seed: u64,
) -> Result<NegativeMomentReport> {
    let sigma = sim.config().coeffs.sigma;
    if !(sigma.lower_bound() > 0.0) {
        return Err(Error::Degenerate("the diffusion coefficient is not bounded away from zero".into()));
    }
    let (delta, xs) = malliavin_ratio_samples(sim, phi, interval, 2 * paths, seed)?;
    let neg = |v: &[f64]| mean(&v.iter().map(|x| x.powi(-(p as i32))).collect::<Vec<_>>());
    let half = neg(&xs[..paths.min(xs.len())]);
    let full = neg(&xs);
    let change = (full - half).abs() / half;
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let anchor = sorted[(SMALL_BALL_QUANTILE * sorted.len() as f64) as usize];
    let curve: Vec<SmallBallPoint> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|&f| {
            let eps = f * anchor;
            let count = sorted.partition_point(|&x| x < eps);
            SmallBallPoint { fraction: f, eps, probability: count as f64 / sorted.len() as f64, count }
        })
        .collect();
    let decay_ok = curve.windows(2).all(|w| 4.0 * w[1].probability <= w[0].probability);
    let nz: Vec<&SmallBallPoint> = curve.iter().filter(|c| c.count > 0).collect();
    let fit = if nz.len() >= 3 {
        let lx: Vec<f64> = nz.iter().map(|c| c.eps.ln()).collect();
        let ly: Vec<f64> = nz.iter().map(|c| c.probability.ln()).collect();
        fit_line(&lx, &ly).ok()
    } else {
        None
    };
    let stable = change < 0.1;
    Ok(NegativeMomentReport {
        paths: xs.len(),
        delta_g: delta,
        anchor,
        curve,
        decay_ok,
        moment_half: half,
        moment_full: full,
        relative_change: change,
        stable,
        slope: fit.map(|f| f.slope),
        ci_low: fit.map(|f| f.ci_low),
        ci_high: fit.map(|f| f.ci_high),
        pass: decay_ok && stable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{CoefficientFn, Coefficients};
    use crate::grid::Field;
    use crate::kernel::gamma;
    use crate::solver::SolverConfig;
    use crate::spectral::SpectralMeasure;

    fn sim(coeffs: Coefficients, m: SpectralMeasure, n: usize, l: f64, dt: f64, steps: usize) -> Simulator {
        let grid = GridSpec::new(1, n, l).unwrap();
        let u0 = Field::from_fn(grid, |x| 0.3 * x[0].sin());
        Simulator::new(SolverConfig::new(grid, m, coeffs, u0, dt, steps, grid.centre()).unwrap()).unwrap()
    }

    #[test]
    fn linear_tensor_is_the_heat_kernel() {
        let s = sim(Coefficients::linear(), SpectralMeasure::white(1).unwrap(), 32, 4.0, 1e-2, 40);
        let path = s.solve(1, 0).unwrap();
        let d = propagate_derivative(&s, &path, 40).unwrap();
        let grid = s.grid();
        let h = grid.spacing();
        for r in [0, 20, 30] {
            let tau = (40 - r) as f64 * 1e-2;
            assert!(tau >= 4.0 * h * h);
            for z in [0, 7, 16] {
                let f = d.slice(r, z);
                for (x, v) in f.iter().enumerate() {
                    let off = grid.coordinate(x)[0] - grid.coordinate(z)[0];
                    let exact: f64 = (-4..=4).map(|j| gamma(tau, &[off + j as f64 * 4.0]).unwrap()).sum();
                    assert!((v - exact).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn adaptedness_and_degenerate_noise() {
        let s = sim(Coefficients::drift(), SpectralMeasure::riesz(0.5, 1).unwrap(), 16, 4.0, 1e-2, 20);
        let path = s.solve(2, 0).unwrap();
        let d = propagate_derivative(&s, &path, 12).unwrap();
        for r in 12..20 {
            assert!(d.slice(r, 3).iter().all(|&v| v == 0.0));
        }
        let zero = Coefficients { sigma: CoefficientFn::constant(0.0), drift: Coefficients::drift().drift };
        let s0 = sim(zero, SpectralMeasure::white(1).unwrap(), 16, 4.0, 1e-2, 20);
        let p0 = s0.solve(2, 0).unwrap();
        let d0 = propagate_derivative(&s0, &p0, 20).unwrap();
        assert!(d0.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_guard() {
        let s = sim(Coefficients::linear(), SpectralMeasure::white(1).unwrap(), 256, 20.0, 1e-3, 10);
        let path = s.solve(0, 0).unwrap();
        assert!(matches!(propagate_derivative(&s, &path, 10), Err(Error::TooLarge(_))));
    }

    #[test]
    fn tensor_matches_finite_differences_of_the_scheme() {
        // Perturb one noise value and difference the final state.
        let s = sim(Coefficients::drift(), SpectralMeasure::exponential(1.0, 1).unwrap(), 16, 4.0, 1e-2, 12);
        let cfg = s.config().clone();
        let path = s.solve(5, 1).unwrap();
        let d = propagate_derivative(&s, &path, 12).unwrap();
        let (r, z, eps) = (4, 6, 1e-6);
        let run = |bump: f64| {
            let mut u = cfg.u0.values.clone();
            let mut ws = s.fourier().workspace();
            for (k, mut dw) in path.noise.increments().enumerate() {
                if k == r {
                    dw.values[z] += bump / cfg.grid.cell_volume();
                }
                assert!(s.step(&mut u, &dw.values, &mut ws));
            }
            u
        };
        let (up, dn) = (run(eps), run(-eps));
        let f = d.slice(r, z);
        for x in 0..16 {
            let fd = (up[x] - dn[x]) / (2.0 * eps);
            assert!((fd - f[x]).abs() < 1e-6 * (1.0 + f[x].abs()), "x {x}: {fd} vs {}", f[x]);
        }
    }

    #[test]
    fn adjoint_agrees_with_forward_tensor() {
        for coeffs in [Coefficients::linear(), Coefficients::sine_diffusion(), Coefficients::drift()] {
            let s = sim(coeffs, SpectralMeasure::riesz(0.5, 1).unwrap(), 32, 6.0, 5e-3, 60);
            let path = s.solve(8, 3).unwrap();
            let fwd = propagate_derivative(&s, &path, 60).unwrap().observed(s.config().x_obs);
            let adj = adjoint_derivative(&s, &path, 60, 10..60).unwrap();
            for r in 10..60 {
                for z in 0..32 {
                    let (a, b) = (fwd.slices[r][z], adj.slices[r - 10][z]);
                    assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{coeffs:?} r {r} z {z}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn window_norms_are_additive_and_quadratic_in_sigma() {
        let m = SpectralMeasure::riesz(0.5, 1).unwrap();
        let s = sim(Coefficients::linear(), m, 32, 6.0, 5e-3, 40);
        let hn = HNorm::new(s.grid(), &m).unwrap();
        let path = s.solve(0, 0).unwrap();
        let d = adjoint_derivative(&s, &path, 40, 0..40).unwrap();
        let t = s.config().horizon();
        let whole = ht_norm_sq(&d, &hn, 0.0, t).unwrap();
        let split = ht_norm_sq(&d, &hn, 0.0, 0.07).unwrap() + ht_norm_sq(&d, &hn, 0.07, t).unwrap();
        assert!((whole - split).abs() < 1e-12 * whole);
        assert_eq!(ht_norm_sq(&d, &hn, 0.1, 0.1).unwrap(), 0.0);

        let lam = 2.5;
        let scaled = Coefficients { sigma: CoefficientFn::constant(lam), drift: CoefficientFn::constant(0.0) };
        let s2 = sim(scaled, m, 32, 6.0, 5e-3, 40);
        let p2 = s2.solve(0, 0).unwrap();
        let d2 = adjoint_derivative(&s2, &p2, 40, 0..40).unwrap();
        let w2 = ht_norm_sq(&d2, &hn, 0.0, t).unwrap();
        assert!((w2 - lam * lam * whole).abs() < 1e-12 * w2);
    }

    #[test]
    fn linear_identity_within_grid_tolerance() {
        let m = SpectralMeasure::riesz(0.5, 1).unwrap();
        let s = sim(Coefficients::linear(), m, 64, 8.0, 1.0 / 256.0, 128);
        let r = linear_identity(&s, &PhiEvaluator::new(m), 0).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn linear_window_ratio_is_flat() {
        let m = SpectralMeasure::riesz(0.5, 1).unwrap();
        let s = sim(Coefficients::linear(), m, 32, 8.0, 2e-3, 300);
        let phi = PhiEvaluator::new(m);
        let r = window_norm_scaling(&s, &phi, &[30, 60, 120, 300], 1, 4, 0).unwrap();
        let ratios: Vec<f64> = r.estimate.iter().zip(&r.x).map(|(e, x)| e / x).collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        assert!(hi / lo < 1.1, "{ratios:?}");
        assert!(window_norm_scaling(&s, &phi, &[30, 60], 1, 4, 0).is_err());
    }

    #[test]
    fn degenerate_sigma_is_refused() {
        let m = SpectralMeasure::white(1).unwrap();
        let deg = Coefficients { sigma: CoefficientFn::Trig { c0: 0.0, sin_amp: 1.0, cos_amp: 0.0 }, drift: CoefficientFn::constant(0.0) };
        let s = sim(deg, m, 16, 4.0, 1e-2, 20);
        assert!(matches!(
            negative_moment_probe(&s, &PhiEvaluator::new(m), (10, 20), 1, 10, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn linear_small_ball_is_empty() {
        let m = SpectralMeasure::white(1).unwrap();
        let s = sim(Coefficients::linear(), m, 32, 6.0, 5e-3, 40);
        let r = negative_moment_probe(&s, &PhiEvaluator::new(m), (30, 40), 1, 50, 1).unwrap();
        assert!(r.pass && r.curve[1].count == 0 && r.relative_change < 1e-9, "{r:?}");
    }
}
