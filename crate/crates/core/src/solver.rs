//! Exponential-Euler time stepping of the mild equation on a periodic grid,
//! plus the observation functionals built on top of it.
//!
//! One step is `u_{k+1} = S_dt(u_k + b(u_k) dt + sigma(u_k) dW_k)`, where `S_tau`
//! multiplies Fourier mode `xi` by `exp(-tau |xi|^2)`.

use crate::coeffs::Coefficients;
use crate::error::{invalid, Error, Result};
use crate::fourier::{Fourier, Workspace};
use crate::grid::{dot, Field, GridSpec};
use crate::noise::{NoisePath, NoiseSampler};
use crate::rng;
use crate::spectral::SpectralMeasure;
use crate::stats::{MomentEstimate, ScalingReport};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use std::sync::{Arc, OnceLock};

/// Values beyond this magnitude are treated as a blow-up.
pub const BLOWUP: f64 = 1e100;

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub grid: GridSpec,
    pub measure: SpectralMeasure,
    pub coeffs: Coefficients,
    pub u0: Field,
    pub dt: f64,
    pub steps: usize,
    pub x_obs: usize,
}

impl SolverConfig {
    pub fn new(
        grid: GridSpec,
        measure: SpectralMeasure,
        coeffs: Coefficients,
        u0: Field,
        dt: f64,
        steps: usize,
        x_obs: usize,
    ) -> Result<Self> {
        let cfg = Self { grid, measure, coeffs, u0, dt, steps, x_obs };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.measure.dim != self.grid.dim {
            return invalid("noise and grid dimensions differ");
        }
        if self.u0.grid != self.grid {
            return invalid("initial field lives on a different grid");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.steps == 0 {
            return invalid("need dt > 0 and at least one step");
        }
        if self.x_obs >= self.grid.sites() {
            return invalid(format!("observation site {} outside the grid", self.x_obs));
        }
        Ok(())
    }

    /// Final time `T = dt * steps`, which is also the observation time.
    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }
}

/// Reason a path was discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Blowup {
    pub step: usize,
}

/// Hooks called while a path is stepped.
pub trait StepObserver {
    /// State `u(t_k)`, for `k = 0..=stop`.
    fn state(&mut self, _k: usize, _u: &[f64]) {}
    /// State `u(t_k)` together with the increment `dW_k`, for `k < stop`.
    fn increment(&mut self, _k: usize, _u: &[f64], _dw: &[f64]) {}
}

impl StepObserver for () {}

/// Precomputed operators for one configuration.
pub struct Simulator {
    cfg: SolverConfig,
    fourier: Fourier,
    heat_dt: Vec<f64>,
    noise: Arc<NoiseSampler>,
    kernels: OnceLock<Vec<f64>>,
    spectral: SpectralObservation,
}

/// Data for advancing an additive equation directly in Fourier space.
struct SpectralObservation {
    heat: Vec<f64>,
    phase: Vec<Complex64>,
    start: Vec<Complex64>,
}

impl SpectralObservation {
    fn new(cfg: &SolverConfig, noise: &NoiseSampler, fourier: &Fourier) -> Self {
        let grid = cfg.grid;
        let reps = noise.representatives();
        let nr = noise.real_mode_count();
        let mut ws = fourier.workspace();
        fourier.forward_real(&cfg.u0.values, &mut ws);
        let inv_n = 1.0 / grid.sites() as f64;
        let x = grid.coordinate(cfg.x_obs);
        let phase = reps
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                let xi = grid.frequency(m);
                let w = if i < nr { 1.0 } else { 2.0 };
                Complex64::from_polar(w, xi[0] * x[0] + xi[1] * x[1])
            })
            .collect();
        Self {
            heat: reps.iter().map(|&m| (-cfg.dt * grid.frequency_norm_sq(m)).exp()).collect(),
            phase,
            start: reps.iter().map(|&m| ws.buf[m] * inv_n).collect(),
        }
    }
}

pub struct PathWorkspace {
    pub fft: Workspace,
    pub u: Vec<f64>,
    pub dw: Vec<f64>,
}

impl Simulator {
    pub fn new(cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid;
        let heat_dt = heat_multiplier(&grid, cfg.dt);
        let noise = Arc::new(NoiseSampler::new(grid, cfg.measure)?);
        let fourier = Fourier::new(grid);
        Ok(Self {
            heat_dt,
            spectral: SpectralObservation::new(&cfg, &noise, &fourier),
            noise,
            fourier,
            cfg,
            kernels: OnceLock::new(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn grid(&self) -> GridSpec {
        self.cfg.grid
    }

    pub fn fourier(&self) -> &Fourier {
        &self.fourier
    }

    pub fn sampler(&self) -> &Arc<NoiseSampler> {
        &self.noise
    }

    pub fn workspace(&self) -> PathWorkspace {
        let n = self.cfg.grid.sites();
        PathWorkspace {
            fft: self.fourier.workspace(),
            u: vec![0.0; n],
            dw: vec![0.0; n],
        }
    }

    pub fn noise_path(&self, seed: u64, path: u64) -> NoisePath {
        NoisePath {
            sampler: self.noise.clone(),
            dt: self.cfg.dt,
            steps: self.cfg.steps,
            seed,
            path,
        }
    }

    /// `S_tau phi` for arbitrary `tau >= 0`.
    pub fn heat(&self, phi: &mut [f64], tau: f64, ws: &mut Workspace) {
        if tau == 0.0 {
            return;
        }
        let m = heat_multiplier(&self.cfg.grid, tau);
        self.fourier.apply_multiplier(phi, &m, ws);
    }

    /// `S_dt` with the cached multiplier.
    pub fn heat_step(&self, phi: &mut [f64], ws: &mut Workspace) {
        self.fourier.apply_multiplier(phi, &self.heat_dt, ws);
    }

    /// Applies `S_dt` to two fields with one transform pair.
    pub fn heat_step_pair(&self, a: &mut [f64], b: &mut [f64], ws: &mut Workspace) {
        self.fourier.apply_multiplier_pair(a, b, &self.heat_dt, ws);
    }

    /// One exponential-Euler step in place. Returns false when the field blows up.
    pub fn step(&self, u: &mut [f64], dw: &[f64], ws: &mut Workspace) -> bool {
        let (sigma, drift) = (self.cfg.coeffs.sigma, self.cfg.coeffs.drift);
        let dt = self.cfg.dt;
        if self.cfg.coeffs.is_additive() {
            let s = sigma.value(0.0);
            for (v, w) in u.iter_mut().zip(dw) {
                *v += s * w;
            }
        } else {
            for (v, w) in u.iter_mut().zip(dw) {
                *v += drift.value(*v) * dt + sigma.value(*v) * w;
            }
        }
        self.heat_step(u, ws);
        u.iter().all(|v| v.abs() <= BLOWUP)
    }

    /// Steps path `path` up to step `stop`, reporting to `obs`. On success
    /// `ws.u` holds `u(t_stop)`.
    pub fn run<O: StepObserver + ?Sized>(
        &self,
        seed: u64,
        path: u64,
        stop: usize,
        ws: &mut PathWorkspace,
        obs: &mut O,
    ) -> std::result::Result<(), Blowup> {
        ws.u.copy_from_slice(&self.cfg.u0.values);
        for k in 0..stop {
            obs.state(k, &ws.u);
            let mut r = rng::step_rng(seed, path, k as u64);
            self.noise.fill(self.cfg.dt, &mut r, &mut ws.fft, &mut ws.dw);
            obs.increment(k, &ws.u, &ws.dw);
            if !self.step(&mut ws.u, &ws.dw, &mut ws.fft) {
                return Err(Blowup { step: k });
            }
        }
        obs.state(stop, &ws.u);
        Ok(())
    }

    /// `u(T, x_obs)` for additive coefficients, advancing the Fourier modes
    /// directly. Uses the same increments as [`Self::run`], so both routes
    /// agree up to rounding.
    pub fn additive_observation(&self, seed: u64, path: u64) -> Option<f64> {
        if !self.cfg.coeffs.is_additive() {
            return None;
        }
        let c = self.cfg.coeffs.sigma.value(0.0);
        let sp = &self.spectral;
        let mut z = sp.start.clone();
        let mut a = vec![Complex64::default(); z.len()];
        for k in 0..self.cfg.steps {
            let mut r = rng::step_rng(seed, path, k as u64);
            self.noise.fill_modes(self.cfg.dt, &mut r, &mut a);
            for ((zi, ai), qi) in z.iter_mut().zip(&a).zip(&sp.heat) {
                *zi = (*zi + ai * c) * qi;
            }
        }
        Some(z.iter().zip(&sp.phase).map(|(zi, p)| (zi * p).re).sum())
    }

    /// Records every state of one path.
    pub fn solve(&self, seed: u64, path: u64) -> Result<SolutionPath> {
        struct Rec(Vec<Field>, GridSpec);
        impl StepObserver for Rec {
            fn state(&mut self, _k: usize, u: &[f64]) {
                self.0.push(Field { grid: self.1, values: u.to_vec() });
            }
        }
        let mut rec = Rec(Vec::with_capacity(self.cfg.steps + 1), self.cfg.grid);
        let mut ws = self.workspace();
        self.run(seed, path, self.cfg.steps, &mut ws, &mut rec)
            .map_err(|_| Error::Unstable { failed: 1, total: 1 })?;
        Ok(SolutionPath {
            states: rec.0,
            noise: self.noise_path(seed, path),
        })
    }

    /// `F_0 = (S_t u0)(x_obs)`.
    pub fn f0(&self, t: f64) -> f64 {
        let mut v = self.cfg.u0.values.clone();
        let mut ws = self.fourier.workspace();
        self.heat(&mut v, t, &mut ws);
        v[self.cfg.x_obs]
    }

    /// Lattice heat kernel `G_tau(y - x_obs)` for every site `y`: the image of a
    /// unit-mass delta at the observation site.
    pub fn kernel_row(&self, tau: f64, ws: &mut Workspace) -> Vec<f64> {
        let grid = self.cfg.grid;
        let mut v = vec![0.0; grid.sites()];
        v[self.cfg.x_obs] = 1.0 / grid.cell_volume();
        self.heat(&mut v, tau, ws);
        v
    }

    /// Row `k` is `G_{(N-k) dt}(x_obs - .)`, the weight of step `k` in the
    /// observation at the final time. Built once on first use.
    pub fn observation_kernels(&self) -> &[f64] {
        self.kernels.get_or_init(|| {
            let mut ws = self.fourier.workspace();
            let (n, dt) = (self.cfg.steps, self.cfg.dt);
            let sites = self.cfg.grid.sites();
            let mut table = vec![0.0; n * sites];
            for k in 0..n {
                let row = self.kernel_row((n - k) as f64 * dt, &mut ws);
                table[k * sites..(k + 1) * sites].copy_from_slice(&row);
            }
            table
        })
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        let s = self.cfg.grid.sites();
        &self.observation_kernels()[k * s..(k + 1) * s]
    }

    /// Stochastic and drift contributions of step `k` to the observation.
    pub fn contribution(&self, k: usize, u: &[f64], dw: &[f64]) -> (f64, f64) {
        let g = self.kernel(k);
        let c = self.cfg.coeffs;
        let hd = self.cfg.grid.cell_volume();
        let (mut m, mut a) = (0.0, 0.0);
        for i in 0..u.len() {
            m += g[i] * c.sigma.value(u[i]) * dw[i];
            a += g[i] * c.drift.value(u[i]);
        }
        (m * hd, a * hd * self.cfg.dt)
    }
}

/// `exp(-tau |xi|^2)` on every mode of the grid.
pub fn heat_multiplier(grid: &GridSpec, tau: f64) -> Vec<f64> {
    (0..grid.sites()).map(|m| (-tau * grid.frequency_norm_sq(m)).exp()).collect()
}

/// One-shot `S_tau phi`.
pub fn heat_semigroup(phi: &Field, tau: f64) -> Result<Field> {
    if !(tau >= 0.0) {
        return invalid(format!("heat flow time must be non-negative, got {tau}"));
    }
    let mut out = phi.clone();
    if tau > 0.0 {
        let f = Fourier::new(phi.grid);
        let mut ws = f.workspace();
        f.apply_multiplier(&mut out.values, &heat_multiplier(&phi.grid, tau), &mut ws);
    }
    Ok(out)
}

/// One-shot exponential-Euler step.
pub fn step(u: &Field, dw: &Field, cfg: &SolverConfig) -> Result<Field> {
    if u.grid != cfg.grid || dw.grid != cfg.grid {
        return invalid("fields must live on the configured grid");
    }
    let sim = Simulator::new(cfg.clone())?;
    let mut out = u.clone();
    let mut ws = sim.fourier.workspace();
    if !sim.step(&mut out.values, &dw.values, &mut ws) {
        return Err(Error::Unstable { failed: 1, total: 1 });
    }
    Ok(out)
}

/// All states of one path together with its noise key.
#[derive(Clone)]
pub struct SolutionPath {
    pub states: Vec<Field>,
    pub noise: NoisePath,
}

impl SolutionPath {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

/// `F_n` for each partition point, starting with `F_0`.
///
/// Step `k` contributes `h^d <G_{t - t_k}(x_obs - .), sigma(u_k) dW_k + b(u_k) dt>`
/// to every `F_n` with `t_n > t_k`. The observation time is the end of the path.
pub fn simulate_fn_sequence(sim: &Simulator, path: &SolutionPath, partition: &[usize]) -> Result<Vec<f64>> {
    check_partition(partition, path.steps())?;
    if path.steps() != sim.cfg.steps {
        return invalid("path length differs from the simulator configuration");
    }
    let contrib = path_contributions(sim, path);
    Ok(fn_from_contributions(sim.f0(sim.cfg.horizon()), &contrib, partition))
}

pub(crate) fn check_partition(partition: &[usize], steps: usize) -> Result<()> {
    if partition.len() < 2 || partition[0] != 0 || *partition.last().unwrap() != steps {
        return invalid(format!("partition must run from 0 to {steps}"));
    }
    if partition.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("partition points must increase strictly");
    }
    Ok(())
}

fn path_contributions(sim: &Simulator, path: &SolutionPath) -> Vec<f64> {
    let mut ws = sim.noise.workspace();
    let mut dw = vec![0.0; sim.grid().sites()];
    (0..path.steps())
        .map(|k| {
            path.noise.fill(k, &mut ws, &mut dw);
            let (m, a) = sim.contribution(k, &path.states[k].values, &dw);
            m + a
        })
        .collect()
}

pub fn fn_from_contributions(f0: f64, contrib: &[f64], partition: &[usize]) -> Vec<f64> {
    let mut out = vec![f0];
    let mut acc = f0;
    for w in partition.windows(2) {
        acc += contrib[w[0]..w[1]].iter().sum::<f64>();
        out.push(acc);
    }
    out
}

/// Per-step observation contributions, collected while a path runs.
pub struct ContributionObserver<'a> {
    pub sim: &'a Simulator,
    pub stochastic: Vec<f64>,
    pub drift: Vec<f64>,
}

impl<'a> ContributionObserver<'a> {
    pub fn new(sim: &'a Simulator) -> Self {
        Self { sim, stochastic: Vec::new(), drift: Vec::new() }
    }
}

impl StepObserver for ContributionObserver<'_> {
    fn increment(&mut self, k: usize, u: &[f64], dw: &[f64]) {
        let (m, a) = self.sim.contribution(k, u, dw);
        self.stochastic.push(m);
        self.drift.push(a);
    }
}

/// `u_{n-1}(s) = S_{(s - t_{n-1}) dt} u(t_{n-1})`.
pub fn truncated_field(sim: &Simulator, path: &SolutionPath, t_prev: usize, s: usize) -> Result<Field> {
    if t_prev > s || s > path.steps() {
        return invalid(format!("need t_prev <= s <= {}, got {t_prev}, {s}", path.steps()));
    }
    let mut f = path.states[t_prev].clone();
    let mut ws = sim.fourier.workspace();
    sim.heat(&mut f.values, (s - t_prev) as f64 * sim.cfg.dt, &mut ws);
    Ok(f)
}

/// Successful paths of an ensemble, in path order.
pub struct Ensemble<T> {
    pub values: Vec<T>,
    pub failed: usize,
}

/// Runs `job` for paths `0..paths` in parallel. Refuses to aggregate when
/// more than 0.1% of the paths blew up.
pub fn run_ensemble<T, F>(paths: usize, job: F) -> Result<Ensemble<T>>
where
    T: Send,
    F: Fn(u64) -> std::result::Result<T, Blowup> + Sync,
{
    let results: Vec<_> = (0..paths as u64).into_par_iter().map(&job).collect();
    let total = results.len();
    let values: Vec<T> = results.into_iter().filter_map(|r| r.ok()).collect();
    let failed = total - values.len();
    if failed as f64 > 1e-3 * total as f64 {
        return Err(Error::Unstable { failed, total });
    }
    Ok(Ensemble { values, failed })
}

/// Final observed values `u(T, x_obs)` of `paths` paths.
pub fn observed_values(sim: &Simulator, paths: usize, seed: u64) -> Result<Ensemble<f64>> {
    let x = sim.cfg.x_obs;
    run_ensemble(paths, |p| {
        if let Some(v) = sim.additive_observation(seed, p) {
            return if v.abs() <= BLOWUP { Ok(v) } else { Err(Blowup { step: sim.cfg.steps }) };
        }
        let mut ws = sim.workspace();
        sim.run(seed, p, sim.cfg.steps, &mut ws, &mut ())?;
        Ok(ws.u[x])
    })
}

/// Estimates `E|u(s, x_obs) - u_{n-1}(s, x_obs)|^p` for several `s > t_prev`.
pub fn difference_moments(
    sim: &Simulator,
    t_prev: usize,
    s_list: &[usize],
    p: u32,
    paths: usize,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    if s_list.is_empty() || s_list.iter().any(|&s| s <= t_prev || s > sim.cfg.steps) {
        return invalid("each s must satisfy t_prev < s <= steps");
    }
    if p != 2 && p != 4 {
        return invalid("moment order must be 2 or 4");
    }
    let mut fws = sim.fourier.workspace();
    let rows: Vec<Vec<f64>> = s_list
        .iter()
        .map(|&s| sim.kernel_row((s - t_prev) as f64 * sim.cfg.dt, &mut fws))
        .collect();
    let stop = *s_list.iter().max().unwrap();
    let hd = sim.grid().cell_volume();
    let x = sim.cfg.x_obs;

    struct Diff<'a> {
        t_prev: usize,
        s_list: &'a [usize],
        rows: &'a [Vec<f64>],
        hd: f64,
        x: usize,
        frozen: Vec<f64>,
        out: Vec<f64>,
    }
    impl StepObserver for Diff<'_> {
        fn state(&mut self, k: usize, u: &[f64]) {
            if k == self.t_prev {
                self.frozen = u.to_vec();
            }
            for (i, &s) in self.s_list.iter().enumerate() {
                if s == k {
                    let v = dot(&self.rows[i], &self.frozen) * self.hd;
                    self.out[i] = u[self.x] - v;
                }
            }
        }
    }

    let ens = run_ensemble(paths, |p| {
        let mut ws = sim.workspace();
        let mut obs = Diff {
            t_prev,
            s_list,
            rows: &rows,
            hd,
            x,
            frozen: Vec::new(),
            out: vec![0.0; s_list.len()],
        };
        sim.run(seed, p, stop, &mut ws, &mut obs)?;
        Ok(obs.out)
    })?;
    Ok((0..s_list.len())
        .map(|i| {
            let xs: Vec<f64> = ens.values.iter().map(|d| d[i].abs().powi(p as i32)).collect();
            MomentEstimate::from_samples(&xs)
        })
        .collect())
}

/// Regresses the difference moments against `Phi(s - t_prev)`; the expected
/// slope is `p / 2`.
pub fn difference_scaling(
    sim: &Simulator,
    phi: &crate::kernel::PhiEvaluator,
    t_prev: usize,
    lags: &[usize],
    p: u32,
    paths: usize,
    seed: u64,
) -> Result<ScalingReport> {
    let s_list: Vec<usize> = lags.iter().map(|l| t_prev + l).collect();
    let est = difference_moments(sim, t_prev, &s_list, p, paths, seed)?;
    let x: Vec<f64> = lags
        .iter()
        .map(|&l| phi.phi(l as f64 * sim.cfg.dt))
        .collect::<Result<_>>()?;
    let half = p as f64 / 2.0;
    ScalingReport::fit(x, &est, half, 0.15 * half)
}
