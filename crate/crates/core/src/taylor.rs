//! First-order Taylor split of the observation increments `F_n - F_{n-1}`.
//!
//! With `v = u_{n-1}` the field frozen at `t_{n-1}` and carried by the heat
//! flow, each step `k` of an interval contributes
//!
//! ```text
//! J1 = h^d <G_k, sigma(v) dW_k>          R1       = h^d <G_k, [sigma](u, v) (u - v) dW_k>
//! J2 = h^d dt <G_k, b(v)>                R2       = h^d dt <G_k, [b](u, v) (u - v)>
//!                                        R1_drift = h^d dt <G_k, b(u)>
//! ```
//!
//! where `[f](u, v)` is the divided difference. `J1 + J2 + R1 + R2` equals the
//! scheme's own increment up to rounding, and `J2 + R2 = R1_drift`.

use crate::coeffs::Coefficients;
use crate::error::{invalid, Result};
use crate::fourier::Workspace;
use crate::kernel::PhiEvaluator;
use crate::solver::{check_partition, run_ensemble, SolutionPath, Simulator, StepObserver};
use crate::stats::{mean, MomentEstimate, ScalingReport};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    J1,
    J2,
    R1,
    R1Drift,
    R2,
}

impl TermKind {
    pub const ALL: [TermKind; 5] = [TermKind::J1, TermKind::J2, TermKind::R1, TermKind::R1Drift, TermKind::R2];

    pub fn name(self) -> &'static str {
        match self {
            TermKind::J1 => "j1",
            TermKind::J2 => "j2",
            TermKind::R1 => "r1",
            TermKind::R1Drift => "r1_drift",
            TermKind::R2 => "r2",
        }
    }

    /// Exponent of `Delta` in the `L^p` norm, with its tolerance. Processes of
    /// order `k` scale like `Delta^{k/2}` and the residues of a split at order
    /// `K` like `Delta^{(K+1)/2}`.
    pub fn expected_slope(self) -> (f64, f64) {
        match self {
            TermKind::J1 => (0.5, 0.1),
            TermKind::J2 | TermKind::R1 | TermKind::R1Drift => (1.0, 0.2),
            TermKind::R2 => (1.5, 0.3),
        }
    }

    pub fn is_martingale(self) -> bool {
        matches!(self, TermKind::J1 | TermKind::R1)
    }

    /// False when the term is identically zero for these coefficients.
    pub fn present(self, c: &Coefficients) -> bool {
        match self {
            TermKind::J1 => !c.sigma.is_zero(),
            TermKind::J2 | TermKind::R1Drift => !c.drift.is_zero(),
            TermKind::R1 => !c.sigma.is_constant(),
            TermKind::R2 => !c.drift.is_constant(),
        }
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TermKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        TermKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown term '{s}', expected j1, j2, r1, r1_drift or r2")))
    }
}

/// Partition of `[0, T]` by step indices, with the local variance scale of
/// each interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartitionPlan {
    pub points: Vec<usize>,
    pub dt: f64,
    deltas: Vec<f64>,
}

impl PartitionPlan {
    pub fn new(points: Vec<usize>, dt: f64, phi: &PhiEvaluator) -> Result<Self> {
        let steps = *points.last().unwrap_or(&0);
        check_partition(&points, steps)?;
        let t = steps as f64 * dt;
        let phi_at = |k: usize| if k == steps { Ok(0.0) } else { phi.phi(t - k as f64 * dt) };
        let deltas = points
            .windows(2)
            .map(|w| Ok(phi_at(w[0])? - phi_at(w[1])?))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(i) = deltas.iter().position(|d| !(*d > 0.0)) {
            return invalid(format!("interval {} has a non-positive variance scale", i + 1));
        }
        Ok(Self { points, dt, deltas })
    }

    /// Equal intervals of `width` steps.
    pub fn uniform(steps: usize, width: usize, dt: f64, phi: &PhiEvaluator) -> Result<Self> {
        if width == 0 || !steps.is_multiple_of(width) {
            return invalid("width must divide the number of steps");
        }
        Self::new((0..=steps / width).map(|i| i * width).collect(), dt, phi)
    }

    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    /// Step range of interval `n` (1-based).
    pub fn interval(&self, n: usize) -> Result<(usize, usize)> {
        if n == 0 || n > self.intervals() {
            return invalid(format!("interval index {n} outside 1..={}", self.intervals()));
        }
        Ok((self.points[n - 1], self.points[n]))
    }

    /// `Phi(t - t_{n-1}) - Phi(t - t_n)`.
    pub fn delta_g(&self, n: usize) -> Result<f64> {
        self.interval(n)?;
        Ok(self.deltas[n - 1])
    }
}

/// All terms of one interval on one path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TaylorTerms {
    pub lo: usize,
    pub hi: usize,
    pub f_prev: f64,
    pub f_next: f64,
    pub j1: f64,
    pub j2: f64,
    pub r1: f64,
    pub r1_drift: f64,
    pub r2: f64,
}

impl TaylorTerms {
    pub fn get(&self, kind: TermKind) -> f64 {
        match kind {
            TermKind::J1 => self.j1,
            TermKind::J2 => self.j2,
            TermKind::R1 => self.r1,
            TermKind::R1Drift => self.r1_drift,
            TermKind::R2 => self.r2,
        }
    }

    /// `|(F_n - F_{n-1}) - (J1 + J2 + R1 + R2)|`.
    pub fn identity_error(&self) -> f64 {
        ((self.f_next - self.f_prev) - (self.j1 + self.j2 + self.r1 + self.r2)).abs()
    }

    pub fn identity_holds(&self) -> bool {
        self.identity_error() < 1e-9 * (1.0 + self.f_next.abs())
    }
}

/// Accumulates the terms of several intervals while a path is stepped.
pub struct TermObserver<'a> {
    sim: &'a Simulator,
    ws: Workspace,
    frozen: Vec<Vec<f64>>,
    total: f64,
    pub terms: Vec<TaylorTerms>,
}

impl<'a> TermObserver<'a> {
    pub fn new(sim: &'a Simulator, intervals: &[(usize, usize)]) -> Self {
        let f0 = sim.f0(sim.config().horizon());
        let terms = intervals
            .iter()
            .map(|&(lo, hi)| TaylorTerms { lo, hi, f_prev: f0, f_next: f0, j1: 0.0, j2: 0.0, r1: 0.0, r1_drift: 0.0, r2: 0.0 })
            .collect();
        Self {
            sim,
            ws: sim.fourier().workspace(),
            frozen: vec![Vec::new(); intervals.len()],
            total: f0,
            terms,
        }
    }
}

impl StepObserver for TermObserver<'_> {
    fn increment(&mut self, k: usize, u: &[f64], dw: &[f64]) {
        let sim = self.sim;
        let cfg = sim.config();
        let (sigma, drift) = (cfg.coeffs.sigma, cfg.coeffs.drift);
        let g = sim.kernel(k);
        let hd = cfg.grid.cell_volume();
        let hdt = hd * cfg.dt;
        for (t, v) in self.terms.iter_mut().zip(self.frozen.iter_mut()) {
            if k == t.lo {
                t.f_prev = self.total;
                v.clear();
                v.extend_from_slice(u);
            } else if k > t.lo && k < t.hi {
                sim.heat_step(v, &mut self.ws);
            }
            if k < t.lo || k >= t.hi {
                continue;
            }
            let (mut j1, mut j2, mut r1, mut r1d, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..u.len() {
                let d = u[i] - v[i];
                j1 += g[i] * sigma.value(v[i]) * dw[i];
                j2 += g[i] * drift.value(v[i]);
                r1 += g[i] * sigma.divided_difference(u[i], v[i]) * d * dw[i];
                r1d += g[i] * drift.value(u[i]);
                r2 += g[i] * drift.divided_difference(u[i], v[i]) * d;
            }
            t.j1 += hd * j1;
            t.j2 += hdt * j2;
            t.r1 += hd * r1;
            t.r1_drift += hdt * r1d;
            t.r2 += hdt * r2;
        }
        let (m, a) = sim.contribution(k, u, dw);
        self.total += m + a;
        for t in &mut self.terms {
            if k + 1 == t.hi {
                t.f_next = self.total;
            }
        }
    }
}

/// Terms of interval `n` of `plan` on a stored path.
pub fn compute_terms(sim: &Simulator, path: &SolutionPath, plan: &PartitionPlan, n: usize) -> Result<TaylorTerms> {
    let (lo, hi) = plan.interval(n)?;
    if *plan.points.last().unwrap() != path.steps() || path.steps() != sim.config().steps {
        return invalid("partition, path and simulator must share the same horizon");
    }
    let mut obs = TermObserver::new(sim, &[(lo, hi)]);
    let mut nws = sim.sampler().workspace();
    let mut dw = vec![0.0; sim.grid().sites()];
    for k in 0..hi {
        path.noise.fill(k, &mut nws, &mut dw);
        obs.increment(k, &path.states[k].values, &dw);
    }
    Ok(obs.terms[0])
}

/// Terms of the final intervals `[N - w, N]` for each width, on paths `0..paths`.
pub fn final_interval_terms(sim: &Simulator, widths: &[usize], paths: usize, seed: u64) -> Result<Vec<Vec<TaylorTerms>>> {
    let n = sim.config().steps;
    if widths.iter().any(|&w| w == 0 || w > n) {
        return invalid(format!("widths must lie in 1..={n}"));
    }
    let intervals: Vec<(usize, usize)> = widths.iter().map(|&w| (n - w, n)).collect();
    sim.observation_kernels();
    let ens = run_ensemble(paths, |p| {
        let mut ws = sim.workspace();
        let mut obs = TermObserver::new(sim, &intervals);
        sim.run(seed, p, n, &mut ws, &mut obs)?;
        Ok(obs.terms)
    })?;
    Ok(ens.values)
}

/// Ensemble mean of a term in units of its standard error.
pub fn standardized_mean(samples: &[f64]) -> f64 {
    let e = MomentEstimate::from_samples(samples);
    if e.stderr == 0.0 {
        if e.mean == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        e.mean / e.stderr
    }
}

/// `(E|term|^p)^{1/p}` against `Delta` for each requested kind.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermScaling {
    pub kind: TermKind,
    pub widths: Vec<usize>,
    pub report: ScalingReport,
    /// Estimates never decrease as the interval widens.
    pub monotone: bool,
    /// Largest `|mean| / stderr` over widths; only meaningful for martingale terms.
    pub max_mean_z: f64,
}

/// Sorted, deduplicated widths; at least five spanning a decade.
pub fn check_widths(widths: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = widths.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 5 || sorted[0] == 0 || (sorted[sorted.len() - 1] as f64) < 10.0 * sorted[0] as f64 {
        return invalid("need at least five distinct widths spanning a decade");
    }
    Ok(sorted)
}

/// Scaling reports from per-path terms, where `samples[path][j]` belongs to
/// `widths[j]` and `x[j]` is its variance scale.
pub fn scaling_from_samples(
    samples: &[Vec<TaylorTerms>],
    widths: &[usize],
    x: &[f64],
    kinds: &[TermKind],
    p: u32,
) -> Result<Vec<TermScaling>> {
    if p == 0 {
        return invalid("moment order must be positive");
    }
    kinds
        .iter()
        .map(|&kind| {
            let mut est = Vec::with_capacity(widths.len());
            let mut max_z: f64 = 0.0;
            for j in 0..widths.len() {
                let vals: Vec<f64> = samples.iter().map(|t| t[j].get(kind)).collect();
                max_z = max_z.max(standardized_mean(&vals).abs());
                let pow: Vec<f64> = vals.iter().map(|v| v.abs().powi(p as i32)).collect();
                if mean(&pow) == 0.0 {
                    return invalid(format!("term {kind} vanishes identically for this configuration"));
                }
                est.push(MomentEstimate::from_samples(&pow).root(p as f64));
            }
            let monotone = est.windows(2).all(|w| w[1].mean >= w[0].mean);
            let (slope, tol) = kind.expected_slope();
            Ok(TermScaling {
                kind,
                widths: widths.to_vec(),
                report: ScalingReport::fit(x.to_vec(), &est, slope, tol)?,
                monotone,
                max_mean_z: max_z,
            })
        })
        .collect()
}

/// Log-log scaling of the term moments over final intervals of the given widths.
pub fn scaling_experiment(
    sim: &Simulator,
    phi: &PhiEvaluator,
    widths: &[usize],
    kinds: &[TermKind],
    p: u32,
    paths: usize,
    seed: u64,
) -> Result<Vec<TermScaling>> {
    let sorted = check_widths(widths)?;
    if p == 0 {
        return invalid("moment order must be positive");
    }
    let dt = sim.config().dt;
    let x = sorted.iter().map(|&w| phi.phi(w as f64 * dt)).collect::<Result<Vec<f64>>>()?;
    let samples = final_interval_terms(sim, &sorted, paths, seed)?;
    scaling_from_samples(&samples, &sorted, &x, kinds, p)
}
