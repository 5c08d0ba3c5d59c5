//! Subcommand runners. Each writes CSV tables and a JSON summary into the
//! output directory; a manifest lists every file with its SHA-256.

use crate::coeffs::Coefficients;
use crate::config::{hex, ExperimentConfig};
use crate::density::{density_envelope, gaussian_case_check, pathwise_bounds};
use crate::error::{Error, Result};
use crate::malliavin::{window_norm_scaling, linear_identity, negative_moment_probe};
use crate::noise::write_dump;
use crate::solver::{difference_scaling, simulate_fn_sequence, Simulator};
use crate::spectral::{SpectralMeasure, DEFAULT_DALANG_CUTOFFS};
use crate::taylor::{check_widths, final_interval_terms, scaling_from_samples, TermKind};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subcommand {
    Phi,
    Dalang,
    Simulate,
    FnSeq,
    MalliavinCheck,
    WindowScaling,
    DifferenceScaling,
    Smallball,
    TaylorScaling,
    DensityEnvelope,
    Pathwise,
    AllChecks,
}

impl Subcommand {
    pub const ALL: [Subcommand; 12] = [
        Subcommand::Phi,
        Subcommand::Dalang,
        Subcommand::Simulate,
        Subcommand::FnSeq,
        Subcommand::MalliavinCheck,
        Subcommand::WindowScaling,
        Subcommand::DifferenceScaling,
        Subcommand::Smallball,
        Subcommand::TaylorScaling,
        Subcommand::DensityEnvelope,
        Subcommand::Pathwise,
        Subcommand::AllChecks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Phi => "phi",
            Subcommand::Dalang => "dalang",
            Subcommand::Simulate => "simulate",
            Subcommand::FnSeq => "fn-seq",
            Subcommand::MalliavinCheck => "malliavin-check",
            Subcommand::WindowScaling => "lemma4-scaling",
            Subcommand::DifferenceScaling => "difference-scaling",
            Subcommand::Smallball => "smallball",
            Subcommand::TaylorScaling => "taylor-scaling",
            Subcommand::DensityEnvelope => "density-envelope",
            Subcommand::Pathwise => "pathwise",
            Subcommand::AllChecks => "all-checks",
        }
    }
}

impl FromStr for Subcommand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown subcommand '{s}'")))
    }
}

/// Overrides and extra parameters supplied on the command line.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub terms: Option<Vec<TermKind>>,
    pub p: Option<u32>,
    /// Interval widths in steps for `taylor-scaling`.
    pub widths: Option<Vec<usize>>,
    /// Number of equal intervals for `fn-seq`.
    pub intervals: Option<usize>,
}

/// Result of one subcommand.
#[derive(Clone, Debug, Serialize)]
pub struct Outcome {
    pub name: String,
    pub pass: bool,
    pub summary: Value,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub paths: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub results: BTreeMap<String, bool>,
    pub files: Vec<FileEntry>,
}

#[derive(Debug)]
pub struct RunReport {
    pub outcomes: Vec<Outcome>,
    pub manifest: RunManifest,
    pub out: PathBuf,
}

impl RunReport {
    pub fn pass(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass() { 0 } else { 4 }
    }
}

/// Exit status for a failed run: 2 configuration, 3 instability, 1 otherwise.
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Unstable { .. } => 3,
        _ => 1,
    }
}

/// Sizes the global worker pool from the flag, then `SHEN_THREADS`, then the
/// machine. Only the first call has an effect.
pub fn configure_threads(flag: Option<usize>) -> usize {
    let n = flag
        .or_else(|| std::env::var("SHEN_THREADS").ok().and_then(|v| v.parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    rayon::current_num_threads()
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    opts: &'a RunOptions,
    out: PathBuf,
    seed: u64,
    paths: usize,
    hash: String,
}

impl Ctx<'_> {
    fn csv(&self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf> {
        let rel = PathBuf::from(name);
        let mut w = csv::Writer::from_path(self.out.join(&rel)).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(&r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(rel)
    }

    fn finish(&self, name: &str, pass: bool, mut summary: Value, mut files: Vec<PathBuf>) -> Result<Outcome> {
        let obj = summary.as_object_mut().expect("summary is an object");
        obj.insert("subcommand".into(), json!(name));
        obj.insert("config_hash".into(), json!(self.hash));
        obj.insert("seed".into(), json!(self.seed));
        obj.insert("pass".into(), json!(pass));
        let rel = PathBuf::from(format!("{name}.json"));
        std::fs::write(self.out.join(&rel), serde_json::to_string_pretty(&summary)? + "\n")?;
        files.push(rel);
        Ok(Outcome { name: name.to_string(), pass, summary, files })
    }

    fn simulator(&self) -> Result<Simulator> {
        self.cfg.simulator()
    }

    fn simulator_with(&self, coeffs: Coefficients) -> Result<Simulator> {
        let mut sc = self.cfg.solver_config()?;
        sc.coeffs = coeffs;
        Simulator::new(sc)
    }

    fn require_nondegenerate(&self, what: &str) -> Result<()> {
        if self.cfg.nondegenerate() {
            Ok(())
        } else {
            Err(Error::Config(vec![format!(
                "{what} needs a diffusion coefficient bounded away from zero"
            )]))
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn phi(c: &Ctx) -> Result<Outcome> {
    let ev = c.cfg.phi()?;
    let t_end = c.cfg.horizon;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 1..=100 {
        let t = t_end * i as f64 / 100.0;
        let (j, p) = (ev.j_rate(t)?, ev.phi_quadrature(t)?);
        if let Some(exact) = ev.phi_closed(t) {
            worst = worst.max((p - exact).abs() / exact);
        }
        rows.push(vec![num(t), num(j), num(p)]);
    }
    let f = c.csv("phi.csv", &["t", "j_rate", "phi"], rows)?;
    let closed = ev.phi_closed(t_end);
    let pass = closed.is_none() || worst < 1e-6;
    c.finish(
        "phi",
        pass,
        json!({ "t": t_end, "phi_t": ev.phi_quadrature(t_end)?, "closed_form": closed, "max_relative_error": closed.map(|_| worst) }),
        vec![f],
    )
}

fn dalang(c: &Ctx) -> Result<Outcome> {
    let m = c.cfg.measure()?;
    let r = m.dalang_integral(&DEFAULT_DALANG_CUTOFFS)?;
    let f = c.csv(
        "dalang.csv",
        &["cutoff", "truncated_integral"],
        r.cutoffs.iter().zip(&r.truncated).map(|(a, b)| vec![num(*a), num(*b)]),
    )?;
    let analytic = m.dalang_holds();
    c.finish(
        "dalang",
        r.converges == analytic,
        json!({ "ratio": r.ratio, "converges": r.converges, "analytic": analytic, "value": r.value }),
        vec![f],
    )
}

fn simulate(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator()?;
    let cfg = sim.config();
    let x = cfg.x_obs;
    struct Trace(Vec<f64>, usize);
    impl crate::solver::StepObserver for Trace {
        fn state(&mut self, _k: usize, u: &[f64]) {
            self.0.push(u[self.1]);
        }
    }
    let ens = crate::solver::run_ensemble(c.paths, |p| {
        let mut ws = sim.workspace();
        let mut tr = Trace(Vec::with_capacity(cfg.steps + 1), x);
        sim.run(c.seed, p, cfg.steps, &mut ws, &mut tr)?;
        Ok((p, tr.0))
    })?;
    let f1 = c.csv(
        "simulate.csv",
        &["path", "t", "u_at_x_obs"],
        ens.values.iter().flat_map(|(p, tr)| {
            tr.iter().enumerate().map(move |(k, u)| vec![p.to_string(), num(k as f64 * cfg.dt), num(*u)])
        }),
    )?;
    let finals: Vec<f64> = ens.values.iter().map(|(_, tr)| tr[cfg.steps]).collect();
    let m = crate::stats::MomentEstimate::from_samples(&finals);
    let first = sim.solve(c.seed, 0)?;
    let dump = PathBuf::from("simulate_final.bin");
    write_dump(&c.out.join(&dump), first.states.last().expect("at least one state"), cfg.dt, cfg.steps as u64)?;
    c.finish(
        "simulate",
        true,
        json!({ "paths": c.paths, "failed": ens.failed, "steps": cfg.steps, "mean_u_obs": m.mean, "stderr": m.stderr }),
        vec![f1, dump],
    )
}

fn fn_seq(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator()?;
    let n = sim.config().steps;
    let k = c.opts.intervals.unwrap_or(8).clamp(1, n);
    let mut points: Vec<usize> = (0..=k).map(|i| i * n / k).collect();
    points.dedup();
    let paths = c.paths.min(100);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for p in 0..paths as u64 {
        let path = sim.solve(c.seed, p)?;
        let fs = simulate_fn_sequence(&sim, &path, &points)?;
        let u = path.states[n].values[sim.config().x_obs];
        worst = worst.max((fs[fs.len() - 1] - u).abs() / (1.0 + u.abs()));
        for (i, f) in fs.iter().enumerate() {
            rows.push(vec![p.to_string(), i.to_string(), num(points[i] as f64 * sim.config().dt), num(*f)]);
        }
    }
    let f = c.csv("fn_seq.csv", &["path", "n", "t_n", "F_n"], rows)?;
    c.finish(
        "fn-seq",
        worst < 1e-9,
        json!({ "paths": paths, "partition": points, "max_terminal_mismatch": worst }),
        vec![f],
    )
}

fn malliavin_check(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator_with(Coefficients::linear())?;
    let r = linear_identity(&sim, &c.cfg.phi()?, c.seed)?;
    let f = c.csv(
        "malliavin_check.csv",
        &["phi_delta", "norm"],
        r.windows.x.iter().zip(&r.windows.estimate).map(|(x, e)| vec![num(*x), num(*e)]),
    )?;
    c.finish(
        "malliavin-check",
        r.pass,
        json!({ "norm": r.norm, "phi_t": r.phi_t, "relative_error": r.relative_error,
                "slope": r.windows.slope, "ci_low": r.windows.ci_low, "ci_high": r.windows.ci_high }),
        vec![f],
    )
}

fn scaling_csv(c: &Ctx, name: &str, steps: &[usize], r: &crate::stats::ScalingReport) -> Result<PathBuf> {
    let dt = c.cfg.dt;
    c.csv(
        name,
        &["width_steps", "delta", "phi_delta", "estimate", "stderr"],
        (0..steps.len()).map(|i| vec![steps[i].to_string(), num(steps[i] as f64 * dt), num(r.x[i]), num(r.estimate[i]), num(r.stderr[i])]),
    )
}

fn scaling_summary(r: &crate::stats::ScalingReport) -> Value {
    json!({ "slope": r.slope, "ci_low": r.ci_low, "ci_high": r.ci_high, "expected_slope": r.expected_slope, "tolerance": r.tolerance })
}

fn window(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator()?;
    let deltas = c.cfg.fraction_steps(&c.cfg.checks.window_fractions);
    let p = c.opts.p.unwrap_or(c.cfg.checks.window_p);
    let r = window_norm_scaling(&sim, &c.cfg.phi()?, &deltas, p, c.paths, c.seed)?;
    let f = scaling_csv(c, "window_scaling.csv", &deltas, &r)?;
    let mut s = scaling_summary(&r);
    s["p"] = json!(p);
    c.finish("lemma4-scaling", r.pass, s, vec![f])
}

fn difference(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator()?;
    let lags = c.cfg.fraction_steps(&c.cfg.checks.difference_fractions);
    let t_prev = c.cfg.steps() - lags.last().copied().unwrap_or(0);
    let r = difference_scaling(&sim, &c.cfg.phi()?, t_prev, &lags, 2, c.paths, c.seed)?;
    let f = scaling_csv(c, "difference_scaling.csv", &lags, &r)?;
    let mut s = scaling_summary(&r);
    s["t_prev_step"] = json!(t_prev);
    c.finish("difference-scaling", r.pass, s, vec![f])
}

fn smallball(c: &Ctx) -> Result<Outcome> {
    c.require_nondegenerate("smallball")?;
    let sim = c.simulator()?;
    let n = c.cfg.steps() as f64;
    let [a, b] = c.cfg.checks.smallball_interval;
    let interval = ((a * n).round() as usize, (b * n).round() as usize);
    let p = c.opts.p.unwrap_or(c.cfg.checks.smallball_p);
    let r = negative_moment_probe(&sim, &c.cfg.phi()?, interval, p, c.paths, c.seed)?;
    let f = c.csv(
        "smallball.csv",
        &["fraction", "eps", "probability", "count"],
        r.curve.iter().map(|q| vec![num(q.fraction), num(q.eps), num(q.probability), q.count.to_string()]),
    )?;
    c.finish(
        "smallball",
        r.pass,
        json!({ "interval": [interval.0, interval.1], "p": p, "delta_g": r.delta_g, "anchor": r.anchor,
                "decay_ok": r.decay_ok, "moment_half": r.moment_half, "moment_full": r.moment_full,
                "relative_change": r.relative_change, "stable": r.stable,
                "slope": r.slope, "ci_low": r.ci_low, "ci_high": r.ci_high }),
        vec![f],
    )
}

fn taylor(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator()?;
    let widths = match &c.opts.widths {
        Some(w) => check_widths(w)?,
        None => check_widths(&c.cfg.fraction_steps(&c.cfg.checks.taylor_fractions))?,
    };
    let coeffs = sim.config().coeffs;
    let kinds = c.opts.terms.clone().unwrap_or_else(|| {
        [TermKind::J1, TermKind::J2, TermKind::R1].into_iter().filter(|k| k.present(&coeffs)).collect()
    });
    let p = c.opts.p.unwrap_or(c.cfg.checks.taylor_p);
    let ev = c.cfg.phi()?;
    let x = widths.iter().map(|&w| ev.phi(w as f64 * c.cfg.dt)).collect::<Result<Vec<f64>>>()?;
    let samples = final_interval_terms(&sim, &widths, c.paths, c.seed)?;
    let violations = samples.iter().flatten().filter(|t| !t.identity_holds()).count();
    let worst = samples.iter().flatten().map(|t| t.identity_error() / (1.0 + t.f_next.abs())).fold(0.0, f64::max);
    let reports = scaling_from_samples(&samples, &widths, &x, &kinds, p)?;
    let mut rows = Vec::new();
    for r in &reports {
        for j in 0..widths.len() {
            rows.push(vec![r.kind.name().to_string(), widths[j].to_string(), num(x[j]), num(r.report.estimate[j]), num(r.report.stderr[j])]);
        }
    }
    let f = c.csv("taylor_scaling.csv", &["term", "width_steps", "delta_g", "moment_estimate", "stderr"], rows)?;
    let terms: Vec<Value> = reports
        .iter()
        .map(|r| {
            json!({ "term": r.kind.name(), "slope": r.report.slope, "ci": [r.report.ci_low, r.report.ci_high],
                    "expected_slope": r.report.expected_slope, "tolerance": r.report.tolerance,
                    "monotone": r.monotone, "max_mean_z": r.max_mean_z, "pass": r.report.pass })
        })
        .collect();
    let pass = violations == 0 && reports.iter().all(|r| r.report.pass);
    let mut summary = json!({ "p": p, "widths": widths, "identity_violations": violations, "max_identity_error": worst });
    if let [single] = terms.as_slice() {
        for key in ["term", "slope", "ci", "expected_slope", "tolerance"] {
            summary[key] = single[key].clone();
        }
    }
    summary["terms"] = Value::Array(terms);
    c.finish("taylor-scaling", pass, summary, vec![f])
}

fn density(c: &Ctx) -> Result<Outcome> {
    c.require_nondegenerate("density-envelope")?;
    let sim = c.simulator()?;
    let ev = c.cfg.phi()?;
    let (samples, r) = density_envelope(&sim, &ev, c.paths, c.seed, c.cfg.checks.kde_points)?;
    let f1 = c.csv(
        "density_samples.csv",
        &["path", "value"],
        samples.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]),
    )?;
    let k = &r.kde;
    let f2 = c.csv(
        "density_kde.csv",
        &["y", "p_hat", "stderr", "lower_env", "upper_env"],
        (0..k.y.len()).map(|i| {
            vec![num(k.y[i]), num(k.density[i]), num(k.stderr[i]), num(r.lower_envelope(k.y[i])), num(r.upper_envelope(k.y[i]))]
        }),
    )?;
    let coeffs = sim.config().coeffs;
    let gaussian = if coeffs.is_additive() && coeffs.drift.is_zero() && coeffs.sigma.value(0.0) == 1.0 {
        Some(gaussian_case_check(&sim, &ev, &samples)?)
    } else {
        None
    };
    let fit = r.fit;
    let pass = r.pass && gaussian.is_none_or(|g| g.pass);
    c.finish(
        "density-envelope",
        pass,
        json!({ "F0": r.f0, "phi_t": r.phi_t,
                "C1": fit.map(|f| f.lower_c1), "C2": fit.map(|f| f.lower_c2),
                "c1": fit.map(|f| f.upper_c1), "c2": fit.map(|f| f.upper_c2), "c3": fit.map(|f| f.c3),
                "bandwidth": k.bandwidth, "reliable": r.reliable, "integral": r.integral,
                "envelopes_hold": r.envelopes_hold, "consistent": r.consistent, "gap_ok": r.gap_ok,
                "tail_curvature": r.tail_curvature, "tail_consistent": r.tail_consistent,
                "ks": gaussian }),
        vec![f1, f2],
    )
}

fn pathwise(c: &Ctx) -> Result<Outcome> {
    let sim = c.simulator()?;
    let r = pathwise_bounds(&sim, &c.cfg.phi()?, c.paths, c.seed)?;
    c.finish("pathwise", r.pass, serde_json::to_value(&r)?, vec![])
}

fn dispatch(sub: Subcommand, c: &Ctx) -> Result<Vec<Outcome>> {
    Ok(match sub {
        Subcommand::Phi => vec![phi(c)?],
        Subcommand::Dalang => vec![dalang(c)?],
        Subcommand::Simulate => vec![simulate(c)?],
        Subcommand::FnSeq => vec![fn_seq(c)?],
        Subcommand::MalliavinCheck => vec![malliavin_check(c)?],
        Subcommand::WindowScaling => vec![window(c)?],
        Subcommand::DifferenceScaling => vec![difference(c)?],
        Subcommand::Smallball => vec![smallball(c)?],
        Subcommand::TaylorScaling => vec![taylor(c)?],
        Subcommand::DensityEnvelope => vec![density(c)?],
        Subcommand::Pathwise => vec![pathwise(c)?],
        Subcommand::AllChecks => {
            let mut v = Vec::new();
            for s in Subcommand::ALL {
                if matches!(s, Subcommand::AllChecks | Subcommand::Simulate) {
                    continue;
                }
                if matches!(s, Subcommand::Smallball | Subcommand::DensityEnvelope) && !c.cfg.nondegenerate() {
                    continue;
                }
                if s == Subcommand::MalliavinCheck && (c.cfg.grid.dim != 1 || c.cfg.grid.n > 128 || c.cfg.steps() > 256) {
                    continue;
                }
                v.extend(dispatch(s, c)?);
            }
            v
        }
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

/// Runs a subcommand and writes its artifacts plus `manifest.json`.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let started = now();
    let out = opts.out.clone().unwrap_or_else(|| cfg.out.clone());
    std::fs::create_dir_all(&out)?;
    let ctx = Ctx {
        cfg,
        opts,
        out: out.clone(),
        seed: opts.seed.unwrap_or(cfg.seed),
        paths: opts.paths.unwrap_or(cfg.paths),
        hash: cfg.hash(),
    };
    let outcomes = dispatch(sub, &ctx)?;
    let config_file = PathBuf::from("config.json");
    std::fs::write(out.join(&config_file), cfg.emit() + "\n")?;
    let mut files = Vec::new();
    for rel in std::iter::once(&config_file).chain(outcomes.iter().flat_map(|o| &o.files)) {
        let full = out.join(rel);
        files.push(FileEntry { path: rel.clone(), sha256: sha256_file(&full)?, bytes: std::fs::metadata(&full)?.len() });
    }
    let manifest = RunManifest {
        tool: "shen".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.name().into(),
        config_hash: ctx.hash.clone(),
        seed: ctx.seed,
        paths: ctx.paths,
        started_unix: started,
        finished_unix: now(),
        results: outcomes.iter().map(|o| (o.name.clone(), o.pass)).collect(),
        files,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(RunReport { outcomes, manifest, out })
}

/// Parses a comma-separated list of term names.
pub fn parse_terms(s: &str) -> Result<Vec<TermKind>> {
    s.split(',').map(|t| t.trim().parse()).collect()
}

/// Measure of the configuration, exposed for callers that only need `Phi`.
pub fn measure_of(cfg: &ExperimentConfig) -> Result<SpectralMeasure> {
    cfg.measure()
}
