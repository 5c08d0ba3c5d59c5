//! Experiment configuration: strict JSON parsing with exhaustive error
//! reporting, defaults, canonical emission and hashing.

use crate::coeffs::{CoefficientFn, Coefficients};
use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::kernel::PhiEvaluator;
use crate::solver::{Simulator, SolverConfig};
use crate::spectral::{Family, SpectralMeasure, DEFAULT_DALANG_CUTOFFS};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientSpec {
    Preset(String),
    Inline { sigma: CoefficientFn, drift: CoefficientFn },
}

impl CoefficientSpec {
    pub fn resolve(&self) -> Option<Coefficients> {
        match self {
            CoefficientSpec::Preset(name) => Coefficients::preset(name),
            CoefficientSpec::Inline { sigma, drift } => Some(Coefficients { sigma: *sigma, drift: *drift }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Constant { value: f64 },
    /// `amplitude * sin(2 pi k x_1 / L)`.
    Sine { amplitude: f64, wavenumber: i64 },
    /// Unit-mass lattice delta scaled by `mass`, at the site nearest `at`.
    Delta { mass: f64, at: Vec<f64> },
    /// JSON array with one value per site, in row-major order.
    File { path: PathBuf },
}

/// Parameters of the individual checks, with step lists given as fractions
/// of the number of steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub window_fractions: Vec<f64>,
    pub window_p: u32,
    pub difference_fractions: Vec<f64>,
    pub taylor_fractions: Vec<f64>,
    pub taylor_p: u32,
    pub smallball_interval: [f64; 2],
    pub smallball_p: u32,
    pub kde_points: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            window_fractions: vec![0.02, 0.04, 0.08, 0.16, 0.32],
            window_p: 1,
            difference_fractions: vec![0.02, 0.04, 0.08, 0.16, 0.32],
            taylor_fractions: vec![1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0 / 2.0],
            taylor_p: 2,
            smallball_interval: [0.75, 1.0],
            smallball_p: 1,
            kde_points: 801,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub noise: Family,
    pub coefficients: CoefficientSpec,
    pub u0: InitialCondition,
    pub dt: f64,
    pub horizon: f64,
    pub x_obs: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub checks: CheckSettings,
}

const TOP_KEYS: [&str; 11] = ["grid", "noise", "coefficients", "u0", "dt", "horizon", "x_obs", "paths", "seed", "out", "checks"];

struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.errors.push(format!("{path}: expected an object"));
            return None;
        };
        for k in obj.keys() {
            if !allowed.contains(&k.as_str()) {
                self.errors.push(format!("{path}.{k}: unknown key (allowed: {})", allowed.join(", ")));
            }
        }
        Some(obj)
    }

    fn get<T: for<'de> Deserialize<'de>>(&mut self, obj: &Map<String, Value>, path: &str, key: &str, default: T) -> T {
        match obj.get(key) {
            None => default,
            Some(v) => match serde_json::from_value(v.clone()) {
                Ok(x) => x,
                Err(e) => {
                    self.errors.push(format!("{path}.{key}: {e}"));
                    default
                }
            },
        }
    }

    fn required<T: for<'de> Deserialize<'de>>(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> Option<T> {
        match obj.get(key) {
            None => {
                self.errors.push(format!("{path}.{key}: missing"));
                None
            }
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| self.errors.push(format!("{path}.{key}: {e}")))
                .ok(),
        }
    }

    fn tag<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a str> {
        let t = obj.get(key).and_then(Value::as_str);
        if t.is_none() {
            self.errors.push(format!("{path}.{key}: missing or not a string"));
        }
        t
    }

    fn family(&mut self, v: &Value) -> Option<Family> {
        let path = "noise";
        let obj = v.as_object().or_else(|| {
            self.errors.push(format!("{path}: expected an object"));
            None
        })?;
        let extra = match self.tag(obj, path, "family")? {
            "white" | "white_noise" => None,
            "riesz" => Some("eta"),
            "bessel" => Some("order"),
            "exponential" | "exponential_cov" => Some("scale"),
            other => {
                self.errors.push(format!("{path}.family: unknown family '{other}' (white, riesz, bessel, exponential)"));
                return None;
            }
        };
        let allowed: Vec<&str> = ["family"].into_iter().chain(extra).collect();
        self.object(v, path, &allowed)?;
        serde_json::from_value(v.clone()).map_err(|e| self.errors.push(format!("{path}: {e}"))).ok()
    }

    fn coefficient_fn(&mut self, v: &Value, path: &str) -> Option<CoefficientFn> {
        let obj = v.as_object().or_else(|| {
            self.errors.push(format!("{path}: expected an object"));
            None
        })?;
        let allowed: &[&str] = match self.tag(obj, path, "kind")? {
            "trig" => &["kind", "c0", "sin_amp", "cos_amp"],
            "affine" => &["kind", "c0", "slope"],
            other => {
                self.errors.push(format!("{path}.kind: unknown kind '{other}' (trig, affine)"));
                return None;
            }
        };
        self.object(v, path, allowed)?;
        serde_json::from_value(v.clone()).map_err(|e| self.errors.push(format!("{path}: {e}"))).ok()
    }

    fn coefficients(&mut self, v: &Value) -> Option<CoefficientSpec> {
        if let Some(name) = v.as_str() {
            if Coefficients::preset(name).is_none() {
                self.errors.push(format!(
                    "coefficients: unknown preset '{name}' ({})",
                    Coefficients::PRESETS.join(", ")
                ));
                return None;
            }
            return Some(CoefficientSpec::Preset(name.to_string()));
        }
        let obj = self.object(v, "coefficients", &["sigma", "drift"])?;
        let sigma = match obj.get("sigma") {
            Some(s) => self.coefficient_fn(s, "coefficients.sigma"),
            None => Some(CoefficientFn::constant(1.0)),
        };
        let drift = match obj.get("drift") {
            Some(s) => self.coefficient_fn(s, "coefficients.drift"),
            None => Some(CoefficientFn::constant(0.0)),
        };
        Some(CoefficientSpec::Inline { sigma: sigma?, drift: drift? })
    }

    fn initial(&mut self, v: &Value) -> Option<InitialCondition> {
        let path = "u0";
        let obj = v.as_object().or_else(|| {
            self.errors.push(format!("{path}: expected an object"));
            None
        })?;
        let allowed: &[&str] = match self.tag(obj, path, "kind")? {
            "constant" => &["kind", "value"],
            "sine" => &["kind", "amplitude", "wavenumber"],
            "delta" => &["kind", "mass", "at"],
            "file" => &["kind", "path"],
            other => {
                self.errors.push(format!("{path}.kind: unknown kind '{other}' (constant, sine, delta, file)"));
                return None;
            }
        };
        self.object(v, path, allowed)?;
        serde_json::from_value(v.clone()).map_err(|e| self.errors.push(format!("{path}: {e}"))).ok()
    }

    fn checks(&mut self, v: &Value) -> CheckSettings {
        let d = CheckSettings::default();
        let keys = [
            "window_fractions",
            "window_p",
            "difference_fractions",
            "taylor_fractions",
            "taylor_p",
            "smallball_interval",
            "smallball_p",
            "kde_points",
        ];
        let Some(obj) = self.object(v, "checks", &keys) else { return d };
        let p = "checks";
        CheckSettings {
            window_fractions: self.get(obj, p, "window_fractions", d.window_fractions),
            window_p: self.get(obj, p, "window_p", d.window_p),
            difference_fractions: self.get(obj, p, "difference_fractions", d.difference_fractions),
            taylor_fractions: self.get(obj, p, "taylor_fractions", d.taylor_fractions),
            taylor_p: self.get(obj, p, "taylor_p", d.taylor_p),
            smallball_interval: self.get(obj, p, "smallball_interval", d.smallball_interval),
            smallball_p: self.get(obj, p, "smallball_p", d.smallball_p),
            kde_points: self.get(obj, p, "kde_points", d.kde_points),
        }
    }
}

/// Largest `T / 2^j` not exceeding the stability limit `h^2 / 4`.
pub fn default_dt(grid: &GridSpec, horizon: f64) -> f64 {
    let limit = grid.spacing().powi(2) / 4.0;
    let mut dt = horizon;
    while dt > limit {
        dt /= 2.0;
    }
    dt
}

/// Parses and validates a JSON document; on failure every violation found is
/// reported.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("malformed JSON: {e}")]))?;
    let mut r = Reader { errors: Vec::new() };
    let Some(obj) = r.object(&doc, "config", &TOP_KEYS) else {
        return Err(Error::Config(r.errors));
    };
    let obj = obj.clone();

    let grid = match obj.get("grid") {
        None => GridSpec::new(1, 64, 8.0).ok(),
        Some(g) => r.object(g, "grid", &["dim", "n", "length"]).cloned().and_then(|go| {
            let dim = r.get(&go, "grid", "dim", 1usize);
            let n = r.required::<usize>(&go, "grid", "n");
            let length = r.required::<f64>(&go, "grid", "length");
            GridSpec::new(dim, n?, length?).map_err(|e| r.errors.push(format!("grid: {e}"))).ok()
        }),
    };
    let noise = match obj.get("noise") {
        None => Some(Family::WhiteNoise),
        Some(v) => r.family(v),
    };
    let coefficients = match obj.get("coefficients") {
        None => Some(CoefficientSpec::Preset("linear".into())),
        Some(v) => r.coefficients(v),
    };
    let u0 = match obj.get("u0") {
        None => Some(InitialCondition::Constant { value: 0.0 }),
        Some(v) => r.initial(v),
    };
    let horizon: f64 = r.get(&obj, "config", "horizon", 0.5);
    let dt: Option<f64> = r.get(&obj, "config", "dt", None);
    let x_obs: Option<Vec<f64>> = r.get(&obj, "config", "x_obs", None);
    let paths: usize = r.get(&obj, "config", "paths", 1000);
    let seed: u64 = r.get(&obj, "config", "seed", 0);
    let out: PathBuf = r.get(&obj, "config", "out", PathBuf::from("out"));
    let checks = match obj.get("checks") {
        None => CheckSettings::default(),
        Some(v) => r.checks(v),
    };

    let (Some(grid), Some(noise), Some(coefficients), Some(u0)) = (grid, noise, coefficients, u0) else {
        return Err(Error::Config(r.errors));
    };
    let dt = dt.unwrap_or_else(|| default_dt(&grid, horizon));
    let x_obs = x_obs.unwrap_or_else(|| grid.coordinate(grid.centre())[..grid.dim].to_vec());
    let cfg = ExperimentConfig { grid, noise, coefficients, u0, dt, horizon, x_obs, paths, seed, out, checks };
    r.errors.extend(cfg.violations());
    if r.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(r.errors))
    }
}

impl ExperimentConfig {
    /// Every rule the configuration breaks.
    pub fn violations(&self) -> Vec<String> {
        let mut e = Vec::new();
        let g = &self.grid;
        if let Err(err) = GridSpec::new(g.dim, g.n, g.length) {
            e.push(format!("grid: {err}"));
            return e;
        }
        match SpectralMeasure::new(self.noise, g.dim) {
            Err(err) => e.push(format!("noise: {err}")),
            Ok(m) if !m.dalang_holds() => {
                let diag = match m.dalang_integral(&DEFAULT_DALANG_CUTOFFS) {
                    Ok(rep) => format!(
                        "truncated integrals {:?} at cutoffs {:?}, increment ratio {:.3}",
                        rep.truncated.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>(),
                        rep.cutoffs,
                        rep.ratio
                    ),
                    Err(err) => err.to_string(),
                };
                e.push(format!("noise: the Dalang integral of mu(dxi)/(1+|xi|^2) diverges in dimension {}; {diag}", g.dim));
            }
            Ok(_) => {}
        }
        if self.coefficients.resolve().is_none() {
            e.push("coefficients: unknown preset".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            e.push(format!("horizon: must be positive, got {}", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            e.push(format!("dt: must be positive, got {}", self.dt));
        } else {
            let limit = g.spacing().powi(2) / 4.0;
            if self.dt > limit * (1.0 + 1e-12) {
                e.push(format!("dt: {} exceeds the stability limit h^2/4 = {limit}", self.dt));
            }
            let ratio = self.horizon / self.dt;
            if self.horizon > 0.0 && ((ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) || ratio.round() < 1.0) {
                e.push(format!("dt: horizon / dt = {ratio} is not a whole number of steps"));
            }
        }
        if self.x_obs.len() != g.dim {
            e.push(format!("x_obs: expected {} coordinates, got {}", g.dim, self.x_obs.len()));
        } else if self.x_obs.iter().any(|x| !(*x >= 0.0 && *x < g.length)) {
            e.push(format!("x_obs: coordinates must lie in [0, {})", g.length));
        }
        if self.paths == 0 {
            e.push("paths: must be at least 1".into());
        }
        match &self.u0 {
            InitialCondition::Delta { at, mass } => {
                if at.len() != g.dim {
                    e.push(format!("u0.at: expected {} coordinates", g.dim));
                }
                if !mass.is_finite() {
                    e.push("u0.mass: must be finite".into());
                }
            }
            InitialCondition::File { path } => {
                if let Err(err) = read_initial(path, g) {
                    e.push(format!("u0.path: {err}"));
                }
            }
            InitialCondition::Constant { value } if !value.is_finite() => e.push("u0.value: must be finite".into()),
            InitialCondition::Sine { amplitude, .. } if !amplitude.is_finite() => e.push("u0.amplitude: must be finite".into()),
            _ => {}
        }
        let c = &self.checks;
        for (name, list) in [
            ("window_fractions", &c.window_fractions),
            ("difference_fractions", &c.difference_fractions),
            ("taylor_fractions", &c.taylor_fractions),
        ] {
            if list.is_empty() || list.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                e.push(format!("checks.{name}: fractions must lie in (0, 1]"));
            }
        }
        let [a, b] = c.smallball_interval;
        if !(0.0 <= a && a < b && b <= 1.0) {
            e.push("checks.smallball_interval: need 0 <= start < end <= 1".into());
        }
        if c.window_p == 0 || c.taylor_p == 0 || c.smallball_p == 0 {
            e.push("checks: moment orders must be positive".into());
        }
        if c.kde_points < 2 {
            e.push("checks.kde_points: need at least 2 points".into());
        }
        e
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn measure(&self) -> Result<SpectralMeasure> {
        SpectralMeasure::new(self.noise, self.grid.dim)
    }

    pub fn coeffs(&self) -> Result<Coefficients> {
        self.coefficients.resolve().ok_or_else(|| Error::Config(vec!["coefficients: unknown preset".into()]))
    }

    /// Site nearest to a coordinate, with periodic wrap.
    pub fn site_of(&self, x: &[f64]) -> usize {
        let g = &self.grid;
        let idx = |v: f64| ((v / g.spacing()).round() as i64).rem_euclid(g.n as i64) as usize;
        g.ravel([idx(x[0]), if g.dim == 2 { idx(x[1]) } else { 0 }])
    }

    pub fn initial_field(&self) -> Result<Field> {
        let g = self.grid;
        Ok(match &self.u0 {
            InitialCondition::Constant { value } => Field::constant(g, *value),
            InitialCondition::Sine { amplitude, wavenumber } => {
                let k = 2.0 * std::f64::consts::PI * *wavenumber as f64 / g.length;
                Field::from_fn(g, |x| amplitude * (k * x[0]).sin())
            }
            InitialCondition::Delta { mass, at } => {
                let mut f = Field::zeros(g);
                f.values[self.site_of(at)] = mass / g.cell_volume();
                f
            }
            InitialCondition::File { path } => read_initial(path, &g)?,
        })
    }

    /// Nondegenerate diffusion, as required by the envelope and small-ball checks.
    pub fn nondegenerate(&self) -> bool {
        self.coeffs().map(|c| c.sigma.lower_bound() > 0.0).unwrap_or(false)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let v = self.violations();
        if !v.is_empty() {
            return Err(Error::Config(v));
        }
        SolverConfig::new(
            self.grid,
            self.measure()?,
            self.coeffs()?,
            self.initial_field()?,
            self.dt,
            self.steps(),
            self.site_of(&self.x_obs),
        )
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.solver_config()?)
    }

    pub fn phi(&self) -> Result<PhiEvaluator> {
        Ok(PhiEvaluator::new(self.measure()?))
    }

    /// Canonical pretty JSON with every default filled in.
    pub fn emit(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// SHA-256 of the compact canonical form. The output directory is left
    /// out so the same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("configuration serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("out");
        }
        let compact = serde_json::to_string(&v).expect("configuration serializes");
        hex(&Sha256::digest(compact.as_bytes()))
    }

    /// Step counts for a list of fractions of the horizon, rounded to the
    /// nearest step, deduplicated and sorted.
    pub fn fraction_steps(&self, fractions: &[f64]) -> Vec<usize> {
        let n = self.steps() as f64;
        let mut v: Vec<usize> = fractions.iter().map(|f| ((f * n).round() as usize).max(1)).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_initial(path: &std::path::Path, grid: &GridSpec) -> Result<Field> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = serde_json::from_str(&text)?;
    Field::from_values(*grid, values)
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
