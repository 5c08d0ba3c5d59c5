//! Lattice noise increments with a prescribed spectral measure.

use crate::error::{invalid, Result};
use crate::fourier::{Fourier, Workspace};
use crate::grid::{Field, GridSpec};
use crate::rng;
use crate::spectral::SpectralMeasure;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

/// Draws `Delta W` with `E[Delta W(x) Delta W(y)] = dt sum_xi w(xi) e^{i xi (x-y)}`.
///
/// Modes are independent complex Gaussians with Hermitian symmetry, so the
/// synthesised field is real. Self-conjugate modes (zero and Nyquist) are
/// real Gaussians.
pub struct NoiseSampler {
    grid: GridSpec,
    measure: SpectralMeasure,
    fourier: Fourier,
    amplitude: Vec<f64>,
    real_modes: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl NoiseSampler {
    pub fn new(grid: GridSpec, measure: SpectralMeasure) -> Result<Self> {
        let weights = measure.mode_weights(&grid)?;
        let mut pairs = Vec::new();
        let mut real_modes = Vec::new();
        for m in 0..grid.sites() {
            let c = grid.conjugate_mode(m);
            if c == m {
                real_modes.push(m);
            } else if m < c {
                pairs.push((m, c));
            }
        }
        Ok(Self {
            grid,
            measure,
            fourier: Fourier::new(grid),
            amplitude: weights.iter().map(|w| w.sqrt()).collect(),
            real_modes,
            pairs,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn measure(&self) -> SpectralMeasure {
        self.measure
    }

    pub fn workspace(&self) -> Workspace {
        self.fourier.workspace()
    }

    /// Representative modes: self-conjugate modes first, then one mode of each
    /// conjugate pair. This is the order used by [`Self::fill_modes`].
    pub fn representatives(&self) -> Vec<usize> {
        self.real_modes.iter().copied().chain(self.pairs.iter().map(|p| p.0)).collect()
    }

    pub fn real_mode_count(&self) -> usize {
        self.real_modes.len()
    }

    /// Fourier amplitudes of one increment on the representative modes.
    pub fn fill_modes<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, out: &mut [Complex64]) {
        let sdt = dt.sqrt();
        let half = std::f64::consts::FRAC_1_SQRT_2 * sdt;
        let nr = self.real_modes.len();
        for (o, &m) in out.iter_mut().zip(&self.real_modes) {
            let z: f64 = rng.sample(StandardNormal);
            *o = Complex64::new(sdt * self.amplitude[m] * z, 0.0);
        }
        for (o, &(m, _)) in out[nr..].iter_mut().zip(&self.pairs) {
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            *o = Complex64::new(a, b) * (half * self.amplitude[m]);
        }
    }

    pub fn fill<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R, ws: &mut Workspace, out: &mut [f64]) {
        let sdt = dt.sqrt();
        let half = std::f64::consts::FRAC_1_SQRT_2 * sdt;
        for &m in &self.real_modes {
            let z: f64 = rng.sample(StandardNormal);
            ws.buf[m] = Complex64::new(sdt * self.amplitude[m] * z, 0.0);
        }
        for &(m, c) in &self.pairs {
            let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            let z = Complex64::new(a, b) * (half * self.amplitude[m]);
            ws.buf[m] = z;
            ws.buf[c] = z.conj();
        }
        self.fourier.inverse(ws);
        for (v, z) in out.iter_mut().zip(&ws.buf) {
            *v = z.re;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> Field {
        let mut f = Field::zeros(self.grid);
        let mut ws = self.workspace();
        self.fill(dt, rng, &mut ws, &mut f.values);
        f
    }
}

/// One-shot increment draw.
pub fn sample_increment<R: Rng + ?Sized>(
    measure: &SpectralMeasure,
    grid: GridSpec,
    dt: f64,
    rng: &mut R,
) -> Result<Field> {
    if !(dt > 0.0) {
        return invalid(format!("time step must be positive, got {dt}"));
    }
    Ok(NoiseSampler::new(grid, *measure)?.sample(dt, rng))
}

/// The increments of one sample path, regenerated on demand from its key.
#[derive(Clone)]
pub struct NoisePath {
    pub sampler: Arc<NoiseSampler>,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub path: u64,
}

impl NoisePath {
    /// Writes increment `k` into `out`.
    pub fn fill(&self, k: usize, ws: &mut Workspace, out: &mut [f64]) {
        let mut r = rng::step_rng(self.seed, self.path, k as u64);
        self.sampler.fill(self.dt, &mut r, ws, out);
    }

    pub fn increment(&self, k: usize) -> Result<Field> {
        if k >= self.steps {
            return invalid(format!("step {k} out of range 0..{}", self.steps));
        }
        let mut f = Field::zeros(self.sampler.grid());
        let mut ws = self.sampler.workspace();
        self.fill(k, &mut ws, &mut f.values);
        Ok(f)
    }

    pub fn increments(&self) -> impl Iterator<Item = Field> + '_ {
        let mut ws = self.sampler.workspace();
        (0..self.steps).map(move |k| {
            let mut f = Field::zeros(self.sampler.grid());
            self.fill(k, &mut ws, &mut f.values);
            f
        })
    }
}

pub fn make_path(
    grid: GridSpec,
    measure: SpectralMeasure,
    dt: f64,
    steps: usize,
    seed: u64,
    path: u64,
) -> Result<NoisePath> {
    if !(dt > 0.0) || steps == 0 {
        return invalid("noise path needs dt > 0 and at least one step");
    }
    Ok(NoisePath {
        sampler: Arc::new(NoiseSampler::new(grid, measure)?),
        dt,
        steps,
        seed,
        path,
    })
}

const MAGIC: &[u8; 5] = b"SHEN1";

/// Header of a binary increment dump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DumpHeader {
    pub n: u64,
    pub dim: u64,
    pub length: f64,
    pub dt: f64,
    pub step: u64,
}

/// Writes one increment: magic, header, then little-endian `f64` values in
/// row-major order.
pub fn write_dump(path: &Path, field: &Field, dt: f64, step: u64) -> Result<()> {
    let mut buf = Vec::with_capacity(45 + 8 * field.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(field.grid.n as u64).to_le_bytes());
    buf.extend_from_slice(&(field.grid.dim as u64).to_le_bytes());
    buf.extend_from_slice(&field.grid.length.to_le_bytes());
    buf.extend_from_slice(&dt.to_le_bytes());
    buf.extend_from_slice(&step.to_le_bytes());
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<(DumpHeader, Field)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 45 || &bytes[..5] != MAGIC {
        return invalid(format!("{} is not an increment dump", path.display()));
    }
    let word = |i: usize| -> [u8; 8] { bytes[5 + 8 * i..13 + 8 * i].try_into().unwrap() };
    let header = DumpHeader {
        n: u64::from_le_bytes(word(0)),
        dim: u64::from_le_bytes(word(1)),
        length: f64::from_le_bytes(word(2)),
        dt: f64::from_le_bytes(word(3)),
        step: u64::from_le_bytes(word(4)),
    };
    let grid = GridSpec::new(header.dim as usize, header.n as usize, header.length)?;
    let body = &bytes[45..];
    if body.len() != 8 * grid.sites() {
        return invalid(format!("{} has a truncated body", path.display()));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, Field::from_values(grid, values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::HNorm;

    /// Empirical variance of `h^d <phi, Delta W>` against `dt * |phi|_H^2`.
    fn isometry_ratio(grid: GridSpec, m: SpectralMeasure, samples: usize) -> f64 {
        let sampler = NoiseSampler::new(grid, m).unwrap();
        let hn = HNorm::new(grid, &m).unwrap();
        let mut ws = sampler.workspace();
        let phi: Vec<f64> = (0..grid.sites())
            .map(|s| {
                let x = grid.periodic_offset(s);
                (-(x[0] * x[0] + x[1] * x[1])).exp()
            })
            .collect();
        let dt = 0.01;
        let expect = dt * hn.norm_sq(&phi, &mut ws);
        let mut rng = rng::step_rng(11, 0, 0);
        let mut dw = vec![0.0; grid.sites()];
        let mut acc = 0.0;
        for _ in 0..samples {
            sampler.fill(dt, &mut rng, &mut ws, &mut dw);
            let x = crate::grid::dot(&phi, &dw) * grid.cell_volume();
            acc += x * x;
        }
        acc / samples as f64 / expect
    }

    #[test]
    fn discrete_isometry_holds_for_each_family() {
        let n = 20_000;
        let tol = 4.0 * (2.0 / n as f64).sqrt();
        let g1 = GridSpec::new(1, 32, 8.0).unwrap();
        let g2 = GridSpec::new(2, 16, 6.0).unwrap();
        for (g, m) in [
            (g1, SpectralMeasure::white(1).unwrap()),
            (g1, SpectralMeasure::riesz(0.5, 1).unwrap()),
            (g1, SpectralMeasure::exponential(1.0, 1).unwrap()),
            (g2, SpectralMeasure::bessel(1.5, 2).unwrap()),
            (g2, SpectralMeasure::riesz(1.0, 2).unwrap()),
        ] {
            let r = isometry_ratio(g, m, n);
            assert!((r - 1.0).abs() < tol, "{m:?}: ratio {r}");
        }
    }

    #[test]
    fn mode_draws_synthesise_the_same_field() {
        let g = GridSpec::new(2, 8, 3.0).unwrap();
        let s = NoiseSampler::new(g, SpectralMeasure::bessel(1.0, 2).unwrap()).unwrap();
        let f = s.sample(0.1, &mut rng::step_rng(2, 3, 4));
        let mut a = vec![Complex64::default(); s.representatives().len()];
        s.fill_modes(0.1, &mut rng::step_rng(2, 3, 4), &mut a);
        for (site, v) in f.values.iter().enumerate() {
            let x = g.coordinate(site);
            let w: f64 = s
                .representatives()
                .iter()
                .zip(&a)
                .enumerate()
                .map(|(i, (&m, z))| {
                    let xi = g.frequency(m);
                    let e = Complex64::from_polar(1.0, xi[0] * x[0] + xi[1] * x[1]);
                    (z * e).re * if i < s.real_mode_count() { 1.0 } else { 2.0 }
                })
                .sum();
            assert!((w - v).abs() < 1e-12);
        }
    }

    #[test]
    fn increments_regenerate_identically() {
        let g = GridSpec::new(1, 16, 4.0).unwrap();
        let p = make_path(g, SpectralMeasure::riesz(0.5, 1).unwrap(), 0.01, 5, 3, 2).unwrap();
        let all: Vec<Field> = p.increments().collect();
        assert_eq!(all[3], p.increment(3).unwrap());
        assert_ne!(all[3], all[4]);
        assert!(p.increment(5).is_err());
    }

    #[test]
    fn dump_round_trip() {
        let g = GridSpec::new(2, 8, 2.0).unwrap();
        let f = sample_increment(&SpectralMeasure::white(2).unwrap(), g, 0.1, &mut rng::step_rng(1, 1, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("inc.bin");
        write_dump(&p, &f, 0.1, 7).unwrap();
        let (h, back) = read_dump(&p).unwrap();
        assert_eq!(h, DumpHeader { n: 8, dim: 2, length: 2.0, dt: 0.1, step: 7 });
        assert_eq!(back, f);
    }
}
