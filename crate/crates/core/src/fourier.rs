//! Discrete Fourier transforms on a periodic grid, in one or two dimensions.
//!
//! Both directions are unnormalised: `forward` computes `sum_x f(x) e^{-i xi x}`
//! and `inverse` computes `sum_xi a(xi) e^{+i xi x}`.

use crate::grid::GridSpec;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub struct Fourier {
    grid: GridSpec,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Scratch buffers reused across transforms on one thread.
pub struct Workspace {
    pub buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Fourier {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            fwd: planner.plan_fft_forward(grid.n),
            inv: planner.plan_fft_inverse(grid.n),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn workspace(&self) -> Workspace {
        let len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        Workspace {
            buf: vec![Complex64::default(); self.grid.sites()],
            scratch: vec![Complex64::default(); len],
            tmp: if self.grid.dim == 2 {
                vec![Complex64::default(); self.grid.sites()]
            } else {
                Vec::new()
            },
        }
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, ws: &mut Workspace) {
        let n = self.grid.n;
        plan.process_with_scratch(&mut ws.buf, &mut ws.scratch);
        if self.grid.dim == 2 {
            transpose(&ws.buf, &mut ws.tmp, n);
            plan.process_with_scratch(&mut ws.tmp, &mut ws.scratch);
            transpose(&ws.tmp, &mut ws.buf, n);
        }
    }

    /// Forward transform of `ws.buf`, in place.
    pub fn forward(&self, ws: &mut Workspace) {
        self.run(&self.fwd, ws);
    }

    /// Unnormalised inverse transform of `ws.buf`, in place.
    pub fn inverse(&self, ws: &mut Workspace) {
        self.run(&self.inv, ws);
    }

    /// Spectrum of a real field, left in `ws.buf`.
    pub fn forward_real(&self, f: &[f64], ws: &mut Workspace) {
        for (b, &v) in ws.buf.iter_mut().zip(f) {
            *b = Complex64::new(v, 0.0);
        }
        self.forward(ws);
    }

    /// Replaces `f` by the circular filter with an even real multiplier.
    pub fn apply_multiplier(&self, f: &mut [f64], mult: &[f64], ws: &mut Workspace) {
        self.forward_real(f, ws);
        let scale = 1.0 / self.grid.sites() as f64;
        for (b, &m) in ws.buf.iter_mut().zip(mult) {
            *b *= m * scale;
        }
        self.inverse(ws);
        for (v, b) in f.iter_mut().zip(&ws.buf) {
            *v = b.re;
        }
    }

    /// Filters two real fields with one complex transform pair.
    ///
    /// Valid because an even real multiplier maps real fields to real fields.
    pub fn apply_multiplier_pair(
        &self,
        a: &mut [f64],
        b: &mut [f64],
        mult: &[f64],
        ws: &mut Workspace,
    ) {
        for ((z, &x), &y) in ws.buf.iter_mut().zip(a.iter()).zip(b.iter()) {
            *z = Complex64::new(x, y);
        }
        self.forward(ws);
        let scale = 1.0 / self.grid.sites() as f64;
        for (z, &m) in ws.buf.iter_mut().zip(mult) {
            *z *= m * scale;
        }
        self.inverse(ws);
        for ((z, x), y) in ws.buf.iter().zip(a.iter_mut()).zip(b.iter_mut()) {
            *x = z.re;
            *y = z.im;
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}
