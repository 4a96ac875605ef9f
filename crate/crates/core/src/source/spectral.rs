//! FFT-backed Fourier multipliers on the flat periodic grid.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

/// Frequency data handed to a multiplier symbol.
#[derive(Debug, Clone, Copy)]
pub struct Mode<T> {
    /// Signed integer frequency per axis (`0` on unused axes).
    pub index: [i64; 2],
    /// Angular wavenumber `2π n / L` per axis.
    pub kappa: [T; 2],
    /// Whether the frequency sits on the Nyquist line of that axis.
    pub nyquist: [bool; 2],
}

impl<T: Real> Mode<T> {
    /// `|κ|²`.
    pub fn kappa_sq(&self) -> T {
        self.kappa[0] * self.kappa[0] + self.kappa[1] * self.kappa[1]
    }
}

pub struct SpectralGrid<T: Real> {
    dim: usize,
    sizes: [usize; 2],
    lengths: [T; 2],
    forward: [Arc<dyn Fft<T>>; 2],
    inverse: [Arc<dyn Fft<T>>; 2],
}

impl<T: Real> fmt::Debug for SpectralGrid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralGrid").field("sizes", &self.sizes).finish()
    }
}

fn signed_freq(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

impl<T: Real> SpectralGrid<T> {
    pub(crate) fn new(sizes: &[usize], lengths: &[T]) -> Self {
        let dim = sizes.len();
        let sizes2 = [sizes[0], if dim == 2 { sizes[1] } else { 1 }];
        let lengths2 = [lengths[0], if dim == 2 { lengths[1] } else { T::one() }];
        let mut planner = FftPlanner::new();
        let forward = [planner.plan_fft_forward(sizes2[0]), planner.plan_fft_forward(sizes2[1])];
        let inverse = [planner.plan_fft_inverse(sizes2[0]), planner.plan_fft_inverse(sizes2[1])];
        Self { dim, sizes: sizes2, lengths: lengths2, forward, inverse }
    }

    pub fn node_count(&self) -> usize {
        self.sizes[0] * self.sizes[1]
    }

    fn mode(&self, node: usize) -> Mode<T> {
        let j0 = node / self.sizes[1];
        let j1 = node % self.sizes[1];
        let n0 = signed_freq(j0, self.sizes[0]);
        let n1 = if self.dim == 2 { signed_freq(j1, self.sizes[1]) } else { 0 };
        let k = |n: i64, axis: usize| T::TAU() * T::from_i64(n).unwrap() / self.lengths[axis];
        Mode {
            index: [n0, n1],
            kappa: [k(n0, 0), k(n1, 1)],
            nyquist: [
                self.sizes[0] % 2 == 0 && j0 == self.sizes[0] / 2,
                self.dim == 2 && self.sizes[1] % 2 == 0 && j1 == self.sizes[1] / 2,
            ],
        }
    }

    fn transform(&self, buf: &mut [Complex<T>], forward: bool) {
        let plans = if forward { &self.forward } else { &self.inverse };
        let (n0, n1) = (self.sizes[0], self.sizes[1]);
        if n1 > 1 {
            plans[1].process(buf);
        }
        let mut col = vec![Complex::new(T::zero(), T::zero()); n0];
        for j in 0..n1 {
            for i in 0..n0 {
                col[i] = buf[i * n1 + j];
            }
            plans[0].process(&mut col);
            for i in 0..n0 {
                buf[i * n1 + j] = col[i];
            }
        }
    }

    /// Applies `symbol` to every component of a node-major real field and returns the real part.
    pub fn apply<S>(&self, values: &[T], comps: usize, symbol: S) -> Vec<T>
    where
        S: Fn(&Mode<T>) -> Complex<T>,
    {
        let n = self.node_count();
        assert_eq!(values.len(), n * comps, "field shape does not match the spectral grid");
        let factors: Vec<Complex<T>> = (0..n).map(|node| symbol(&self.mode(node))).collect();
        let scale = T::one() / T::from_usize_lossy(n);
        let mut out = vec![T::zero(); n * comps];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); n];
        for c in 0..comps {
            for node in 0..n {
                buf[node] = Complex::new(values[node * comps + c], T::zero());
            }
            self.transform(&mut buf, true);
            for (b, f) in buf.iter_mut().zip(&factors) {
                *b = *b * *f;
            }
            self.transform(&mut buf, false);
            for node in 0..n {
                out[node * comps + c] = buf[node].re * scale;
            }
        }
        out
    }

    /// Spectral first derivative along `axis`; the Nyquist coefficient is dropped.
    pub fn derivative(&self, values: &[T], comps: usize, axis: usize) -> Vec<T> {
        self.apply(values, comps, |m| {
            if m.nyquist[axis] {
                Complex::new(T::zero(), T::zero())
            } else {
                Complex::new(T::zero(), m.kappa[axis])
            }
        })
    }

    /// `(1 - Δ)^{-1}`.
    pub fn helmholtz_inverse(&self, values: &[T], comps: usize) -> Vec<T> {
        self.apply(values, comps, |m| Complex::new(T::one() / (T::one() + m.kappa_sq()), T::zero()))
    }

    /// `Δ²`, symbol `|κ|⁴`.
    pub fn bilaplacian(&self, values: &[T], comps: usize) -> Vec<T> {
        self.apply(values, comps, |m| Complex::new(m.kappa_sq() * m.kappa_sq(), T::zero()))
    }

    /// The semigroup `E(t) = exp(-ε t Δ²)`, symbol `e^{-ε t |κ|⁴}`.
    pub fn biharmonic_semigroup(&self, values: &[T], comps: usize, epsilon: T, t: T) -> Vec<T> {
        self.apply(values, comps, |m| {
            let k2 = m.kappa_sq();
            Complex::new((-epsilon * t * k2 * k2).exp(), T::zero())
        })
    }
}
