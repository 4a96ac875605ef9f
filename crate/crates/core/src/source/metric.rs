use std::sync::{Arc, OnceLock};

use crate::error::{invalid, unsupported, Result};
use crate::scalar::Real;
use crate::source::spectral::SpectralGrid;

/// How the metric coefficients were generated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricKind<T> {
    /// `g = δ` on the torus `[0, L_0) × [0, L_1)`.
    Flat,
    /// `g = e^{2φ} δ` with `φ = a sin(2πx/L_0)` (1-D) or `a sin(2πx/L_0) cos(2πy/L_1)` (2-D).
    Conformal { amplitude: T },
    /// Supplied node by node.
    Custom,
}

/// Periodic Riemannian metric sampled on a uniform 1-D or 2-D torus grid.
///
/// Node `(i, j)` has flat index `i * sizes[1] + j`; in 1-D `sizes[1] == 1`.
/// Matrices are stored row-major as `[g11, g12, g21, g22]`; in 1-D only the
/// first entry is meaningful and the rest hold the 2×2 identity padding.
#[derive(Debug, Clone)]
pub struct SourceMetric<T: Real> {
    dim: usize,
    sizes: [usize; 2],
    lengths: [T; 2],
    kind: MetricKind<T>,
    g: Vec<[T; 4]>,
    g_inv: Vec<[T; 4]>,
    sqrt_det: Vec<T>,
    // g^{ij} √G, the flux coefficients of the divergence-form stencil
    flux: Vec<[T; 4]>,
    spectral: OnceLock<Arc<SpectralGrid<T>>>,
}

fn check_sizes(sizes: &[usize]) -> Result<[usize; 2]> {
    match sizes {
        [n] if *n >= 4 => Ok([*n, 1]),
        [n0, n1] if *n0 >= 4 && *n1 >= 4 => Ok([*n0, *n1]),
        [_] | [_, _] => invalid("every grid axis needs at least 4 points"),
        _ => invalid(format!("source dimension must be 1 or 2, got {}", sizes.len())),
    }
}

impl<T: Real> SourceMetric<T> {
    /// Flat metric on the torus with period `2π` on every axis.
    pub fn flat(sizes: &[usize]) -> Result<Self> {
        let lengths = vec![T::TAU(); sizes.len()];
        Self::flat_with_lengths(sizes, &lengths)
    }

    pub fn flat_with_lengths(sizes: &[usize], lengths: &[T]) -> Result<Self> {
        let mut m = Self::from_fn(sizes, lengths, |_| [T::one(), T::zero(), T::zero(), T::one()])?;
        m.kind = MetricKind::Flat;
        Ok(m)
    }

    /// Conformally flat metric `e^{2φ}δ` with period `2π`; `amplitude = 0` gives the flat metric values.
    pub fn conformal(sizes: &[usize], amplitude: T) -> Result<Self> {
        let lengths = vec![T::TAU(); sizes.len()];
        let l = [lengths[0], *lengths.last().unwrap()];
        let dim = sizes.len();
        let mut m = Self::from_fn(sizes, &lengths, |x| {
            let phi = if dim == 1 {
                amplitude * (T::TAU() * x[0] / l[0]).sin()
            } else {
                amplitude * (T::TAU() * x[0] / l[0]).sin() * (T::TAU() * x[1] / l[1]).cos()
            };
            let c = (phi + phi).exp();
            [c, T::zero(), T::zero(), c]
        })?;
        m.kind = MetricKind::Conformal { amplitude };
        Ok(m)
    }

    /// Builds a metric from node coordinates. In 1-D only entry 0 of the returned matrix is used.
    pub fn from_fn(sizes: &[usize], lengths: &[T], g_at: impl Fn(&[T; 2]) -> [T; 4]) -> Result<Self> {
        let sizes2 = check_sizes(sizes)?;
        if lengths.len() != sizes.len() {
            return invalid("lengths and sizes must have the same number of axes");
        }
        if lengths.iter().any(|&l| !(l > T::zero())) {
            return invalid("periods must be positive");
        }
        let dim = sizes.len();
        let lengths2 = [lengths[0], if dim == 2 { lengths[1] } else { T::one() }];
        let n = sizes2[0] * sizes2[1];
        let mut g = Vec::with_capacity(n);
        let mut g_inv = Vec::with_capacity(n);
        let mut sqrt_det = Vec::with_capacity(n);
        let mut flux = Vec::with_capacity(n);
        for idx in 0..n {
            let i0 = idx / sizes2[1];
            let i1 = idx % sizes2[1];
            let x = [
                lengths2[0] * T::from_usize_lossy(i0) / T::from_usize_lossy(sizes2[0]),
                lengths2[1] * T::from_usize_lossy(i1) / T::from_usize_lossy(sizes2[1]),
            ];
            let mut gm = g_at(&x);
            if dim == 1 {
                gm = [gm[0], T::zero(), T::zero(), T::one()];
            }
            let (a, b, c, d) = (gm[0], gm[1], gm[2], gm[3]);
            if (b - c).abs() > T::lit(1e-12) * (a.abs() + d.abs()) {
                return invalid(format!("metric not symmetric at node {idx}"));
            }
            let det = a * d - b * c;
            if !(a > T::zero() && det > T::zero()) {
                return invalid(format!("metric not positive definite at node {idx}"));
            }
            let inv = [d / det, -b / det, -c / det, a / det];
            let s = det.sqrt();
            g.push(gm);
            g_inv.push(inv);
            sqrt_det.push(s);
            flux.push([inv[0] * s, inv[1] * s, inv[2] * s, inv[3] * s]);
        }
        Ok(Self {
            dim,
            sizes: sizes2,
            lengths: lengths2,
            kind: MetricKind::Custom,
            g,
            g_inv,
            sqrt_det,
            flux,
            spectral: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Grid sizes per used axis.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes[..self.dim]
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths[..self.dim]
    }

    pub fn kind(&self) -> MetricKind<T> {
        self.kind
    }

    pub fn node_count(&self) -> usize {
        self.sizes[0] * self.sizes[1]
    }

    pub fn step(&self, axis: usize) -> T {
        self.lengths[axis] / T::from_usize_lossy(self.sizes[axis])
    }

    /// Product of the grid steps, the flat cell volume `h^m`.
    pub fn cell_volume(&self) -> T {
        (0..self.dim).fold(T::one(), |acc, a| acc * self.step(a))
    }

    pub fn g(&self, node: usize) -> [T; 4] {
        self.g[node]
    }

    pub fn g_inv(&self, node: usize) -> [T; 4] {
        self.g_inv[node]
    }

    pub fn sqrt_det(&self, node: usize) -> T {
        self.sqrt_det[node]
    }

    /// `g^{ij} √G` at a node.
    pub fn flux(&self, node: usize) -> [T; 4] {
        self.flux[node]
    }

    /// Quadrature weight `√G h^m` of a node.
    pub fn weight(&self, node: usize) -> T {
        self.sqrt_det[node] * self.cell_volume()
    }

    pub fn coords(&self, node: usize) -> [T; 2] {
        let i0 = node / self.sizes[1];
        let i1 = node % self.sizes[1];
        [T::from_usize_lossy(i0) * self.step(0), T::from_usize_lossy(i1) * self.step(1)]
    }

    /// Periodic neighbour of `node` shifted by `offset` along `axis`.
    #[inline]
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> usize {
        let n1 = self.sizes[1];
        let (i0, i1) = (node / n1, node % n1);
        if axis == 0 {
            let n0 = self.sizes[0] as isize;
            let j = ((i0 as isize + offset) % n0 + n0) % n0;
            j as usize * n1 + i1
        } else {
            let n = n1 as isize;
            let j = ((i1 as isize + offset) % n + n) % n;
            i0 * n1 + j as usize
        }
    }

    /// True when `g` is the identity at every node.
    pub fn is_flat(&self) -> bool {
        matches!(self.kind, MetricKind::Flat)
            || self.g.iter().all(|m| m[0] == T::one() && m[1] == T::zero() && m[2] == T::zero() && m[3] == T::one())
    }

    /// Shared FFT plans; requires a flat metric and power-of-two sizes.
    pub fn spectral(&self) -> Result<Arc<SpectralGrid<T>>> {
        if !self.is_flat() {
            return unsupported("spectral operators need a flat source metric");
        }
        if self.sizes().iter().any(|n| !n.is_power_of_two()) {
            return unsupported("spectral operators need power-of-two grid sizes");
        }
        Ok(self
            .spectral
            .get_or_init(|| Arc::new(SpectralGrid::new(self.sizes(), self.lengths())))
            .clone())
    }

    /// Centered first difference `(f(x+h) - f(x-h)) / 2h` of a node-major field with `comps` components.
    pub fn centered_diff(&self, values: &[T], comps: usize, axis: usize) -> Vec<T> {
        let n = self.node_count();
        let inv2h = T::one() / (self.step(axis) + self.step(axis));
        let mut out = vec![T::zero(); n * comps];
        for node in 0..n {
            let p = self.neighbor(node, axis, 1) * comps;
            let m = self.neighbor(node, axis, -1) * comps;
            for c in 0..comps {
                out[node * comps + c] = (values[p + c] - values[m + c]) * inv2h;
            }
        }
        out
    }
}
