//! The periodic source torus `(M, g)`: metric, grid functions, Laplace–Beltrami
//! operator, Fourier multipliers and Sobolev norms.
//!
//! The Laplacian is assembled in divergence form `(1/√G) D_i (g^{ij} √G D_j f)`
//! with centered first differences `D`. Because `D` is antisymmetric on the
//! periodic grid, summation by parts holds exactly:
//! `Σ ⟨Δf, f⟩ √G h^m = -Σ g^{ij} D_i f D_j f √G h^m`.

mod metric;
mod spectral;

pub use metric::{MetricKind, SourceMetric};
pub use spectral::{Mode, SpectralGrid};

use num_complex::Complex;

use crate::error::{invalid, unsupported, Result};
use crate::scalar::Real;

/// Node-major samples of a `comps`-component field on the source grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<T> {
    comps: usize,
    values: Vec<T>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(comps: usize, values: Vec<T>) -> Result<Self> {
        if comps == 0 || values.len() % comps != 0 {
            return invalid("value count is not a multiple of the component count");
        }
        Ok(Self { comps, values })
    }

    pub fn zeros(metric: &SourceMetric<T>, comps: usize) -> Self {
        Self { comps, values: vec![T::zero(); metric.node_count() * comps] }
    }

    /// Samples a scalar function of the node coordinates.
    pub fn from_scalar_fn(metric: &SourceMetric<T>, f: impl Fn(&[T; 2]) -> T) -> Self {
        let values = (0..metric.node_count()).map(|n| f(&metric.coords(n))).collect();
        Self { comps: 1, values }
    }

    pub fn comps(&self) -> usize {
        self.comps
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.comps
    }

    pub(crate) fn check_on(&self, metric: &SourceMetric<T>) -> Result<()> {
        if self.node_count() != metric.node_count() {
            return invalid(format!(
                "grid function has {} nodes, metric grid has {}",
                self.node_count(),
                metric.node_count()
            ));
        }
        Ok(())
    }
}

/// Componentwise divergence-form Laplacian on raw node-major values.
pub(crate) fn laplacian_values<T: Real>(metric: &SourceMetric<T>, values: &[T], comps: usize) -> Vec<T> {
    let n = metric.node_count();
    let dim = metric.dim();
    let grads: Vec<Vec<T>> = (0..dim).map(|a| metric.centered_diff(values, comps, a)).collect();
    let mut out = vec![T::zero(); n * comps];
    for i in 0..dim {
        let mut flux = vec![T::zero(); n * comps];
        for node in 0..n {
            let a = metric.flux(node);
            for (j, grad) in grads.iter().enumerate() {
                let coef = a[2 * i + j];
                if coef == T::zero() {
                    continue;
                }
                for c in 0..comps {
                    flux[node * comps + c] = flux[node * comps + c] + coef * grad[node * comps + c];
                }
            }
        }
        let div = metric.centered_diff(&flux, comps, i);
        for (o, d) in out.iter_mut().zip(&div) {
            *o = *o + *d;
        }
    }
    for node in 0..n {
        let s = metric.sqrt_det(node);
        for c in 0..comps {
            out[node * comps + c] = out[node * comps + c] / s;
        }
    }
    out
}

/// `Δ_g f` applied to each component of `f`.
pub fn laplace_beltrami<T: Real>(metric: &SourceMetric<T>, f: &GridFunction<T>) -> Result<GridFunction<T>> {
    f.check_on(metric)?;
    Ok(GridFunction { comps: f.comps, values: laplacian_values(metric, &f.values, f.comps) })
}

/// Multiplies Fourier mode `n` of every component by `symbol(n)`. Flat metric, power-of-two grid.
pub fn fourier_multiplier_apply<T, S>(metric: &SourceMetric<T>, symbol: S, f: &GridFunction<T>) -> Result<GridFunction<T>>
where
    T: Real,
    S: Fn(&Mode<T>) -> Complex<T>,
{
    f.check_on(metric)?;
    let spectral = metric.spectral()?;
    Ok(GridFunction { comps: f.comps, values: spectral.apply(&f.values, f.comps, symbol) })
}

/// Highest derivative order supported by [`sobolev_norm`].
pub const MAX_SOBOLEV_ORDER: usize = 4;

/// Full Sobolev norm `(Σ_{l ≤ s} ∫ |D^l f|² dμ_g)^{1/2}` with centered-difference derivatives.
///
/// `|D^l f|²` contracts partial derivatives with `g^{i_1 j_1} ⋯ g^{i_l j_l}`; the `l = 0`
/// term is included, so the result vanishes only for `f ≡ 0`.
pub fn sobolev_norm<T: Real>(metric: &SourceMetric<T>, f: &GridFunction<T>, s: usize) -> Result<T> {
    f.check_on(metric)?;
    if s > MAX_SOBOLEV_ORDER {
        return unsupported(format!("Sobolev order {s} exceeds {MAX_SOBOLEV_ORDER}"));
    }
    let n = metric.node_count();
    let dim = metric.dim();
    let comps = f.comps;
    // tensors[k] holds the partial derivative with multi-index k (base-`dim` digits, most significant first)
    let mut tensors: Vec<Vec<T>> = vec![f.values.clone()];
    let mut total = T::zero();
    for l in 0..=s {
        if l > 0 {
            tensors = tensors
                .iter()
                .flat_map(|t| (0..dim).map(move |a| metric.centered_diff(t, comps, a)))
                .collect();
        }
        let count = tensors.len();
        for node in 0..n {
            let gi = metric.g_inv(node);
            let mut acc = T::zero();
            for ii in 0..count {
                for jj in 0..count {
                    let mut coef = T::one();
                    let (mut a, mut b) = (ii, jj);
                    for _ in 0..l {
                        coef = coef * gi[2 * (a % dim) + (b % dim)];
                        a /= dim;
                        b /= dim;
                    }
                    if coef == T::zero() {
                        continue;
                    }
                    for c in 0..comps {
                        acc = acc + coef * tensors[ii][node * comps + c] * tensors[jj][node * comps + c];
                    }
                }
            }
            total = total + acc * metric.weight(node);
        }
    }
    Ok(total.sqrt())
}
