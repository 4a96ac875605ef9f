//! Maps `u: M → N` sampled on the source grid and sections of the pullback bundle `u⁻¹TN`.
//!
//! Everything is extrinsic: a map is a grid of ambient points, a section a grid of ambient
//! vectors tangent at those points, and the induced connection is `∇_i = Π ∘ D_i` with the
//! centered difference `D_i` of the source grid.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, unsupported, GeoflowError, Result};
use crate::gauge::GaugeOperator;
use crate::scalar::{dot, norm, Real};
use crate::source::{laplacian_values, SourceMetric};
use crate::target::{EmbeddedTarget, TargetKind};

/// Deepest power of `Δ̃` accepted by [`iterated_laplacian`] and [`norm_nk`].
pub const MAX_LAPLACIAN_DEPTH: usize = 4;

/// Default Sobolev depth `k` used for `𝒩_k`.
pub const DEFAULT_K: usize = 2;

// node loops below this many scalars run serially
const PAR_THRESHOLD: usize = 1 << 14;

static NEXT_STATE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STATE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Fills a node-major buffer by evaluating `f(node, out_slice)` at every node.
pub(crate) fn map_nodes<T, F>(nodes: usize, comps: usize, f: F) -> Vec<T>
where
    T: Real,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let mut out = vec![T::zero(); nodes * comps];
    if nodes * comps >= PAR_THRESHOLD {
        out.par_chunks_mut(comps).enumerate().for_each(|(node, o)| f(node, o));
    } else {
        out.chunks_mut(comps).enumerate().for_each(|(node, o)| f(node, o));
    }
    out
}

/// A map `v = w ∘ u` at one time: one on-manifold ambient point per source node.
#[derive(Debug, Clone)]
pub struct MapState<T: Real> {
    id: u64,
    time: T,
    points: Vec<T>,
    target: EmbeddedTarget<T>,
    metric: Arc<SourceMetric<T>>,
}

impl<T: Real> MapState<T> {
    /// Validates shape and that every point is within [`Real::state_tol`] of the target.
    pub fn new(metric: Arc<SourceMetric<T>>, target: EmbeddedTarget<T>, points: Vec<T>, time: T) -> Result<Self> {
        let d = target.ambient_dim();
        if points.len() != metric.node_count() * d {
            return invalid(format!(
                "expected {} ambient values ({} nodes × {d}), got {}",
                metric.node_count() * d,
                metric.node_count(),
                points.len()
            ));
        }
        if let Some(bad) = points.chunks(d).map(|p| target.distance(p)).find(|e| !(*e <= T::state_tol())) {
            return Err(GeoflowError::OffManifold { defect: bad.as_f64() });
        }
        Ok(Self::trusted(metric, target, points, time))
    }

    /// Samples `f` at the node coordinates.
    pub fn from_fn(
        metric: Arc<SourceMetric<T>>,
        target: EmbeddedTarget<T>,
        f: impl Fn(&[T; 2]) -> Vec<T>,
    ) -> Result<Self> {
        let mut points = Vec::with_capacity(metric.node_count() * target.ambient_dim());
        for node in 0..metric.node_count() {
            let p = f(&metric.coords(node));
            if p.len() != target.ambient_dim() {
                return invalid("sampled point has the wrong number of components");
            }
            points.extend(p);
        }
        Self::new(metric, target, points, T::zero())
    }

    pub(crate) fn trusted(metric: Arc<SourceMetric<T>>, target: EmbeddedTarget<T>, points: Vec<T>, time: T) -> Self {
        Self { id: fresh_id(), time, points, target, metric }
    }

    /// New state on the same grid and target; validated like [`MapState::new`].
    pub fn with_points(&self, points: Vec<T>, time: T) -> Result<Self> {
        Self::new(self.metric.clone(), self.target, points, time)
    }

    pub(crate) fn trusted_with(&self, points: Vec<T>, time: T) -> Self {
        Self::trusted(self.metric.clone(), self.target, points, time)
    }

    /// Identifier tying sections to the state they were built on.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn time(&self) -> T {
        self.time
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn point(&self, node: usize) -> &[T] {
        let d = self.ambient_dim();
        &self.points[node * d..(node + 1) * d]
    }

    pub fn target(&self) -> &EmbeddedTarget<T> {
        &self.target
    }

    pub fn metric(&self) -> &Arc<SourceMetric<T>> {
        &self.metric
    }

    pub fn node_count(&self) -> usize {
        self.metric.node_count()
    }

    pub fn ambient_dim(&self) -> usize {
        self.target.ambient_dim()
    }

    /// Largest distance of a node from the target.
    pub fn max_defect(&self) -> T {
        self.points.chunks(self.ambient_dim()).map(|p| self.target.distance(p)).fold(T::zero(), T::max)
    }

    /// `(Σ |v - w|² √G h^m)^{1/2}` between two states on the same grid.
    pub fn l2_distance(&self, other: &Self) -> Result<T> {
        if self.points.len() != other.points.len() {
            return invalid("states live on different grids");
        }
        Ok(weighted_l2(&self.metric, &self.points, &other.points, self.ambient_dim()))
    }

    /// Projects every node's vector onto the tangent space.
    pub(crate) fn project_all(&self, v: &[T]) -> Vec<T> {
        let d = self.ambient_dim();
        map_nodes(self.node_count(), d, |node, o| {
            self.target.project_tangent_into(self.point(node), &v[node * d..(node + 1) * d], o)
        })
    }

    /// `J_u Π_u` applied nodewise.
    pub(crate) fn apply_j_all(&self, v: &[T]) -> Vec<T> {
        let d = self.ambient_dim();
        map_nodes(self.node_count(), d, |node, o| {
            self.target.j_into(self.point(node), &v[node * d..(node + 1) * d], o)
        })
    }

    /// Centered difference `D_i u` of the ambient representation.
    pub fn coordinate_derivative(&self, axis: usize) -> Result<Vec<T>> {
        if axis >= self.metric.dim() {
            return invalid(format!("axis {axis} out of range for a {}-D source", self.metric.dim()));
        }
        Ok(self.metric.centered_diff(&self.points, self.ambient_dim(), axis))
    }
}

pub(crate) fn weighted_l2<T: Real>(metric: &SourceMetric<T>, a: &[T], b: &[T], comps: usize) -> T {
    let mut acc = T::zero();
    for node in 0..metric.node_count() {
        let s: T = (0..comps).map(|c| {
            let e = a[node * comps + c] - b[node * comps + c];
            e * e
        }).sum();
        acc = acc + s * metric.weight(node);
    }
    acc.sqrt()
}

/// A section of `u⁻¹TN`: one tangent ambient vector per node of its base state.
#[derive(Debug, Clone, PartialEq)]
pub struct Section<T> {
    base: u64,
    dim: usize,
    vectors: Vec<T>,
}

impl<T: Real> Section<T> {
    /// Validates that each vector is tangent at the base point to [`Real::state_tol`] (relative).
    pub fn new(state: &MapState<T>, vectors: Vec<T>) -> Result<Self> {
        let d = state.ambient_dim();
        if vectors.len() != state.points.len() {
            return invalid("section length does not match its base state");
        }
        let mut tv = vec![T::zero(); d];
        for node in 0..state.node_count() {
            let v = &vectors[node * d..(node + 1) * d];
            state.target.project_tangent_into(state.point(node), v, &mut tv);
            let defect = v.iter().zip(&tv).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
            if defect > T::state_tol() * T::one().max(norm(v)) {
                return invalid(format!("vector at node {node} is not tangent (normal part {:e})", defect.as_f64()));
            }
        }
        Ok(Self::trusted(state, vectors))
    }

    /// Tangent projection of an arbitrary ambient field.
    pub fn project(state: &MapState<T>, ambient: &[T]) -> Result<Self> {
        if ambient.len() != state.points.len() {
            return invalid("section length does not match its base state");
        }
        Ok(Self::trusted(state, state.project_all(ambient)))
    }

    pub fn zeros(state: &MapState<T>) -> Self {
        Self::trusted(state, vec![T::zero(); state.points.len()])
    }

    pub(crate) fn trusted(state: &MapState<T>, vectors: Vec<T>) -> Self {
        Self { base: state.id, dim: state.ambient_dim(), vectors }
    }

    pub fn base_id(&self) -> u64 {
        self.base
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    pub fn vectors(&self) -> &[T] {
        &self.vectors
    }

    pub fn vector(&self, node: usize) -> &[T] {
        &self.vectors[node * self.dim..(node + 1) * self.dim]
    }

    pub fn into_vectors(self) -> Vec<T> {
        self.vectors
    }

    /// `a·self + b·other` on the same base.
    pub fn combine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        if self.base != other.base {
            return invalid("sections live on different base states");
        }
        let vectors = self.vectors.iter().zip(&other.vectors).map(|(&x, &y)| a * x + b * y).collect();
        Ok(Self { base: self.base, dim: self.dim, vectors })
    }

    /// Largest pointwise Euclidean length.
    pub fn max_norm(&self) -> T {
        self.vectors.chunks(self.dim).map(norm).fold(T::zero(), T::max)
    }

    pub(crate) fn check_base(&self, state: &MapState<T>) -> Result<()> {
        if self.base != state.id {
            return invalid("section does not belong to this state");
        }
        Ok(())
    }
}

/// `∇_i V = Π_u D_i V`.
pub fn covariant_derivative<T: Real>(state: &MapState<T>, v: &Section<T>, axis: usize) -> Result<Section<T>> {
    v.check_base(state)?;
    if axis >= state.metric.dim() {
        return invalid(format!("axis {axis} out of range for a {}-D source", state.metric.dim()));
    }
    let dv = state.metric.centered_diff(&v.vectors, state.ambient_dim(), axis);
    Ok(Section::trusted(state, state.project_all(&dv)))
}

pub(crate) fn tension_values<T: Real>(state: &MapState<T>) -> Vec<T> {
    let lap = laplacian_values(&state.metric, &state.points, state.ambient_dim());
    state.project_all(&lap)
}

/// Tension field `τ(u) = Π_u Δ_g u` with `Δ_g` applied to the ambient components.
pub fn tension_extrinsic<T: Real>(state: &MapState<T>) -> Section<T> {
    Section::trusted(state, tension_values(state))
}

/// Tension computed in stereographic coordinates from the north pole (sphere2 only).
///
/// `τ^a = Δ_g z^a + g^{ij} Γ^a_{bc} ∂_i z^b ∂_j z^c` for the round metric `4/(1+|z|²)² δ`,
/// pushed forward to ambient vectors. Independent of the extrinsic code path.
pub fn tension_chart_oracle<T: Real>(state: &MapState<T>) -> Result<Section<T>> {
    if state.target.kind() != TargetKind::Sphere2 {
        return unsupported("the stereographic chart oracle is only available on sphere2");
    }
    let n = state.node_count();
    let metric = &state.metric;
    let margin = T::lit(0.1);
    let mut z = vec![T::zero(); 2 * n];
    for node in 0..n {
        let p = state.point(node);
        let den = T::one() - p[2];
        if !(den >= margin) {
            return Err(GeoflowError::ChartDomain(format!(
                "node {node} is too close to the chart pole (1 - u_z = {:e} < 0.1)", den.as_f64()
            )));
        }
        z[2 * node] = p[0] / den;
        z[2 * node + 1] = p[1] / den;
    }
    let lap = laplacian_values(metric, &z, 2);
    let dz: Vec<Vec<T>> = (0..metric.dim()).map(|i| metric.centered_diff(&z, 2, i)).collect();
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let mut out = vec![T::zero(); 3 * n];
    for node in 0..n {
        let (z1, z2) = (z[2 * node], z[2 * node + 1]);
        let s = T::one() + z1 * z1 + z2 * z2;
        // ∂_c log λ for λ = 2 / (1 + |z|²)
        let psi = [-two * z1 / s, -two * z2 / s];
        let gi = metric.g_inv(node);
        let mut tau = [lap[2 * node], lap[2 * node + 1]];
        for i in 0..metric.dim() {
            for j in 0..metric.dim() {
                let c = gi[2 * i + j];
                if c == T::zero() {
                    continue;
                }
                let x = [dz[i][2 * node], dz[i][2 * node + 1]];
                let y = [dz[j][2 * node], dz[j][2 * node + 1]];
                let psi_y = psi[0] * y[0] + psi[1] * y[1];
                let psi_x = psi[0] * x[0] + psi[1] * x[1];
                let xy = x[0] * y[0] + x[1] * y[1];
                for a in 0..2 {
                    tau[a] = tau[a] + c * (x[a] * psi_y + y[a] * psi_x - xy * psi[a]);
                }
            }
        }
        let s2 = s * s;
        let j11 = (two * s - four * z1 * z1) / s2;
        let j12 = -four * z1 * z2 / s2;
        let j22 = (two * s - four * z2 * z2) / s2;
        out[3 * node] = j11 * tau[0] + j12 * tau[1];
        out[3 * node + 1] = j12 * tau[0] + j22 * tau[1];
        out[3 * node + 2] = (four * z1 * tau[0] + four * z2 * tau[1]) / s2;
    }
    Ok(Section::trusted(state, out))
}

pub(crate) fn tilde_laplacian_values<T: Real>(state: &MapState<T>, v: &[T]) -> Vec<T> {
    let metric = &state.metric;
    let d = state.ambient_dim();
    let n = state.node_count();
    let dim = metric.dim();
    let grads: Vec<Vec<T>> = (0..dim).map(|j| state.project_all(&metric.centered_diff(v, d, j))).collect();
    let mut div = vec![T::zero(); n * d];
    for i in 0..dim {
        let flux = map_nodes(n, d, |node, o| {
            let a = metric.flux(node);
            for (j, g) in grads.iter().enumerate() {
                let c = a[2 * i + j];
                for (oc, &gc) in o.iter_mut().zip(&g[node * d..(node + 1) * d]) {
                    *oc = *oc + c * gc;
                }
            }
        });
        for (acc, x) in div.iter_mut().zip(metric.centered_diff(&flux, d, i)) {
            *acc = *acc + x;
        }
    }
    let mut out = state.project_all(&div);
    for node in 0..n {
        let s = metric.sqrt_det(node);
        for c in &mut out[node * d..(node + 1) * d] {
            *c = *c / s;
        }
    }
    out
}

/// Rough Laplacian `Δ̃_g V = (1/√G) ∇_i (g^{ij} √G ∇_j V)` in divergence form.
pub fn tilde_laplacian<T: Real>(state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
    v.check_base(state)?;
    Ok(Section::trusted(state, tilde_laplacian_values(state, &v.vectors)))
}

/// `Δ̃_g^l u := Δ̃_g^{l-1} τ(u)` for `1 ≤ l ≤` [`MAX_LAPLACIAN_DEPTH`].
pub fn iterated_laplacian<T: Real>(state: &MapState<T>, l: usize) -> Result<Section<T>> {
    if l == 0 || l > MAX_LAPLACIAN_DEPTH {
        return invalid(format!("Laplacian power {l} outside 1..={MAX_LAPLACIAN_DEPTH}"));
    }
    let mut v = tension_values(state);
    for _ in 1..l {
        v = tilde_laplacian_values(state, &v);
    }
    Ok(Section::trusted(state, v))
}

/// All of `Δ̃^1 u, …, Δ̃^k u`, sharing the intermediate results.
pub(crate) fn laplacian_tower<T: Real>(state: &MapState<T>, k: usize) -> Result<Vec<Vec<T>>> {
    if k == 0 || k > MAX_LAPLACIAN_DEPTH {
        return invalid(format!("Sobolev depth {k} outside 1..={MAX_LAPLACIAN_DEPTH}"));
    }
    let mut tower = vec![tension_values(state)];
    for _ in 1..k {
        let next = tilde_laplacian_values(state, tower.last().unwrap());
        tower.push(next);
    }
    Ok(tower)
}

/// Dirichlet energy `½ ∫ g^{ij} h(∂_i u, ∂_j u) dμ_g`.
pub fn energy<T: Real>(state: &MapState<T>) -> T {
    let metric = &state.metric;
    let d = state.ambient_dim();
    let dim = metric.dim();
    let grads: Vec<Vec<T>> = (0..dim).map(|i| metric.centered_diff(&state.points, d, i)).collect();
    let mut total = T::zero();
    for node in 0..state.node_count() {
        let gi = metric.g_inv(node);
        let mut e = T::zero();
        for i in 0..dim {
            for j in 0..dim {
                let c = gi[2 * i + j];
                if c != T::zero() {
                    e = e + c * dot(&grads[i][node * d..(node + 1) * d], &grads[j][node * d..(node + 1) * d]);
                }
            }
        }
        total = total + e * metric.weight(node);
    }
    T::lit(0.5) * total
}

pub(crate) fn inner_values<T: Real>(metric: &SourceMetric<T>, a: &[T], b: &[T], d: usize) -> T {
    let mut acc = T::zero();
    for node in 0..metric.node_count() {
        acc = acc + dot(&a[node * d..(node + 1) * d], &b[node * d..(node + 1) * d]) * metric.weight(node);
    }
    acc
}

/// `Σ h(V, W) √G h^m`.
pub fn inner<T: Real>(state: &MapState<T>, v: &Section<T>, w: &Section<T>) -> Result<T> {
    v.check_base(state)?;
    w.check_base(state)?;
    Ok(inner_values(&state.metric, &v.vectors, &w.vectors, state.ambient_dim()))
}

/// `‖V‖_{L²}` with the source volume form.
pub fn section_norm<T: Real>(state: &MapState<T>, v: &Section<T>) -> Result<T> {
    Ok(inner(state, v, v)?.sqrt())
}

/// `𝒩_k(u) = (Σ_{l=1}^{k-1} ‖Δ̃^l u‖² + ‖Λ Δ̃^k u‖²)^{1/2}`; `Λ = I` without a gauge.
pub fn norm_nk<T: Real>(state: &MapState<T>, gauge: Option<&GaugeOperator<T>>, k: usize) -> Result<T> {
    let tower = laplacian_tower(state, k)?;
    let d = state.ambient_dim();
    let metric = &state.metric;
    let mut sum = T::zero();
    for v in &tower[..k - 1] {
        sum = sum + inner_values(metric, v, v, d);
    }
    let top = Section::trusted(state, tower[k - 1].clone());
    let top = match gauge {
        Some(op) => op.apply(state, &top)?,
        None => top,
    };
    sum = sum + inner_values(metric, &top.vectors, &top.vectors, d);
    Ok(sum.sqrt())
}

/// Ungauged `(Σ_{l=1}^{k} ‖Δ̃^l u‖²)^{1/2}`, the comparison side of the `𝒩_k` equivalence.
pub fn laplacian_hierarchy_norm<T: Real>(state: &MapState<T>, k: usize) -> Result<T> {
    norm_nk(state, None, k)
}

/// Grid maximum of `|∇_i∇_j V - ∇_j∇_i V - R(∂_i u, ∂_j u) V|`.
pub fn commutator_residual<T: Real>(state: &MapState<T>, v: &Section<T>, i: usize, j: usize) -> Result<T> {
    v.check_base(state)?;
    let dim = state.metric.dim();
    if i >= dim || j >= dim {
        return invalid(format!("axes ({i}, {j}) out of range for a {dim}-D source"));
    }
    let vi = covariant_derivative(state, v, i)?;
    let vj = covariant_derivative(state, v, j)?;
    let vij = covariant_derivative(state, &vj, i)?;
    let vji = covariant_derivative(state, &vi, j)?;
    let ui = state.coordinate_derivative(i)?;
    let uj = state.coordinate_derivative(j)?;
    let d = state.ambient_dim();
    let mut r = vec![T::zero(); d];
    let mut worst = T::zero();
    for node in 0..state.node_count() {
        let s = node * d..(node + 1) * d;
        state.target.curvature_into(state.point(node), &ui[s.clone()], &uj[s.clone()], v.vector(node), &mut r);
        let mut e = T::zero();
        for c in 0..d {
            let x = vij.vectors[node * d + c] - vji.vectors[node * d + c] - r[c];
            e = e + x * x;
        }
        worst = worst.max(e.sqrt());
    }
    Ok(worst)
}
