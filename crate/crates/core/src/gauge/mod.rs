//! The order `-1` gauge `Λ = I - Λ̃` on the flat 1-D torus.
//!
//! With `B = -(2k-1) g^{11} ∇_{u_x} J` and `R = (1 - Δ)^{-1}`,
//! `Λ̃ V = ¼ [J B ∇ R V - B J ∇ R V]`, which equals `½ J B ∇ R V` because `B`
//! anti-commutes with `J`. The derivative and `R` are exact Fourier multipliers;
//! `B` and `J` act as pointwise matrices. The probe operators used by the
//! diagnostics are `L V = ∇(J ∇ V)` and the first-order term `P₁ V = -B ∇ V`.

use std::sync::Arc;

use crate::error::{invalid, unsupported, Result};
use crate::pullback::{
    inner_values, laplacian_hierarchy_norm, map_nodes, norm_nk, MapState, Section, MAX_LAPLACIAN_DEPTH,
};
use crate::scalar::Real;
use crate::source::SpectralGrid;
use crate::target::DEFAULT_NABLA_J_STEP;

/// Share of the Nyquist frequency above which the state counts as under-resolved.
pub const BAND_LIMIT_FRACTION: f64 = 2.0 / 3.0;

/// Pointwise `B`, `J Π` and the multipliers needed to apply `Λ̃`.
#[derive(Debug, Clone)]
pub struct GaugeOperator<T: Real> {
    base: u64,
    k: usize,
    dim: usize,
    // per node d×d row-major
    b: Vec<T>,
    degenerate: bool,
    band_warning: Option<String>,
    spectral: Arc<SpectralGrid<T>>,
}

/// [`build_gauge_with_step`] with the default `∇J` step.
pub fn build_gauge<T: Real>(state: &MapState<T>, k: usize) -> Result<GaugeOperator<T>> {
    build_gauge_with_step(state, k, T::lit(DEFAULT_NABLA_J_STEP))
}

/// Assembles `B = -(2k-1) g^{11} ∇_{u_x} J` at every node; flat 1-D power-of-two grids only.
pub fn build_gauge_with_step<T: Real>(state: &MapState<T>, k: usize, eta: T) -> Result<GaugeOperator<T>> {
    let metric = state.metric();
    if metric.dim() != 1 {
        return unsupported("the gauge operator is only realized on a 1-D source");
    }
    let spectral = metric.spectral()?;
    if k == 0 || k > MAX_LAPLACIAN_DEPTH {
        return invalid(format!("Sobolev depth {k} outside 1..={MAX_LAPLACIAN_DEPTH}"));
    }
    if !(eta > T::zero()) {
        return invalid("finite-difference step must be positive");
    }
    let d = state.ambient_dim();
    let n = state.node_count();
    let band_warning = band_limit_warning(state, &spectral);
    if state.target().is_kahler() {
        return Ok(GaugeOperator {
            base: state.id(),
            k,
            dim: d,
            b: vec![T::zero(); n * d * d],
            degenerate: true,
            band_warning,
            spectral,
        });
    }
    let ux = spectral.derivative(state.points(), d, 0);
    let factor = -T::from_usize_lossy(2 * k - 1);
    let target = *state.target();
    let b = map_nodes(n, d * d, |node, out| {
        let p = state.point(node);
        let x = &ux[node * d..(node + 1) * d];
        let scale = factor * metric.g_inv(node)[0];
        let mut e = vec![T::zero(); d];
        let mut col = vec![T::zero(); d];
        for a in 0..d {
            e.iter_mut().enumerate().for_each(|(i, v)| *v = if i == a { T::one() } else { T::zero() });
            if target.nabla_j_into(p, x, &e, eta, &mut col).is_err() {
                out.iter_mut().for_each(|v| *v = T::nan());
                return;
            }
            for r in 0..d {
                out[r * d + a] = scale * col[r];
            }
        }
    });
    if b.iter().any(|v| !v.is_finite()) {
        return invalid("could not evaluate ∇J along the state");
    }
    let degenerate = b.iter().all(|v| *v == T::zero());
    Ok(GaugeOperator { base: state.id(), k, dim: d, b, degenerate, band_warning, spectral })
}

fn band_limit_warning<T: Real>(state: &MapState<T>, spectral: &SpectralGrid<T>) -> Option<String> {
    let d = state.ambient_dim();
    let n = state.metric().sizes()[0];
    let cutoff = T::lit(BAND_LIMIT_FRACTION) * T::from_usize_lossy(n / 2);
    let high = spectral.apply(state.points(), d, |m| {
        let idx = T::from_i64(m.index[0].abs()).unwrap();
        if idx > cutoff {
            num_complex::Complex::new(T::one(), T::zero())
        } else {
            num_complex::Complex::new(T::zero(), T::zero())
        }
    });
    let hi: T = high.iter().map(|v| *v * *v).sum();
    let all: T = state.points().iter().map(|v| *v * *v).sum();
    if hi > T::lit(1e-20) * all {
        Some(format!(
            "state carries relative energy {:.3e} above {:.0}% of Nyquist; gauge diagnostics may be unreliable",
            (hi / all).as_f64(),
            100.0 * BAND_LIMIT_FRACTION
        ))
    } else {
        None
    }
}

impl<T: Real> GaugeOperator<T> {
    pub fn base_id(&self) -> u64 {
        self.base
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `B ≡ 0`, so `Λ = I`.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Set when the base state is not well resolved by the grid.
    pub fn band_warning(&self) -> Option<&str> {
        self.band_warning.as_deref()
    }

    /// Row-major `d × d` matrix of `B` at `node`.
    pub fn b_matrix(&self, node: usize) -> &[T] {
        let dd = self.dim * self.dim;
        &self.b[node * dd..(node + 1) * dd]
    }

    fn check(&self, state: &MapState<T>, v: &Section<T>) -> Result<()> {
        if state.id() != self.base {
            return invalid("gauge operator was built on a different state");
        }
        v.check_base(state)
    }

    fn apply_b(&self, v: &[T]) -> Vec<T> {
        let d = self.dim;
        map_nodes(v.len() / d, d, |node, o| {
            let m = self.b_matrix(node);
            let x = &v[node * d..(node + 1) * d];
            for r in 0..d {
                o[r] = (0..d).fold(T::zero(), |acc, c| acc + m[r * d + c] * x[c]);
            }
        })
    }

    /// `∇V = Π D V` with the spectral derivative.
    fn nabla(&self, state: &MapState<T>, v: &[T]) -> Vec<T> {
        state.project_all(&self.spectral.derivative(v, self.dim, 0))
    }

    fn lambda_tilde_values(&self, state: &MapState<T>, v: &[T]) -> Vec<T> {
        if self.degenerate {
            return vec![T::zero(); v.len()];
        }
        let r = self.spectral.helmholtz_inverse(v, self.dim);
        let g = self.nabla(state, &r);
        let jbg = state.apply_j_all(&self.apply_b(&g));
        let bjg = self.apply_b(&state.apply_j_all(&g));
        let quarter = T::lit(0.25);
        jbg.iter().zip(&bjg).map(|(&a, &b)| quarter * (a - b)).collect()
    }

    /// `Λ̃ V`.
    pub fn lambda_tilde(&self, state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
        self.check(state, v)?;
        Ok(Section::trusted(state, self.lambda_tilde_values(state, v.vectors())))
    }

    /// `Λ V = V - Λ̃ V`.
    pub fn apply(&self, state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
        let lt = self.lambda_tilde(state, v)?;
        v.combine(T::one(), &lt, -T::one())
    }

    /// `Λ′ V = V + Λ̃ V`.
    pub fn apply_prime(&self, state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
        let lt = self.lambda_tilde(state, v)?;
        v.combine(T::one(), &lt, T::one())
    }

    /// `L V = ∇(J ∇ V)`.
    pub fn principal_operator(&self, state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
        self.check(state, v)?;
        Ok(Section::trusted(state, self.principal_values(state, v.vectors())))
    }

    fn principal_values(&self, state: &MapState<T>, v: &[T]) -> Vec<T> {
        let jg = state.apply_j_all(&self.nabla(state, v));
        self.nabla(state, &jg)
    }

    /// `P₁ V = (2k-1) g^{11} (∇_{u_x} J) ∇V = -B ∇V`.
    pub fn first_order_term(&self, state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
        self.check(state, v)?;
        Ok(Section::trusted(state, self.first_order_values(state, v.vectors())))
    }

    fn first_order_values(&self, state: &MapState<T>, v: &[T]) -> Vec<T> {
        if self.degenerate {
            return vec![T::zero(); v.len()];
        }
        self.apply_b(&self.nabla(state, v)).into_iter().map(|x| -x).collect()
    }

    /// Largest pointwise Frobenius norm of `JΠB + BJΠ`.
    pub fn anticommutation_residual(&self, state: &MapState<T>) -> Result<T> {
        if state.id() != self.base {
            return invalid("gauge operator was built on a different state");
        }
        let d = self.dim;
        let mut worst = T::zero();
        let mut jm = vec![T::zero(); d * d];
        let mut e = vec![T::zero(); d];
        let mut col = vec![T::zero(); d];
        for node in 0..state.node_count() {
            let p = state.point(node);
            for a in 0..d {
                e.iter_mut().enumerate().for_each(|(i, v)| *v = if i == a { T::one() } else { T::zero() });
                state.target().j_into(p, &e, &mut col);
                for r in 0..d {
                    jm[r * d + a] = col[r];
                }
            }
            let b = self.b_matrix(node);
            let mut s = T::zero();
            for r in 0..d {
                for c in 0..d {
                    let mut x = T::zero();
                    for t in 0..d {
                        x = x + jm[r * d + t] * b[t * d + c] + b[r * d + t] * jm[t * d + c];
                    }
                    s = s + x * x;
                }
            }
            worst = worst.max(s.sqrt());
        }
        Ok(worst)
    }

    /// Largest pointwise Frobenius norm of `B`.
    pub fn b_max_norm(&self) -> T {
        let dd = self.dim * self.dim;
        self.b.chunks(dd).map(|m| m.iter().map(|x| *x * *x).sum::<T>().sqrt()).fold(T::zero(), T::max)
    }
}

/// `Λ V` (free-function form of [`GaugeOperator::apply`]).
pub fn apply_gauge<T: Real>(op: &GaugeOperator<T>, state: &MapState<T>, v: &Section<T>) -> Result<Section<T>> {
    op.apply(state, v)
}

/// `e_n V = cos(2π n x / L) V(x)`, tangent whenever `V` is.
pub fn modulated_probe<T: Real>(state: &MapState<T>, v: &Section<T>, n: usize) -> Result<Section<T>> {
    v.check_base(state)?;
    let metric = state.metric();
    let d = state.ambient_dim();
    let kappa = T::TAU() * T::from_usize_lossy(n) / metric.lengths()[0];
    let vectors = map_nodes(state.node_count(), d, |node, o| {
        let c = (kappa * metric.coords(node)[0]).cos();
        for (oc, &vc) in o.iter_mut().zip(v.vector(node)) {
            *oc = c * vc;
        }
    });
    Ok(Section::trusted(state, vectors))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EliminationRow<T> {
    pub mode: usize,
    /// `‖[Λ(L + P₁) - LΛ] e_n V‖ / ‖e_n V‖`.
    pub residual: T,
    /// `‖P₁ e_n V‖ / ‖e_n V‖`.
    pub first_order: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationReport<T> {
    /// `B ≡ 0`: the residual is trivially bounded.
    pub degenerate: bool,
    pub rows: Vec<EliminationRow<T>>,
}

impl<T: Real> EliminationReport<T> {
    /// `max_n r(n) / max_n ‖P₁ e_n‖`; zero in the degenerate case.
    pub fn elimination_ratio(&self) -> T {
        let r = self.rows.iter().map(|row| row.residual).fold(T::zero(), T::max);
        let p = self.rows.iter().map(|row| row.first_order).fold(T::zero(), T::max);
        if p > T::zero() {
            r / p
        } else {
            T::zero()
        }
    }
}

/// Mode sweep of the first-order-term elimination.
pub fn elimination_residual<T: Real>(
    op: &GaugeOperator<T>,
    state: &MapState<T>,
    v: &Section<T>,
    modes: &[usize],
) -> Result<EliminationReport<T>> {
    op.check(state, v)?;
    let metric = state.metric();
    let d = state.ambient_dim();
    let mut rows = Vec::with_capacity(modes.len());
    for &n in modes {
        let e = modulated_probe(state, v, n)?;
        let ev = e.vectors();
        let size = inner_values(metric, ev, ev, d).sqrt();
        if !(size > T::zero()) {
            return invalid("probe section vanishes");
        }
        let lv = op.principal_values(state, ev);
        let pv = op.first_order_values(state, ev);
        let sum: Vec<T> = lv.iter().zip(&pv).map(|(&a, &b)| a + b).collect();
        let lam_sum = op.lambda_tilde_values(state, &sum);
        let lam_e = op.lambda_tilde_values(state, ev);
        let l_lam_e = op.principal_values(state, &lam_e);
        // Λ(L + P₁)e - LΛe = P₁e - Λ̃(L + P₁)e + LΛ̃e
        let res: Vec<T> = (0..ev.len()).map(|i| pv[i] - lam_sum[i] + l_lam_e[i]).collect();
        rows.push(EliminationRow {
            mode: n,
            residual: inner_values(metric, &res, &res, d).sqrt() / size,
            first_order: inner_values(metric, &pv, &pv, d).sqrt() / size,
        });
    }
    Ok(EliminationReport { degenerate: op.degenerate, rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderRow<T> {
    pub mode: usize,
    /// `‖Λ̃ e_n V‖ / ‖e_n V‖`.
    pub gain: T,
    /// `‖Λ̃² e_n V‖ / ‖e_n V‖`.
    pub gain_sq: T,
}

/// Gains of `Λ̃` and `Λ̃²` on modulated probes.
pub fn order_sweep<T: Real>(
    op: &GaugeOperator<T>,
    state: &MapState<T>,
    v: &Section<T>,
    modes: &[usize],
) -> Result<Vec<OrderRow<T>>> {
    op.check(state, v)?;
    let metric = state.metric();
    let d = state.ambient_dim();
    modes
        .iter()
        .map(|&n| {
            let e = modulated_probe(state, v, n)?;
            let size = inner_values(metric, e.vectors(), e.vectors(), d).sqrt();
            let l1 = op.lambda_tilde_values(state, e.vectors());
            let l2 = op.lambda_tilde_values(state, &l1);
            Ok(OrderRow {
                mode: n,
                gain: inner_values(metric, &l1, &l1, d).sqrt() / size,
                gain_sq: inner_values(metric, &l2, &l2, d).sqrt() / size,
            })
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope<T: Real>(xs: &[T], ys: &[T]) -> Result<T> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return invalid("slope fit needs at least two matching samples");
    }
    if xs.iter().chain(ys).any(|v| !(*v > T::zero())) {
        return invalid("slope fit needs positive samples");
    }
    let n = T::from_usize_lossy(xs.len());
    let lx: Vec<T> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<T> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().copied().sum::<T>() / n;
    let my = ly.iter().copied().sum::<T>() / n;
    let sxy: T = lx.iter().zip(&ly).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let sxx: T = lx.iter().map(|&x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceRow<T> {
    /// Gauged `𝒩_k(u)`.
    pub nk: T,
    /// `(Σ_{l ≤ k} ‖Δ̃^l u‖²)^{1/2}`.
    pub plain: T,
    /// `plain / nk`, absent when both vanish.
    pub ratio: Option<T>,
}

/// `𝒩_k` against the ungauged hierarchy for each state, each with its own gauge.
pub fn norm_equivalence_report<T: Real>(states: &[MapState<T>], k: usize) -> Result<Vec<EquivalenceRow<T>>> {
    states
        .iter()
        .map(|s| {
            let op = build_gauge(s, k)?;
            let nk = norm_nk(s, Some(&op), k)?;
            let plain = laplacian_hierarchy_norm(s, k)?;
            let ratio = if nk > T::zero() { Some(plain / nk) } else { None };
            Ok(EquivalenceRow { nk, plain, ratio })
        })
        .collect()
}

/// `max ratio / min ratio` over rows with a defined ratio.
pub fn equivalence_spread<T: Real>(rows: &[EquivalenceRow<T>]) -> Option<T> {
    let rs: Vec<T> = rows.iter().filter_map(|r| r.ratio).collect();
    if rs.is_empty() {
        return None;
    }
    let hi = rs.iter().copied().fold(T::neg_infinity(), T::max);
    let lo = rs.iter().copied().fold(T::infinity(), T::min);
    Some(hi / lo)
}
