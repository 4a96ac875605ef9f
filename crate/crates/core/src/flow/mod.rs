//! Time integration of `u_t = J_u τ(u)` and of the regularized `u_t = -ε Δ̃ τ(u) + J_u τ(u)`.
//!
//! Three schemes work on the ambient representation `v = w ∘ u`:
//! projected RK4 (stages and result mapped through `π`), a first-order IMEX step that
//! treats `-εΔ²` exactly through `E(t) = e^{-εt|κ|⁴}`, and a Picard iteration of the
//! discretized Duhamel formula.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, GeoflowError, Result};
use crate::gauge::build_gauge;
use crate::pullback::{
    energy, map_nodes, norm_nk, tension_values, tilde_laplacian_values, weighted_l2, MapState, Section,
    MAX_LAPLACIAN_DEPTH,
};
use crate::scalar::Real;
use crate::source::{sobolev_norm, GridFunction, SourceMetric};
use crate::target::EmbeddedTarget;

/// Maximum number of times a step is split in half after leaving the tube.
pub const MAX_HALVINGS: usize = 5;
/// Maximum Picard iterations in [`duhamel_solve`].
pub const MAX_PICARD_ITERATIONS: usize = 50;
/// Picard stopping threshold on the max-norm difference of successive iterates.
pub const PICARD_TOLERANCE: f64 = 1e-10;
/// Sobolev order of the ball `‖v(t)‖_{H^l} ≤ 2‖v(0)‖_{H^l}` checked by [`duhamel_solve`].
pub const PICARD_BALL_ORDER: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Rk4Project,
    ImexSpectral,
    Duhamel,
}

impl Scheme {
    pub fn token(self) -> &'static str {
        match self {
            Scheme::Rk4Project => "rk4-project",
            Scheme::ImexSpectral => "imex-spectral",
            Scheme::Duhamel => "duhamel",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Scheme {
    type Err = GeoflowError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4-project" => Ok(Scheme::Rk4Project),
            "imex-spectral" => Ok(Scheme::ImexSpectral),
            "duhamel" => Ok(Scheme::Duhamel),
            other => invalid(format!("unknown scheme '{other}' (expected rk4-project, imex-spectral or duhamel)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig<T> {
    pub epsilon: T,
    pub dt: T,
    pub t_final: T,
    pub scheme: Scheme,
    /// Emit a diagnostics record every this many steps (and at the last step).
    pub diagnostics_stride: usize,
    /// Sobolev depth of `𝒩_k`.
    pub k: usize,
    /// Seed for randomized initial data; recorded, not used by the integrators.
    pub seed: u64,
    /// Keep a copy of the state every this many steps.
    pub snapshot_every: Option<usize>,
}

impl<T: Real> FlowConfig<T> {
    pub fn new(epsilon: T, dt: T, t_final: T, scheme: Scheme) -> Self {
        Self {
            epsilon,
            dt,
            t_final,
            scheme,
            diagnostics_stride: 1,
            k: crate::pullback::DEFAULT_K,
            seed: 0,
            snapshot_every: None,
        }
    }

    pub fn validate(&self, metric: &SourceMetric<T>) -> Result<()> {
        if !(self.epsilon >= T::zero() && self.epsilon <= T::one()) {
            return invalid("epsilon must lie in [0, 1]");
        }
        if !(self.dt > T::zero() && self.dt.is_finite()) {
            return invalid("dt must be positive");
        }
        if !(self.t_final >= T::zero() && self.t_final.is_finite()) {
            return invalid("t_final must be non-negative");
        }
        if self.diagnostics_stride == 0 {
            return invalid("diagnostics stride must be at least 1");
        }
        if self.snapshot_every == Some(0) {
            return invalid("snapshot interval must be at least 1");
        }
        if self.k == 0 || self.k > MAX_LAPLACIAN_DEPTH {
            return invalid(format!("k must lie in 1..={MAX_LAPLACIAN_DEPTH}"));
        }
        if self.epsilon == T::zero() && self.scheme != Scheme::Rk4Project {
            return invalid("epsilon = 0 requires the rk4-project scheme");
        }
        if self.scheme != Scheme::Rk4Project {
            metric.spectral()?;
        }
        Ok(())
    }

    /// Number of steps and the step actually used so that `steps · dt = t_final`.
    pub fn step_plan(&self) -> (usize, T) {
        if self.t_final == T::zero() {
            return (0, self.dt);
        }
        let ratio = (self.t_final / self.dt).as_f64();
        let steps = ((ratio - 1e-9).ceil() as usize).max(1);
        (steps, self.t_final / T::from_usize_lossy(steps))
    }
}

/// `J_u τ(u)`.
pub fn schrodinger_rhs<T: Real>(state: &MapState<T>) -> Section<T> {
    Section::trusted(state, rhs_values(state, T::zero()))
}

/// `-ε Δ̃ τ(u) + J_u τ(u)` for `ε ∈ (0, 1]`.
pub fn regularized_rhs<T: Real>(state: &MapState<T>, epsilon: T) -> Result<Section<T>> {
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return invalid("epsilon must lie in (0, 1]");
    }
    Ok(Section::trusted(state, rhs_values(state, epsilon)))
}

pub(crate) fn rhs_values<T: Real>(state: &MapState<T>, epsilon: T) -> Vec<T> {
    let tau = tension_values(state);
    let mut out = state.apply_j_all(&tau);
    if epsilon > T::zero() {
        let lt = tilde_laplacian_values(state, &tau);
        for (o, l) in out.iter_mut().zip(lt) {
            *o = *o - epsilon * l;
        }
    }
    out
}

/// Maps an ambient configuration through `π`, failing if any node leaves the tube.
/// Returns the projected state and the largest pre-projection distance.
fn project_checked<T: Real>(like: &MapState<T>, q: &[T], time: T) -> Result<(MapState<T>, T)> {
    let target = like.target();
    let d = like.ambient_dim();
    let delta = target.tube_radius();
    let mut worst = T::zero();
    for p in q.chunks(d) {
        let dist = target.distance(p);
        if !(dist < delta) {
            return Err(GeoflowError::OutsideTube { distance: dist.as_f64(), radius: delta.as_f64() });
        }
        worst = worst.max(dist);
    }
    let mut out = vec![T::zero(); q.len()];
    for (o, p) in out.chunks_mut(d).zip(q.chunks(d)) {
        target.nearest_unchecked(p, o)?;
    }
    Ok((like.trusted_with(out, time), worst))
}

fn rk4_step<T: Real>(state: &MapState<T>, dt: T, epsilon: T) -> Result<(MapState<T>, T)> {
    let v = state.points();
    let half = T::lit(0.5) * dt;
    let t0 = state.time();
    let stage = |k: &[T], c: T| -> Vec<T> { v.iter().zip(k).map(|(&a, &b)| a + c * b).collect() };
    let k1 = rhs_values(state, epsilon);
    let (s2, _) = project_checked(state, &stage(&k1, half), t0 + half)?;
    let k2 = rhs_values(&s2, epsilon);
    let (s3, _) = project_checked(state, &stage(&k2, half), t0 + half)?;
    let k3 = rhs_values(&s3, epsilon);
    let (s4, _) = project_checked(state, &stage(&k3, dt), t0 + dt)?;
    let k4 = rhs_values(&s4, epsilon);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let q: Vec<T> = (0..v.len()).map(|i| v[i] + sixth * (k1[i] + two * (k2[i] + k3[i]) + k4[i])).collect();
    project_checked(state, &q, t0 + dt)
}

/// One classical RK4 step of the projected flow; `epsilon = 0` integrates the Schrödinger map flow.
pub fn step_rk4_project<T: Real>(state: &MapState<T>, dt: T, epsilon: T) -> Result<MapState<T>> {
    if !(dt.is_finite() && dt != T::zero()) {
        return invalid("dt must be finite and non-zero");
    }
    if !(epsilon >= T::zero() && epsilon <= T::one()) {
        return invalid("epsilon must lie in [0, 1]");
    }
    Ok(rk4_step(state, dt, epsilon)?.0)
}

/// `F̂(v) = -εΔ̃τ + Jτ + εΔ²v`, the part of the regularized flow left explicit.
fn imex_remainder<T: Real>(state: &MapState<T>, epsilon: T) -> Result<Vec<T>> {
    let spectral = state.metric().spectral()?;
    let mut f = rhs_values(state, epsilon);
    let bl = spectral.bilaplacian(state.points(), state.ambient_dim());
    for (o, b) in f.iter_mut().zip(bl) {
        *o = *o + epsilon * b;
    }
    Ok(f)
}

fn imex_step<T: Real>(state: &MapState<T>, dt: T, epsilon: T) -> Result<(MapState<T>, T)> {
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return invalid("the IMEX scheme needs epsilon in (0, 1]");
    }
    let spectral = state.metric().spectral()?;
    let f = imex_remainder(state, epsilon)?;
    let w: Vec<T> = state.points().iter().zip(&f).map(|(&v, &fi)| v + dt * fi).collect();
    let q = spectral.biharmonic_semigroup(&w, state.ambient_dim(), epsilon, dt);
    project_checked(state, &q, state.time() + dt)
}

/// `v⁺ = π(E(dt)[v + dt F̂(v)])`; flat power-of-two grids only.
pub fn step_imex_spectral<T: Real>(state: &MapState<T>, dt: T, epsilon: T) -> Result<MapState<T>> {
    if !(dt > T::zero() && dt.is_finite()) {
        return invalid("dt must be positive");
    }
    Ok(imex_step(state, dt, epsilon)?.0)
}

/// `E(t) f`, mode factor `e^{-εt|κ|⁴}`.
pub fn heat_semigroup<T: Real>(
    metric: &SourceMetric<T>,
    epsilon: T,
    t: T,
    f: &GridFunction<T>,
) -> Result<GridFunction<T>> {
    if !(t >= T::zero()) {
        return invalid("semigroup time must be non-negative");
    }
    if !(epsilon >= T::zero()) {
        return invalid("epsilon must be non-negative");
    }
    if f.node_count() != metric.node_count() {
        return invalid("grid function does not match the metric grid");
    }
    let spectral = metric.spectral()?;
    if t == T::zero() {
        return Ok(f.clone());
    }
    GridFunction::new(f.comps(), spectral.biharmonic_semigroup(f.values(), f.comps(), epsilon, t))
}

/// `max t^{s/4} |n|^s e^{-εt n⁴}` over `t ∈ t_grid` and `1 ≤ |n| ≤ mode_cap`.
///
/// The zero mode is excluded: there `E(t)` is the identity and no smoothing takes place.
pub fn smoothing_constant<T: Real>(epsilon: T, s_gain: T, mode_cap: usize, t_grid: &[T]) -> Result<T> {
    if !(epsilon > T::zero() && s_gain > T::zero()) || mode_cap == 0 || t_grid.is_empty() {
        return invalid("smoothing constant needs positive epsilon, gain, mode cap and a non-empty t grid");
    }
    if t_grid.iter().any(|t| !(*t > T::zero())) {
        return invalid("t grid must be positive");
    }
    let quarter = s_gain / T::lit(4.0);
    let mut best = T::zero();
    for &t in t_grid {
        for n in 1..=mode_cap {
            let nn = T::from_usize_lossy(n);
            let v = t.powf(quarter) * nn.powf(s_gain) * (-epsilon * t * nn.powi(4)).exp();
            best = best.max(v);
        }
    }
    Ok(best)
}

/// `sup_{a>0} a^{s/4} e^{-εa}·` in closed form: `(s/(4ε))^{s/4} e^{-s/4}`.
pub fn smoothing_envelope<T: Real>(epsilon: T, s_gain: T) -> T {
    let q = s_gain / T::lit(4.0);
    (q / epsilon).powf(q) * (-q).exp()
}

/// `points` values spaced logarithmically over `[t_min, t_max]`.
pub fn log_time_grid<T: Real>(t_min: T, t_max: T, points: usize) -> Result<Vec<T>> {
    if !(t_min > T::zero() && t_max > t_min) || points < 2 {
        return invalid("log grid needs 0 < t_min < t_max and at least two points");
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    let last = T::from_usize_lossy(points - 1);
    Ok((0..points).map(|i| (a + (b - a) * T::from_usize_lossy(i) / last).exp()).collect())
}

/// Largest explicit RK4 step expected to be stable: `c / (λ₂ + ε λ₄)` with the
/// grid's largest second- and fourth-order eigenvalue estimates `λ₂ ≈ g^{ii}/h²`.
pub fn rk4_stable_dt<T: Real>(metric: &SourceMetric<T>, epsilon: T) -> T {
    let mut lam = T::zero();
    for node in 0..metric.node_count() {
        let gi = metric.g_inv(node);
        let mut s = T::zero();
        for i in 0..metric.dim() {
            let h = metric.step(i);
            s = s + gi[3 * i] / (h * h);
        }
        lam = lam.max(s);
    }
    T::lit(2.5) / (lam + epsilon * lam * lam)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsRecord<T> {
    pub t: T,
    pub energy: T,
    pub nk: T,
    /// Largest distance from the target before projection since the previous record.
    pub tube_defect_pre: T,
    /// Step halvings since the previous record.
    pub step_rejections: usize,
}

/// Fitted `C` in `𝒩_k(u(t)) ≤ 𝒩_k(u₀) e^{Ct}` and the horizon `log 2 / C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GronwallFit<T> {
    pub rate: T,
    pub horizon: Option<T>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord<T: Real> {
    pub scheme: Scheme,
    pub dt_used: T,
    pub steps_taken: usize,
    pub diagnostics: Vec<DiagnosticsRecord<T>>,
    pub final_state: MapState<T>,
    /// `(step index, state)` pairs.
    pub snapshots: Vec<(usize, MapState<T>)>,
    pub gronwall: Option<GronwallFit<T>>,
    pub picard_iterations: Option<usize>,
    /// Set when the run stopped before `t_final`.
    pub abort: Option<GeoflowError>,
}

impl<T: Real> TrajectoryRecord<T> {
    pub fn times(&self) -> Vec<T> {
        self.diagnostics.iter().map(|r| r.t).collect()
    }

    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }
}

struct Recorder<T: Real> {
    k: usize,
    stride: usize,
    snapshot_every: Option<usize>,
    diagnostics: Vec<DiagnosticsRecord<T>>,
    snapshots: Vec<(usize, MapState<T>)>,
    pending_defect: T,
    pending_rejections: usize,
}

impl<T: Real> Recorder<T> {
    fn new(config: &FlowConfig<T>) -> Self {
        Self {
            k: config.k,
            stride: config.diagnostics_stride,
            snapshot_every: config.snapshot_every,
            diagnostics: Vec::new(),
            snapshots: Vec::new(),
            pending_defect: T::zero(),
            pending_rejections: 0,
        }
    }

    fn record(&mut self, state: &MapState<T>) -> Result<()> {
        let gauge = if state.target().is_kahler() { None } else { build_gauge(state, self.k).ok() };
        let nk = norm_nk(state, gauge.as_ref(), self.k)?;
        self.diagnostics.push(DiagnosticsRecord {
            t: state.time(),
            energy: energy(state),
            nk,
            tube_defect_pre: self.pending_defect,
            step_rejections: self.pending_rejections,
        });
        self.pending_defect = T::zero();
        self.pending_rejections = 0;
        Ok(())
    }

    fn observe(&mut self, step: usize, last: bool, state: &MapState<T>) -> Result<()> {
        if step % self.stride == 0 || last {
            self.record(state)?;
        }
        if let Some(every) = self.snapshot_every {
            if step % every == 0 || last {
                self.snapshots.push((step, state.clone()));
            }
        }
        Ok(())
    }

    fn gronwall(&self) -> Option<GronwallFit<T>> {
        let first = self.diagnostics.first()?;
        if !(first.nk > T::zero()) {
            return None;
        }
        let mut rate = T::zero();
        for r in &self.diagnostics[1..] {
            if r.t > first.t && r.nk > T::zero() {
                rate = rate.max((r.nk / first.nk).ln() / (r.t - first.t));
            }
        }
        let horizon = if rate > T::zero() { Some(T::LN_2() / rate) } else { None };
        Some(GronwallFit { rate, horizon })
    }

    fn finish(self, scheme: Scheme, dt: T, steps: usize, state: MapState<T>, picard: Option<usize>, abort: Option<GeoflowError>) -> TrajectoryRecord<T> {
        let gronwall = self.gronwall();
        TrajectoryRecord {
            scheme,
            dt_used: dt,
            steps_taken: steps,
            diagnostics: self.diagnostics,
            final_state: state,
            snapshots: self.snapshots,
            gronwall,
            picard_iterations: picard,
            abort,
        }
    }
}

fn advance<T: Real>(
    state: &MapState<T>,
    dt: T,
    epsilon: T,
    scheme: Scheme,
    depth: usize,
    rec: &mut Recorder<T>,
) -> Result<MapState<T>> {
    let attempt = match scheme {
        Scheme::ImexSpectral => imex_step(state, dt, epsilon),
        _ => rk4_step(state, dt, epsilon),
    };
    match attempt {
        Ok((next, defect)) => {
            rec.pending_defect = rec.pending_defect.max(defect);
            Ok(next)
        }
        Err(GeoflowError::OutsideTube { .. }) if depth < MAX_HALVINGS => {
            rec.pending_rejections += 1;
            let half = T::lit(0.5) * dt;
            let mid = advance(state, half, epsilon, scheme, depth + 1, rec)?;
            advance(&mid, half, epsilon, scheme, depth + 1, rec)
        }
        Err(e) => Err(e),
    }
}

/// Runs the configured scheme to `t_final`.
///
/// Configuration errors are returned as `Err`; numerical failures (tube exit after
/// [`MAX_HALVINGS`] halvings, Picard non-contraction) yield a record with `abort` set
/// and the diagnostics gathered so far.
pub fn evolve<T: Real>(u0: &MapState<T>, config: &FlowConfig<T>) -> Result<TrajectoryRecord<T>> {
    config.validate(u0.metric())?;
    if config.scheme == Scheme::Duhamel {
        return match duhamel_solve(u0, config) {
            Ok(r) => Ok(r),
            Err(e @ (GeoflowError::NoContraction { .. } | GeoflowError::OutsideTube { .. })) => {
                let mut rec = Recorder::new(config);
                rec.observe(0, false, u0)?;
                Ok(rec.finish(config.scheme, config.step_plan().1, 0, u0.clone(), None, Some(e)))
            }
            Err(e) => Err(e),
        };
    }
    let (steps, dt) = config.step_plan();
    let mut rec = Recorder::new(config);
    let mut state = u0.clone();
    let t0 = u0.time();
    rec.observe(0, false, &state)?;
    for step in 1..=steps {
        match advance(&state, dt, config.epsilon, config.scheme, 0, &mut rec) {
            Ok(next) => {
                let t = t0 + T::from_usize_lossy(step) * dt;
                state = next.trusted_with(next.points().to_vec(), t);
                rec.observe(step, step == steps, &state)?;
            }
            Err(e) => {
                if rec.diagnostics.last().map(|r| r.t) != Some(state.time()) {
                    rec.record(&state)?;
                }
                return Ok(rec.finish(config.scheme, dt, step - 1, state, None, Some(e)));
            }
        }
    }
    Ok(rec.finish(config.scheme, dt, steps, state, None, None))
}

/// `F(π(q)) = -εΔ̃τ + Jτ + εΔ²` evaluated at `π(q)`; also returns `π(q)`.
fn projected_forcing<T: Real>(like: &MapState<T>, q: &[T], epsilon: T) -> Result<(MapState<T>, Vec<T>)> {
    let (p, _) = project_checked(like, q, like.time())?;
    let f = imex_remainder(&p, epsilon)?;
    Ok((p, f))
}

/// Picard iteration of `v(t_n) = E(t_n) v₀ + Σ_{j<n} dt E(t_n - t_j) F(π(v(t_j)))`.
///
/// The ambient trajectory is not projected; reported states are `π(v(t_n))`.
pub fn duhamel_solve<T: Real>(u0: &MapState<T>, config: &FlowConfig<T>) -> Result<TrajectoryRecord<T>> {
    config.validate(u0.metric())?;
    if !(config.epsilon > T::zero()) {
        return invalid("the Duhamel solver needs epsilon > 0");
    }
    let metric = u0.metric().clone();
    let spectral = metric.spectral()?;
    let d = u0.ambient_dim();
    let (steps, dt) = config.step_plan();
    let eps = config.epsilon;
    let w0 = u0.points().to_vec();
    let ball = T::lit(2.0) * sobolev_norm(&metric, &GridFunction::new(d, w0.clone())?, PICARD_BALL_ORDER)?;
    let mut traj: Vec<Vec<T>> = vec![w0.clone(); steps + 1];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_PICARD_ITERATIONS {
        iterations += 1;
        let mut next = Vec::with_capacity(steps + 1);
        next.push(w0.clone());
        let mut w = w0.clone();
        for v in &traj[..steps] {
            let (_, f) = projected_forcing(u0, v, eps)?;
            let y: Vec<T> = w.iter().zip(&f).map(|(&a, &b)| a + dt * b).collect();
            w = spectral.biharmonic_semigroup(&y, d, eps, dt);
            next.push(w.clone());
        }
        for v in &next {
            let size = sobolev_norm(&metric, &GridFunction::new(d, v.clone())?, PICARD_BALL_ORDER)?;
            if !(size <= ball) {
                return Err(GeoflowError::NoContraction {
                    iterations,
                    reason: format!("iterate left the ball ‖v‖_H{PICARD_BALL_ORDER} ≤ {:.3e}", ball.as_f64()),
                });
            }
        }
        let diff = next
            .iter()
            .zip(&traj)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (x - y).abs()))
            .fold(T::zero(), T::max);
        traj = next;
        if diff < T::lit(PICARD_TOLERANCE) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(GeoflowError::NoContraction {
            iterations,
            reason: format!("successive iterates still differ by more than {PICARD_TOLERANCE:e}"),
        });
    }
    let mut rec = Recorder::new(config);
    let t0 = u0.time();
    let mut last = u0.clone();
    for (n, v) in traj.iter().enumerate() {
        let t = t0 + T::from_usize_lossy(n) * dt;
        let (p, defect) = project_checked(u0, v, t)?;
        rec.pending_defect = rec.pending_defect.max(defect);
        rec.observe(n, n == steps && n > 0, &p)?;
        last = p;
    }
    Ok(rec.finish(Scheme::Duhamel, dt, steps, last, Some(iterations), None))
}

/// `‖ρ(v_n)‖_{L²}` along the unprojected flow `v' = -εΔ²v + F(π(v))`, discretized like
/// [`duhamel_solve`]: `v_{n+1} = E(dt)(v_n + dt F(π(v_n)))`. Entry 0 is the initial value.
pub fn auxiliary_flow<T: Real>(
    metric: Arc<SourceMetric<T>>,
    target: EmbeddedTarget<T>,
    v0: &[T],
    epsilon: T,
    dt: T,
    steps: usize,
) -> Result<Vec<T>> {
    if !(epsilon > T::zero() && epsilon <= T::one()) {
        return invalid("epsilon must lie in (0, 1]");
    }
    if !(dt > T::zero()) {
        return invalid("dt must be positive");
    }
    let spectral = metric.spectral()?;
    let d = target.ambient_dim();
    if v0.len() != metric.node_count() * d {
        return invalid("initial data does not match the grid");
    }
    let like = MapState::trusted(metric.clone(), target, vec![T::zero(); v0.len()], T::zero());
    let mut v = v0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        let (p, f) = projected_forcing(&like, &v, epsilon)?;
        out.push(weighted_l2(&metric, &v, p.points(), d));
        if n == steps {
            break;
        }
        let y: Vec<T> = v.iter().zip(&f).map(|(&a, &b)| a + dt * b).collect();
        v = spectral.biharmonic_semigroup(&y, d, epsilon, dt);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationRow<T> {
    pub epsilon: T,
    /// `‖u_ε(T) - u₀(T)‖_{L²}`.
    pub gap: T,
}

/// Runs every `ε` of `eps_list` and the `ε = 0` reference (RK4) concurrently.
pub fn epsilon_continuation<T: Real>(
    u0: &MapState<T>,
    eps_list: &[T],
    config: &FlowConfig<T>,
) -> Result<Vec<ContinuationRow<T>>> {
    if eps_list.is_empty() {
        return invalid("epsilon list is empty");
    }
    if eps_list.iter().any(|e| !(*e > T::zero() && *e <= T::one())) {
        return invalid("every epsilon must lie in (0, 1]");
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("epsilon list must be strictly decreasing");
    }
    let mut configs = vec![FlowConfig { epsilon: T::zero(), scheme: Scheme::Rk4Project, ..*config }];
    configs.extend(eps_list.iter().map(|&e| FlowConfig { epsilon: e, ..*config }));
    for c in &configs {
        c.validate(u0.metric())?;
    }
    let runs: Vec<Result<TrajectoryRecord<T>>> = configs.par_iter().map(|c| evolve(u0, c)).collect();
    let mut finals = Vec::with_capacity(runs.len());
    for r in runs {
        let r = r?;
        if let Some(e) = r.abort {
            return Err(e);
        }
        finals.push(r.final_state);
    }
    let reference = &finals[0];
    eps_list
        .iter()
        .zip(&finals[1..])
        .map(|(&epsilon, s)| Ok(ContinuationRow { epsilon, gap: s.l2_distance(reference)? }))
        .collect()
}

/// Pointwise `h(J τ, τ)` summed with the volume form; zero by skewness of `J`.
pub fn skewness_defect<T: Real>(state: &MapState<T>) -> T {
    let tau = tension_values(state);
    let jt = state.apply_j_all(&tau);
    let d = state.ambient_dim();
    let prod = map_nodes(state.node_count(), 1, |node, o| {
        let a = &tau[node * d..(node + 1) * d];
        let b = &jt[node * d..(node + 1) * d];
        o[0] = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    });
    (0..state.node_count()).fold(T::zero(), |s, n| s + prod[n] * state.metric().weight(n))
}
