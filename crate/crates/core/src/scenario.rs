//! Initial data `u₀` for the benchmark runs.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::pullback::MapState;
use crate::scalar::{dot, norm, Real};
use crate::source::SourceMetric;
use crate::target::{EmbeddedTarget, TargetKind};

/// Sup-norm budget of the ambient noise in `RandomSmooth`, before division by `√d`.
const NOISE_BUDGET: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    /// The base point of the target at every node.
    Constant,
    /// `(sinθ cos kx, sinθ sin kx, cosθ)` on sphere2.
    SpinWave { theta: f64, k: i64 },
    /// Base point plus band-limited ambient noise, mapped through `π`.
    RandomSmooth { seed: u64, band: usize },
    /// The great circle `(cos x, sin x, 0)` on sphere2.
    EquatorCircle,
    /// A seeded non-planar loop `cos α (cos φ e_a + sin φ e_b) + sin α (cos 2φ e_c + sin 2φ e_d)` on sphere6.
    S6HopfLike { seed: u64 },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Constant => "constant",
            Scenario::SpinWave { .. } => "spin-wave",
            Scenario::RandomSmooth { .. } => "random-smooth",
            Scenario::EquatorCircle => "equator-circle",
            Scenario::S6HopfLike { .. } => "s6-hopf-like",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::SpinWave { theta, k } => write!(f, "spin-wave(theta={theta}, k={k})"),
            Scenario::RandomSmooth { seed, band } => write!(f, "random-smooth(seed={seed}, band={band})"),
            Scenario::S6HopfLike { seed } => write!(f, "s6-hopf-like(seed={seed})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Base point used by the constant and random scenarios.
pub fn base_point<T: Real>(target: &EmbeddedTarget<T>) -> Vec<T> {
    let mut p = vec![T::zero(); target.ambient_dim()];
    match target.kind() {
        TargetKind::Sphere2 | TargetKind::Sphere6 => p[0] = T::one(),
        TargetKind::FlatTorus2 => {
            let r = target.radii();
            p[0] = r[0];
            p[2] = r[1];
        }
    }
    p
}

/// Band-limited ambient field with per-component coefficient `ℓ¹` norm `amplitude`.
///
/// The field is a fixed continuous function of the source coordinates: equal seeds give
/// the same function on every grid.
pub fn random_ambient_field<T: Real>(metric: &SourceMetric<T>, comps: usize, seed: u64, band: usize, amplitude: T) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = metric.dim();
    let b = band as i64;
    let modes: Vec<[i64; 2]> = (-b..=b)
        .flat_map(|n0| (-b..=b).map(move |n1| [n0, n1]))
        .filter(|n| (dim == 2 || n[1] == 0) && (n[0] > 0 || (n[0] == 0 && n[1] > 0)))
        .collect();
    // coefficient (cos, sin) pairs per component and mode
    let mut coef: Vec<[f64; 2]> = (0..comps * modes.len())
        .map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    for c in 0..comps {
        let block = &mut coef[c * modes.len()..(c + 1) * modes.len()];
        let l1: f64 = block.iter().map(|p| p[0].abs() + p[1].abs()).sum();
        if l1 > 0.0 {
            block.iter_mut().for_each(|p| {
                p[0] /= l1;
                p[1] /= l1;
            });
        }
    }
    let lengths = metric.lengths();
    let mut out = vec![T::zero(); metric.node_count() * comps];
    for node in 0..metric.node_count() {
        let x = metric.coords(node);
        for (m, n) in modes.iter().enumerate() {
            let mut phase = T::TAU() * T::from_i64(n[0]).unwrap() * x[0] / lengths[0];
            if dim == 2 {
                phase = phase + T::TAU() * T::from_i64(n[1]).unwrap() * x[1] / lengths[1];
            }
            let (s, co) = phase.sin_cos();
            for c in 0..comps {
                let [a, bb] = coef[c * modes.len() + m];
                out[node * comps + c] = out[node * comps + c] + amplitude * (T::lit(a) * co + T::lit(bb) * s);
            }
        }
    }
    out
}

fn orthonormal_frame(seed: u64, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for e in &frame {
            let c = dot(&v, e);
            v.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
        }
        let r = norm(&v);
        if r > 1e-6 {
            frame.push(v.into_iter().map(|x| x / r).collect());
        }
    }
    frame
}

/// Builds the on-manifold initial state at time 0.
pub fn build_initial_data<T: Real>(
    scenario: &Scenario,
    metric: Arc<SourceMetric<T>>,
    target: EmbeddedTarget<T>,
) -> Result<MapState<T>> {
    let d = target.ambient_dim();
    let l0 = metric.lengths()[0];
    match *scenario {
        Scenario::Constant => {
            let p = base_point(&target);
            MapState::from_fn(metric, target, |_| p.clone())
        }
        Scenario::SpinWave { theta, k } => {
            if target.kind() != TargetKind::Sphere2 {
                return invalid("the spin-wave scenario requires the s2 target");
            }
            let (st, ct) = (T::lit(theta.sin()), T::lit(theta.cos()));
            let kk = T::TAU() * T::from_i64(k).unwrap() / l0;
            MapState::from_fn(metric, target, |x| {
                let (s, c) = (kk * x[0]).sin_cos();
                vec![st * c, st * s, ct]
            })
        }
        Scenario::EquatorCircle => {
            if target.kind() != TargetKind::Sphere2 {
                return invalid("the equator-circle scenario requires the s2 target");
            }
            let kk = T::TAU() / l0;
            MapState::from_fn(metric, target, |x| {
                let (s, c) = (kk * x[0]).sin_cos();
                vec![c, s, T::zero()]
            })
        }
        Scenario::RandomSmooth { seed, band } => {
            if band == 0 {
                return invalid("random-smooth needs band >= 1");
            }
            let r = target.radii();
            let scale = match target.kind() {
                TargetKind::FlatTorus2 => r[0].min(r[1]),
                _ => T::one(),
            };
            let amp = T::lit(NOISE_BUDGET) * scale / T::from_usize_lossy(d).sqrt();
            let noise = random_ambient_field(&metric, d, seed, band, amp);
            let p0 = base_point(&target);
            let mut points = vec![T::zero(); noise.len()];
            let mut q = vec![T::zero(); d];
            for node in 0..metric.node_count() {
                for c in 0..d {
                    q[c] = p0[c] + noise[node * d + c];
                }
                target.nearest_unchecked(&q, &mut points[node * d..(node + 1) * d])?;
            }
            MapState::new(metric, target, points, T::zero())
        }
        Scenario::S6HopfLike { seed } => {
            if target.kind() != TargetKind::Sphere6 {
                return invalid("the s6-hopf-like scenario requires the s6 target");
            }
            let f = orthonormal_frame(seed, 7, 4);
            let e: Vec<Vec<T>> = f.iter().map(|v| v.iter().map(|&x| T::lit(x)).collect()).collect();
            let (sa, ca) = T::FRAC_PI_4().sin_cos();
            let kk = T::TAU() / l0;
            let two = T::lit(2.0);
            MapState::from_fn(metric, target, |x| {
                let phi = kk * x[0];
                let (s1, c1) = phi.sin_cos();
                let (s2, c2) = (two * phi).sin_cos();
                let mut p: Vec<T> = (0..7)
                    .map(|i| ca * (c1 * e[0][i] + s1 * e[1][i]) + sa * (c2 * e[2][i] + s2 * e[3][i]))
                    .collect();
                // remove rounding so the point passes the on-manifold check
                let r = norm(&p);
                p.iter_mut().for_each(|v| *v = *v / r);
                p
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pullback::energy;
    use std::f64::consts::PI;

    fn flat(n: usize) -> Arc<SourceMetric<f64>> {
        Arc::new(SourceMetric::flat(&[n]).unwrap())
    }

    #[test]
    fn constant_has_zero_energy() {
        for kind in [TargetKind::Sphere2, TargetKind::Sphere6, TargetKind::FlatTorus2] {
            let u = build_initial_data(&Scenario::Constant, flat(16), EmbeddedTarget::from_kind(kind)).unwrap();
            assert_eq!(energy(&u), 0.0);
        }
    }

    #[test]
    fn spin_wave_energy_closed_form() {
        let (theta, k) = (PI / 4.0, 2);
        let u = build_initial_data(&Scenario::SpinWave { theta, k }, flat(256), EmbeddedTarget::sphere2()).unwrap();
        let exact = PI * (k * k) as f64 * theta.sin().powi(2);
        let h = 2.0 * PI / 256.0;
        assert!((energy(&u) - exact).abs() < 2.0 * exact * (k as f64 * h).powi(2));
    }

    #[test]
    fn scenario_target_mismatch_rejected() {
        let s6 = EmbeddedTarget::<f64>::sphere6();
        assert!(build_initial_data(&Scenario::SpinWave { theta: 0.5, k: 1 }, flat(16), s6).is_err());
        assert!(build_initial_data(&Scenario::EquatorCircle, flat(16), s6).is_err());
        assert!(build_initial_data(&Scenario::S6HopfLike { seed: 1 }, flat(16), EmbeddedTarget::sphere2()).is_err());
        assert!(build_initial_data(&Scenario::RandomSmooth { seed: 1, band: 0 }, flat(16), s6).is_err());
    }

    #[test]
    fn random_smooth_is_reproducible() {
        let m2 = Arc::new(SourceMetric::<f64>::flat(&[16, 8]).unwrap());
        for kind in [TargetKind::Sphere2, TargetKind::Sphere6, TargetKind::FlatTorus2] {
            let t = EmbeddedTarget::from_kind(kind);
            let sc = Scenario::RandomSmooth { seed: 7, band: 3 };
            let a = build_initial_data(&sc, m2.clone(), t).unwrap();
            let b = build_initial_data(&sc, m2.clone(), t).unwrap();
            assert_eq!(a.points(), b.points());
            let c = build_initial_data(&Scenario::RandomSmooth { seed: 8, band: 3 }, m2.clone(), t).unwrap();
            assert_ne!(a.points(), c.points());
            assert!(energy(&a) > 0.0);
        }
    }

    #[test]
    fn random_field_is_grid_independent() {
        let coarse = SourceMetric::<f64>::flat(&[16]).unwrap();
        let fine = SourceMetric::<f64>::flat(&[32]).unwrap();
        let a = random_ambient_field(&coarse, 3, 5, 4, 1.0);
        let b = random_ambient_field(&fine, 3, 5, 4, 1.0);
        for node in 0..16 {
            for c in 0..3 {
                assert!((a[node * 3 + c] - b[2 * node * 3 + c]).abs() < 1e-13);
            }
        }
        assert!(a.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn hopf_like_loop_is_on_s6() {
        let u = build_initial_data(&Scenario::S6HopfLike { seed: 3 }, flat(64), EmbeddedTarget::sphere6()).unwrap();
        assert!(u.max_defect() < 1e-14);
        assert!(energy(&u) > 1.0);
    }
}
