use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use geoflow_core::flow::{epsilon_continuation, skewness_defect, step_imex_spectral, step_rk4_project};
use geoflow_core::gauge::{build_gauge, elimination_residual, log_log_slope, modulated_probe, order_sweep};
use geoflow_core::pullback::{energy, inner, laplacian_hierarchy_norm, norm_nk, tilde_laplacian};
use geoflow_core::scenario::random_ambient_field;
use geoflow_core::{build_initial_data, evolve, EmbeddedTarget, GeoflowError, Metric, Scenario, Scheme, Section, State, TargetKind};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::output::OutputDir;
use crate::settings::Settings;

pub const DEFAULT_EPS_LIST: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

struct Clock {
    start: Instant,
    marks: Vec<(&'static str, f64)>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        let now = Instant::now();
        Self { start: now, marks: Vec::new(), last: now }
    }

    fn mark(&mut self, name: &'static str) {
        let now = Instant::now();
        self.marks.push((name, (now - self.last).as_secs_f64()));
        self.last = now;
    }

    fn json(&self) -> Value {
        let mut v = json!({ "total_seconds": self.start.elapsed().as_secs_f64() });
        for (k, s) in &self.marks {
            v[format!("{k}_seconds")] = json!(s);
        }
        v
    }
}

fn numerical(e: GeoflowError) -> CliError {
    CliError::Numerical(e.to_string())
}

fn manifest(command: &str, settings: &Settings, state: &State, status: &str, abort: Option<String>, summary: Value) -> Value {
    json!({
        "tool": "geoflow",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "status": status,
        "abort_reason": abort,
        "config": settings.echo(),
        "target": settings.target.token(),
        "metric": settings.metric.to_string(),
        "grid": settings.grid,
        "ambient_dim": state.ambient_dim(),
        "summary": summary,
    })
}

/// Finite values as numbers, anything else as `null`.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn run(settings: &Settings) -> Result<(), CliError> {
    let mut clock = Clock::new();
    let u0 = settings.initial_state()?;
    let cfg = settings.flow_config();
    let mut out = OutputDir::create(&settings.out)?;
    clock.mark("setup");
    let rec = evolve(&u0, &cfg).map_err(|e| CliError::Usage(e.to_string()))?;
    clock.mark("compute");
    out.write_diagnostics(&rec.diagnostics)?;
    for (index, state) in &rec.snapshots {
        out.write_snapshot(*index, state)?;
    }
    clock.mark("output");
    let first = &rec.diagnostics[0];
    let last = &rec.diagnostics[rec.diagnostics.len() - 1];
    let summary = json!({
        "steps_taken": rec.steps_taken,
        "dt_used": rec.dt_used,
        "final_time": rec.final_state.time(),
        "energy_initial": first.energy,
        "energy_final": last.energy,
        "nk_initial": first.nk,
        "nk_final": last.nk,
        "max_defect_final": rec.final_state.max_defect(),
        "gronwall_rate": rec.gronwall.map(|g| num(g.rate)),
        "gronwall_horizon": rec.gronwall.and_then(|g| g.horizon).map(num),
        "picard_iterations": rec.picard_iterations,
    });
    let abort = rec.abort.as_ref().map(|e| e.to_string());
    let status = if abort.is_some() { "aborted" } else { "completed" };
    let mut m = manifest("run", settings, &u0, status, abort.clone(), summary);
    m["timings"] = clock.json();
    out.finish(m)?;
    match abort {
        Some(reason) => Err(CliError::Numerical(reason)),
        None => Ok(()),
    }
}

/// Least-squares slope of `ys` against `xs`.
fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn dispersion(settings: &Settings) -> Result<(), CliError> {
    let (theta, k) = match settings.scenario {
        Scenario::SpinWave { theta, k } if settings.target == TargetKind::Sphere2 => (theta, k),
        _ => return Err(CliError::Usage("dispersion needs --target s2 with the spin-wave scenario".into())),
    };
    if settings.scheme != Scheme::Rk4Project || settings.epsilon != 0.0 || settings.grid.len() != 1 {
        return Err(CliError::Usage("dispersion runs the epsilon = 0 rk4-project flow on a 1-D grid".into()));
    }
    let mut clock = Clock::new();
    let u0 = settings.initial_state()?;
    let mut out = OutputDir::create(&settings.out)?;
    let (steps, dt) = settings.flow_config().step_plan();
    clock.mark("setup");
    let mut u = u0.clone();
    let (mut ts, mut phases) = (vec![0.0], vec![u.point(0)[1].atan2(u.point(0)[0])]);
    let mut abort = None;
    for step in 1..=steps {
        match step_rk4_project(&u, dt, 0.0) {
            Ok(next) => u = next,
            Err(e) => {
                abort = Some(e.to_string());
                break;
            }
        }
        if step % settings.diagnostics_every == 0 || step == steps {
            let p = u.point(0);
            let last = phases[phases.len() - 1];
            let mut phi = p[1].atan2(p[0]);
            phi += 2.0 * PI * ((last - phi) / (2.0 * PI)).round();
            ts.push(u.time());
            phases.push(phi);
        }
    }
    clock.mark("compute");
    let rows: Vec<Vec<f64>> = ts.iter().zip(&phases).map(|(&t, &p)| vec![t, p]).collect();
    out.write_table("dispersion.csv", &["t", "phase"], &rows)?;
    clock.mark("output");
    let h = u0.metric().step(0);
    let kf = k as f64;
    let continuum = kf * kf * theta.cos();
    let discrete = ((kf * h).sin() / h).powi(2) * theta.cos();
    let omega = if ts.len() >= 2 { -fit_slope(&ts, &phases) } else { f64::NAN };
    let summary = json!({
        "omega_fit": num(omega),
        "omega_continuum": continuum,
        "omega_discrete": discrete,
        "relative_error_continuum": num((omega - continuum).abs() / continuum.abs()),
        "samples": ts.len(),
    });
    let status = if abort.is_some() { "aborted" } else { "completed" };
    let mut m = manifest("dispersion", settings, &u0, status, abort.clone(), summary);
    m["timings"] = clock.json();
    out.finish(m)?;
    match abort {
        Some(reason) => Err(CliError::Numerical(reason)),
        None => Ok(()),
    }
}

pub fn continuation(settings: &Settings, eps_list: Option<Vec<f64>>) -> Result<(), CliError> {
    let eps_list = eps_list.or(settings.file.eps_list.clone()).unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec());
    let mut clock = Clock::new();
    let u0 = settings.initial_state()?;
    let cfg = settings.flow_config();
    let mut out = OutputDir::create(&settings.out)?;
    clock.mark("setup");
    let rows = epsilon_continuation(&u0, &eps_list, &cfg).map_err(|e| match e {
        GeoflowError::InvalidArgument(_) | GeoflowError::Unsupported(_) => CliError::Usage(e.to_string()),
        other => numerical(other),
    })?;
    clock.mark("compute");
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.epsilon, r.gap]).collect();
    out.write_table("continuation.csv", &["epsilon", "gap"], &table)?;
    clock.mark("output");
    let ratios: Vec<Value> = rows.windows(2).map(|w| num(w[0].gap / w[1].gap)).collect();
    let monotone = rows.windows(2).all(|w| w[1].gap < w[0].gap);
    let summary = json!({ "ratios": ratios, "monotone": monotone });
    let mut m = manifest("continuation", settings, &u0, "completed", None, summary);
    m["timings"] = clock.json();
    out.finish(m)?;
    Ok(())
}

pub fn gauge_report(settings: &Settings, modes_max: Option<usize>) -> Result<(), CliError> {
    let mut clock = Clock::new();
    let u = settings.initial_state()?;
    let op = build_gauge(&u, settings.k_sobolev).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut out = OutputDir::create(&settings.out)?;
    let n = settings.grid[0];
    let cap = modes_max.or(settings.file.modes_max).unwrap_or(n / 4).min(n / 2 - 1);
    let modes: Vec<usize> = std::iter::successors(Some(1usize), |m| Some(m * 2)).take_while(|m| *m <= cap).collect();
    if modes.len() < 2 {
        return Err(CliError::Usage("gauge-report needs at least two probe modes".into()));
    }
    clock.mark("setup");
    let base = Section::project(&u, &random_ambient_field(u.metric(), u.ambient_dim(), settings.seed ^ 0x9e37, 2, 1.0))
        .map_err(numerical)?;
    let orders = order_sweep(&op, &u, &base, &modes).map_err(numerical)?;
    let elim = elimination_residual(&op, &u, &base, &modes).map_err(numerical)?;
    let anti = op.anticommutation_residual(&u).map_err(numerical)?;
    let nk = norm_nk(&u, Some(&op), settings.k_sobolev).map_err(numerical)?;
    let plain = laplacian_hierarchy_norm(&u, settings.k_sobolev).map_err(numerical)?;
    clock.mark("compute");
    let table: Vec<Vec<f64>> = orders
        .iter()
        .zip(&elim.rows)
        .map(|(o, e)| vec![o.mode as f64, o.gain, o.gain_sq, e.residual, e.first_order])
        .collect();
    out.write_table("gauge_modes.csv", &["mode", "gain", "gain_sq", "residual", "first_order"], &table)?;
    clock.mark("output");
    // slopes over the upper part of the sweep, where the asymptotic order shows
    let tail = orders.len().saturating_sub(4).min(orders.len() - 2);
    let xs: Vec<f64> = orders[tail..].iter().map(|r| r.mode as f64).collect();
    let slope = |ys: Vec<f64>| log_log_slope(&xs, &ys).ok().map(num);
    let summary = json!({
        "degenerate": op.is_degenerate(),
        "band_warning": op.band_warning(),
        "b_max_norm": op.b_max_norm(),
        "anticommutation_residual": anti,
        "slope_gain": if op.is_degenerate() { None } else { slope(orders[tail..].iter().map(|r| r.gain).collect()) },
        "slope_gain_sq": if op.is_degenerate() { None } else { slope(orders[tail..].iter().map(|r| r.gain_sq).collect()) },
        "elimination_ratio": num(elim.elimination_ratio()),
        "nk": nk,
        "hierarchy_norm": plain,
    });
    let mut m = manifest("gauge-report", settings, &u, "completed", None, summary);
    m["timings"] = clock.json();
    out.finish(m)?;
    Ok(())
}

pub struct SelftestLine {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn sample_state(target: TargetKind, sizes: &[usize], seed: u64) -> Result<State, GeoflowError> {
    let m = Arc::new(Metric::flat(sizes)?);
    build_initial_data(&Scenario::RandomSmooth { seed, band: 3 }, m, EmbeddedTarget::from_kind(target))
}

/// A fast battery of structural invariants on small grids.
pub fn selftest_lines() -> Result<Vec<SelftestLine>, GeoflowError> {
    let mut lines = Vec::new();
    let targets = [TargetKind::Sphere2, TargetKind::Sphere6, TargetKind::FlatTorus2];

    let mut worst: f64 = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let u = sample_state(t, &[64], i as u64)?;
        worst = worst.max(step_rk4_project(&u, 1e-3, 0.0)?.max_defect());
        worst = worst.max(step_imex_spectral(&u, 1e-3, 1e-2)?.max_defect());
    }
    lines.push(SelftestLine { name: "manifold-constraint", pass: worst < 1e-13, detail: format!("max defect {worst:.3e}") });

    let u = sample_state(TargetKind::Sphere6, &[64], 7)?;
    let mut v = u.clone();
    for _ in 0..100 {
        v = step_rk4_project(&v, 1e-4, 0.0)?;
    }
    let drift = (energy(&v) - energy(&u)).abs() / energy(&u);
    lines.push(SelftestLine { name: "energy-conservation", pass: drift < 1e-8, detail: format!("relative drift {drift:.3e} over 100 steps") });

    let mut w = u.clone();
    let mut rises = 0;
    for _ in 0..100 {
        let next = step_imex_spectral(&w, 1e-4, 1e-2)?;
        if energy(&next) > energy(&w) + 1e-10 {
            rises += 1;
        }
        w = next;
    }
    lines.push(SelftestLine { name: "energy-dissipation", pass: rises == 0, detail: format!("{rises} increases over 100 steps") });

    let mut skew: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let u = sample_state(t, &[32, 16], 10 + i as u64)?;
        skew = skew.max(skewness_defect(&u).abs());
        let m = u.metric();
        let a = Section::project(&u, &random_ambient_field(m, u.ambient_dim(), 1, 3, 1.0))?;
        let b = Section::project(&u, &random_ambient_field(m, u.ambient_dim(), 2, 3, 1.0))?;
        let lab = inner(&u, &tilde_laplacian(&u, &a)?, &b)?;
        let alb = inner(&u, &a, &tilde_laplacian(&u, &b)?)?;
        asym = asym.max((lab - alb).abs() / lab.abs().max(1.0));
    }
    lines.push(SelftestLine { name: "tension-skewness", pass: skew < 1e-11, detail: format!("max |sum h(J tau, tau)| {skew:.3e}") });
    lines.push(SelftestLine { name: "laplacian-symmetry", pass: asym < 1e-10, detail: format!("max relative asymmetry {asym:.3e}") });

    let m = Arc::new(Metric::flat(&[128])?);
    let u = build_initial_data(&Scenario::S6HopfLike { seed: 3 }, m.clone(), EmbeddedTarget::sphere6())?;
    let op = build_gauge(&u, 2)?;
    let anti = op.anticommutation_residual(&u)?;
    lines.push(SelftestLine { name: "gauge-anticommutation", pass: anti < 1e-10, detail: format!("max |JB + BJ| {anti:.3e}") });
    let base = Section::project(&u, &random_ambient_field(&m, 7, 4, 2, 1.0))?;
    let v = modulated_probe(&u, &base, 6)?;
    let back = op.apply_prime(&u, &op.apply(&u, &v)?)?;
    let sq = op.lambda_tilde(&u, &op.lambda_tilde(&u, &v)?)?;
    let expect = v.combine(1.0, &sq, -1.0)?;
    let err = back.vectors().iter().zip(expect.vectors()).fold(0.0f64, |e, (a, b)| e.max((a - b).abs()));
    lines.push(SelftestLine { name: "gauge-inverse", pass: err < 1e-12, detail: format!("max |L'L v - (v - L~^2 v)| {err:.3e}") });
    Ok(lines)
}

pub fn selftest() -> Result<(), CliError> {
    let lines = selftest_lines().map_err(numerical)?;
    let mut failed = 0;
    for l in &lines {
        println!("selftest {:<22} {} {}", l.name, if l.pass { "PASS" } else { "FAIL" }, l.detail);
        failed += usize::from(!l.pass);
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} selftest check(s) failed")));
    }
    Ok(())
}
