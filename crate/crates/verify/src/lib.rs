//! Executable checks of the `kl-core` invariants.
//!
//! Each numbered criterion runs a fixed, seeded experiment and reports the
//! observed value against its bound. Criteria are grouped into named suites
//! for the `kl verify` command; the `acceptance` suite runs all of them.

use kl_core::chain::{evolve_map, hcap_estimate, ChainConfig, ChainError};
use kl_core::driver::DeterministicDriver;
use kl_core::exec;
use kl_core::geometry::{GeometryError, SlitVector};
use kl_core::kernel::oracle::{oracle_kernel_fd, LatticeConfig};
use kl_core::kernel::{solve_kernel, KernelConfig, KernelError};
use kl_core::skle::{
    draw_increments, mc_explosion, probe_condition_b, sample_path, sample_path_with_increments, step_grid,
    CoefficientSpec, ProbeQuantity, SkleConfig, SkleError,
};
use kl_core::slit_ode::{evolve_slits, explosion_report, EvolveConfig, SlitOdeError, Trajectory};
use kl_core::transform::{
    evolve_iota, ito_drive_check, loewner_halfplane, DrivenTrajectory, IotaConfig, IotaMethod, ItoForm,
    TransformError,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("unknown suite `{0}` (known: {known})", known = SUITES.iter().map(|s| s.0).collect::<Vec<_>>().join(", "))]
    UnknownSuite(String),
    #[error("no criterion {0}")]
    UnknownCriterion(u8),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("kernel: {0}")]
    Kernel(#[from] KernelError),
    #[error("slit_ode: {0}")]
    SlitOde(#[from] SlitOdeError),
    #[error("chain: {0}")]
    Chain(#[from] ChainError),
    #[error("skle: {0}")]
    Skle(#[from] SkleError),
    #[error("transform: {0}")]
    Transform(#[from] TransformError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// Outcome of one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u8,
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
    pub seconds: f64,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} {} {}: observed {:.4e}, bound {:.4e}, {:.1} s; {}",
            self.criterion,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.bound,
            self.seconds,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

/// Registered suites and their criteria.
pub const SUITES: &[(&str, &[u8])] = &[
    ("kernel", &[1, 2]),
    ("bounds", &[1, 3]),
    ("explosion", &[4, 5, 10]),
    ("evolution", &[6, 7]),
    ("transform", &[8, 9]),
    ("determinism", &[11]),
    ("quick", &[1, 6, 7]),
    ("acceptance", &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]),
];

pub fn suite_criteria(name: &str) -> Result<&'static [u8], VerifyError> {
    SUITES
        .iter()
        .find(|s| s.0 == name)
        .map(|s| s.1)
        .ok_or_else(|| VerifyError::UnknownSuite(name.to_string()))
}

pub fn run_suite(name: &str) -> Result<SuiteReport, VerifyError> {
    run_suite_with(name, |_| {})
}

/// Runs a suite, handing each check to `each` as soon as it is done.
pub fn run_suite_with(name: &str, mut each: impl FnMut(&Check)) -> Result<SuiteReport, VerifyError> {
    let criteria = suite_criteria(name)?;
    let mut checks = Vec::with_capacity(criteria.len());
    let mut scenarios = None;
    for &c in criteria {
        let check = match c {
            4 | 5 => {
                let sc = match scenarios.take() {
                    Some(sc) => sc,
                    None => explosion_scenarios()?,
                };
                let out = if c == 4 { explosion_time(&sc) } else { explosion_tail(&sc) };
                scenarios = Some(sc);
                out
            }
            _ => run_criterion(c)?,
        };
        each(&check);
        checks.push(check);
    }
    Ok(SuiteReport {
        suite: name.to_string(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

pub fn run_criterion(c: u8) -> Result<Check, VerifyError> {
    match c {
        1 => kernel_exactness(),
        2 => kernel_vs_oracle(),
        3 => condition_b_bounds(),
        4 => Ok(explosion_time(&explosion_scenarios()?)),
        5 => Ok(explosion_tail(&explosion_scenarios()?)),
        6 => scaling(),
        7 => capacity(),
        8 => consistency(),
        9 => ito_drive(),
        10 => skle_explosion(),
        11 => determinism(),
        _ => Err(VerifyError::UnknownCriterion(c)),
    }
}

fn check(criterion: u8, name: &str, passed: bool, observed: f64, bound: f64, start: Instant, detail: String) -> Check {
    Check {
        criterion,
        name: name.to_string(),
        passed,
        observed,
        bound,
        seconds: start.elapsed().as_secs_f64(),
        detail,
    }
}

fn slits(raw: &[f64]) -> Result<SlitVector, VerifyError> {
    Ok(SlitVector::validate(raw)?)
}

fn sine(offset: f64, amplitude: f64, omega: f64) -> DeterministicDriver {
    DeterministicDriver::Sine {
        offset,
        amplitude,
        omega,
        phase: 0.0,
    }
}

/// `Ψ` without slits against `−1/(π(z − ξ₀))` at 1000 random probes.
pub fn kernel_exactness() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let xi = 0.3;
    let sol = solve_kernel(&SlitVector::empty(), xi, &KernelConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let z = Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let exact = -1.0 / (PI * (z - xi));
        worst = worst.max((sol.eval_psi(z)? - exact).norm());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(check(
        1,
        "kernel exactness without slits",
        worst <= 1e-12 && secs < 1.0,
        worst,
        1e-12,
        start,
        "1000 probes, runtime limit 1 s".to_string(),
    ))
}

/// Largest relative error of `Im Ψ` against the darning lattice, at lattice
/// nodes at least three cells from the slits.
pub fn kernel_vs_oracle() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let configs = [slits(&[1.0, -1.0, 1.0])?, slits(&[1.0, 0.5, -1.5, -0.5, 0.5, 1.5])?];
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut parts = Vec::new();
    for s in &configs {
        let t0 = Instant::now();
        let sol = solve_kernel(s, 0.0, &KernelConfig::default())?;
        let g = oracle_kernel_fd(s, 0.0, &LatticeConfig::centered(0.0, 5.0, 10.0, 600))?;
        let mut err: f64 = 0.0;
        let mut probes = 0;
        for j in 1..g.ny {
            for i in 0..=g.nx {
                let z = g.point(i, j);
                if z.re.abs() > 2.5 || z.im > 2.5 || z.im < 0.25 || g.cells_from_slits(i, j) < 3.0 {
                    continue;
                }
                let v = sol.im_psi(z);
                err = err.max(((g.value(i, j) - v) / v).abs());
                probes += 1;
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        worst = worst.max(err);
        parts.push(format!("N={}: {:.3e} over {} probes in {:.1} s", s.n(), err, probes, secs));
    }
    Ok(check(
        2,
        "kernel against the darning lattice",
        worst <= 0.02 && slowest < 60.0,
        worst,
        0.02,
        start,
        parts.join("; "),
    ))
}

/// `|b_BMD| ≤ 4/r` and endpoint `|Ψ| ≤ 1/(4πr)` on 100 random
/// configurations per `r`. Observed is the largest value relative to its bound.
pub fn condition_b_bounds() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let cfg = KernelConfig::default();
    let mut ratio: f64 = 0.0;
    let mut violations = 0;
    let mut parts = Vec::new();
    for (k, r) in [0.25, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let seed = 100 + k as u64;
        let bmd = probe_condition_b(ProbeQuantity::Bmd, r, 100, seed, &cfg)?;
        let ends = probe_condition_b(ProbeQuantity::EndpointPsi, r, 100, seed, &cfg)?;
        let (bb, eb) = (4.0 / r, 1.0 / (4.0 * PI * r));
        let (vb, ve) = (bmd.violations(bb), ends.violations(eb));
        violations += vb + ve;
        ratio = ratio.max(bmd.sup / bb).max(ends.sup / eb);
        parts.push(format!(
            "r={r}: b_BMD sup {:.3e} ({vb} over), endpoint sup {:.3e} ({ve} over)",
            bmd.sup, ends.sup
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(check(
        3,
        "coefficient bounds away from the slits",
        violations == 0 && secs < 120.0,
        ratio,
        1.0,
        start,
        format!("sup of value/bound; {violations} violations; {}", parts.join("; ")),
    ))
}

/// Deterministic exploding scenarios: one slit over a still driver at 0.
pub struct Scenario {
    pub y0: f64,
    pub slits: SlitVector,
    pub trajectory: Trajectory,
    pub seconds: f64,
}

pub fn explosion_scenarios() -> Result<Vec<Scenario>, VerifyError> {
    let lengths = [0.3, 1.0, 2.0, 3.0, 1.5];
    let shifts = [0.0, 0.2, -0.3, 0.1, -0.1];
    let mut out = Vec::new();
    for k in 0..10 {
        let y0 = 0.3 + 1.7 * k as f64 / 9.0;
        let len = lengths[k % lengths.len()];
        let c = shifts[k % shifts.len()] * len;
        let s = slits(&[y0, c - 0.5 * len, c + 0.5 * len])?;
        let t0 = Instant::now();
        let trajectory = evolve_slits(&s, &DeterministicDriver::constant(0.0), 4.0 * y0 * y0 + 1.0, &EvolveConfig::default())?;
        out.push(Scenario {
            y0,
            slits: s,
            trajectory,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    Ok(out)
}

fn scenario_seconds(sc: &[Scenario]) -> f64 {
    sc.iter().map(|s| s.seconds).sum()
}

/// `ζ ≥ 2y₀² · 0.99` in every scenario. Observed is the smallest `ζ / (2y₀²)`.
pub fn explosion_time(sc: &[Scenario]) -> Check {
    let start = Instant::now();
    let mut worst = f64::INFINITY;
    let mut all_exploded = true;
    let mut parts = Vec::new();
    for s in sc {
        match s.trajectory.zeta() {
            Some(z) => {
                let q = z / (2.0 * s.y0 * s.y0);
                worst = worst.min(q);
                parts.push(format!("y0={:.3}: zeta {:.4}", s.y0, z));
            }
            None => {
                all_exploded = false;
                parts.push(format!("y0={:.3}: no explosion", s.y0));
            }
        }
    }
    let secs = scenario_seconds(sc);
    let mut c = check(
        4,
        "deterministic explosion time",
        all_exploded && sc.len() >= 10 && worst >= 0.99 && secs < 300.0,
        worst,
        0.99,
        start,
        parts.join("; "),
    );
    c.seconds += secs;
    c
}

/// Final `R ≤ 1e-3` and the last `R` is the minimum of the trailing 10%.
pub fn explosion_tail(sc: &[Scenario]) -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut bad = 0;
    for s in sc {
        match explosion_report(&s.trajectory) {
            Ok(rep) => {
                let last = rep.r_tail.last().map_or(f64::INFINITY, |p| p.1);
                worst = worst.max(last);
                if !(last <= 1e-3 && rep.tail_ends_at_minimum()) {
                    bad += 1;
                }
            }
            Err(_) => bad += 1,
        }
    }
    let mut c = check(
        5,
        "deterministic explosion tail",
        bad == 0,
        worst,
        1e-3,
        start,
        format!("largest final R over {} scenarios; {bad} failing", sc.len()),
    );
    c.seconds += scenario_seconds(sc);
    c
}

/// Trajectory under `z ↦ 2z`, `t ↦ 4t` against the scaled base trajectory.
pub fn scaling() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let s = slits(&[1.0, -1.0, 0.5])?;
    let cfg = EvolveConfig::default();
    let d = sine(0.1, 0.5, 3.0);
    let base = evolve_slits(&s, &d, 0.3, &cfg)?;
    let big = evolve_slits(&s.scale(2.0), &d.clone().scaled(2.0), 1.2, &cfg)?;
    let mut gap: f64 = 0.0;
    for k in 0..=30 {
        let t = 0.01 * k as f64;
        let a = SlitVector::validate(&base.sample(t))?.scale(2.0).to_vec();
        let b = big.sample(4.0 * t);
        gap = a.iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(gap, f64::max);
    }
    Ok(check(
        6,
        "scaling equivariance (c = 2)",
        gap <= 1e-6,
        gap,
        1e-6,
        start,
        "31 sample times on [0, 0.3]".to_string(),
    ))
}

/// Capacity probes recover `hcap = 2t` with one slit.
pub fn capacity() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let s = slits(&[1.5, 1.0, 3.0])?;
    let cfg = ChainConfig {
        report_times: vec![0.1, 0.5],
        probe_radius: Some(0.0),
        ..ChainConfig::default()
    };
    let hist = evolve_map(&s, &DeterministicDriver::constant(0.0), &[], 1.0, &cfg)?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for t in [0.1, 0.5, 1.0] {
        let a = hcap_estimate(&hist, t)?;
        worst = worst.max((a / (2.0 * t) - 1.0).abs());
        parts.push(format!("t={t}: {a:.6}"));
    }
    Ok(check(7, "half-plane capacity", worst <= 0.01, worst, 0.01, start, parts.join("; ")))
}

/// `ι_t ∘ g_t` against `g⁰_t ∘ ι` at 20 points for `t ∈ [0, 0.5]` with one
/// slit, plus the slit-free case where both sides are the Loewner map.
pub fn consistency() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let zs: Vec<Complex64> = (0..20)
        .map(|i| {
            let a = (i as f64 + 0.5) / 20.0 * PI;
            Complex64::new(2.5 * a.cos(), 0.4 + 2.0 * a.sin())
        })
        .collect();
    let times: Vec<f64> = (1..=10).map(|k| 0.05 * k as f64).collect();
    // `spacing` sets how densely ι is recorded; g⁰ interpolates U between records
    let gap_for = |s: &SlitVector, d: &DeterministicDriver, chain: ChainConfig, spacing: f64| {
        let t_max = 0.5;
        let hist = evolve_map(s, d, &zs, t_max, &ChainConfig {
            report_times: times.clone(),
            ..chain
        })?;
        let traj = hist.slit_trajectory();
        let path = DrivenTrajectory { traj: &traj, driver: d };
        let mut gap: f64 = 0.0;
        for &t in &times {
            let ws = hist.g_at(t)?;
            let mut report_times: Vec<f64> = (1..).map(|k| spacing * k as f64).take_while(|r| *r < t).collect();
            report_times.push(t);
            let h = evolve_iota(&path, t, &ws, &IotaConfig {
                report_times,
                ..IotaConfig::default()
            })?;
            let lhs = &h.states.last().unwrap().points;
            let half = loewner_halfplane(&h, &zs, t)?;
            let rhs = half.at(t).unwrap();
            gap = lhs.iter().zip(rhs).map(|(a, b)| (a - b).norm()).fold(gap, f64::max);
        }
        Ok::<f64, VerifyError>(gap)
    };
    let d = sine(0.0, 0.3, 4.0);
    let one = gap_for(&slits(&[1.0, -1.0, 1.0])?, &d, ChainConfig::default(), f64::INFINITY)?;
    let tight = EvolveConfig {
        rtol: 1e-12,
        atol: 1e-14,
        ..EvolveConfig::default()
    };
    let zero = gap_for(
        &SlitVector::empty(),
        &d,
        ChainConfig {
            evolve: tight,
            ..ChainConfig::default()
        },
        0.0025,
    )?;
    Ok(check(
        8,
        "transform consistency",
        one <= 1e-4 && zero <= 1e-10,
        one,
        1e-4,
        start,
        format!("N=1 gap {one:.3e}; N=0 gap {zero:.3e} (bound 1e-10); 20 points, 10 times"),
    ))
}

/// Pooled rms gap between `U` and its Itô expansion for one batch of paths
/// at the given refinement levels of a shared Brownian path.
fn ito_pooled(
    s: &SlitVector,
    coeffs: &CoefficientSpec,
    t_max: f64,
    fine: f64,
    seeds: &[u64],
    form: ItoForm,
) -> Result<[f64; 3], VerifyError> {
    let cfg = IotaConfig {
        method: IotaMethod::Contour,
        contour_nodes: 64,
        ..IotaConfig::default()
    };
    let per_seed = exec::map(seeds, |&seed| -> Result<[(f64, usize); 3], VerifyError> {
        let inc = draw_increments(seed, &step_grid(t_max, fine));
        let mut out = [(0.0, 0usize); 3];
        for (level, slot) in out.iter_mut().enumerate() {
            let f = 1usize << level;
            let steps = step_grid(t_max, fine * f as f64);
            let coarse: Vec<f64> = inc.chunks(f).map(|c| c.iter().sum()).collect();
            let p = sample_path_with_increments(0.0, s, coeffs, &steps, coarse, seed, &SkleConfig::default())?;
            let h = evolve_iota(&p, t_max, &[], &cfg)?;
            let rep = ito_drive_check(&p, coeffs, &h, form)?;
            let n = rep.series.len();
            *slot = (rep.rms_gap * rep.rms_gap * n as f64, n);
        }
        Ok(out)
    });
    let mut sums = [(0.0, 0usize); 3];
    for r in per_seed {
        for (acc, v) in sums.iter_mut().zip(r?) {
            acc.0 += v.0;
            acc.1 += v.1;
        }
    }
    Ok(sums.map(|(q, n)| (q / n as f64).sqrt()))
}

/// The rms gap of the Itô expansion of `U` shrinks like `√dt`: pooled over 16
/// seeded locality paths at `dt ∈ {2.5e-4, 5e-4, 1e-3}` on nested Brownian
/// increments, each doubling of `dt` must grow the gap by at least 1.3.
pub fn ito_drive() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let s = slits(&[3.0, -1.0, 1.0])?;
    let coeffs = CoefficientSpec::locality();
    let seeds: Vec<u64> = (0..16).collect();
    let rms = ito_pooled(&s, &coeffs, 0.25, 2.5e-4, &seeds, ItoForm::Derived)?;
    let ratios = [rms[1] / rms[0], rms[2] / rms[1]];
    let worst = ratios[0].min(ratios[1]);
    Ok(check(
        9,
        "Itô drive of the transformed driver",
        worst >= 1.3,
        worst,
        1.3,
        start,
        format!(
            "rms gap {:.3e} / {:.3e} / {:.3e} at dt 2.5e-4 / 5e-4 / 1e-3; ratios {:.3}, {:.3}; 16 paths, T 0.25",
            rms[0], rms[1], rms[2], ratios[0], ratios[1]
        ),
    ))
}

const SKLE_BASE_SEED: u64 = 2024;

fn locality_batch(n: usize) -> Result<kl_core::skle::McSummary, VerifyError> {
    let s = slits(&[1.0, -1.0, 1.0])?;
    Ok(mc_explosion(0.0, &s, &CoefficientSpec::locality(), 3.0, 1e-2, n, SKLE_BASE_SEED, &SkleConfig::default())?)
}

/// 200 locality paths from one slit at height 1: every exploded path has
/// `ζ ≥ 2 · 0.99` and final `R ≤ 1e-3`.
pub fn skle_explosion() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let mc = locality_batch(200)?;
    let mut zmin = f64::INFINITY;
    let mut below = 0;
    let mut wide = 0;
    for p in &mc.paths {
        if let Some(z) = p.zeta() {
            zmin = zmin.min(z);
            if z < 2.0 * 0.99 {
                below += 1;
            }
            if !(p.final_r <= 1e-3) {
                wide += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(check(
        10,
        "SKLE explosion time",
        below == 0 && wide == 0 && mc.failed == 0 && secs < 900.0,
        zmin,
        1.98,
        start,
        format!(
            "smallest zeta over {} exploded of {} (median {:.4}); {below} below bound, {wide} with final R > 1e-3, {} failed",
            mc.exploded,
            mc.n_paths,
            mc.zeta_median.unwrap_or(f64::NAN),
            mc.failed
        ),
    ))
}

/// Repeats seeded runs, with different worker counts, and compares the
/// serialized results byte for byte.
pub fn determinism() -> Result<Check, VerifyError> {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let a = exec::with_jobs(Some(1), || locality_batch(4))?;
    let b = locality_batch(4)?;
    if serde_json::to_vec(&a)? != serde_json::to_vec(&b)? {
        mismatches.push("SKLE batch");
    }
    let s = slits(&[3.0, -1.0, 1.0])?;
    let coeffs = CoefficientSpec::locality();
    let cfg = IotaConfig {
        method: IotaMethod::Contour,
        contour_nodes: 64,
        ..IotaConfig::default()
    };
    let run = || -> Result<Vec<u8>, VerifyError> {
        let p = sample_path(0.0, &s, &coeffs, 0.05, 1e-3, 5, &SkleConfig::default())?;
        let h = evolve_iota(&p, 0.05, &[], &cfg)?;
        let rep = ito_drive_check(&p, &coeffs, &h, ItoForm::Derived)?;
        Ok(serde_json::to_vec(&(p, h, rep))?)
    };
    if run()? != exec::with_jobs(Some(1), run)? {
        mismatches.push("transformed path");
    }
    Ok(check(
        11,
        "seeded reruns are byte-identical",
        mismatches.is_empty(),
        mismatches.len() as f64,
        0.0,
        start,
        if mismatches.is_empty() {
            "SKLE batch and transformed path identical".to_string()
        } else {
            format!("differing: {}", mismatches.join(", "))
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suites_are_rejected() {
        assert!(matches!(run_suite("nope"), Err(VerifyError::UnknownSuite(_))));
        assert!(matches!(run_criterion(12), Err(VerifyError::UnknownCriterion(12))));
    }

    #[test]
    fn acceptance_covers_every_criterion() {
        let all = suite_criteria("acceptance").unwrap();
        assert_eq!(all, (1..=11).collect::<Vec<u8>>().as_slice());
        for (_, cs) in SUITES {
            assert!(cs.iter().all(|c| all.contains(c)));
        }
    }

    #[test]
    fn check_lines_name_the_outcome() {
        let c = Check {
            criterion: 3,
            name: "x".into(),
            passed: false,
            observed: 2.0,
            bound: 1.0,
            seconds: 0.5,
            detail: String::new(),
        };
        assert!(c.to_string().starts_with("criterion  3 FAIL x"));
    }
}
