//! Komatu–Loewner map flow `dg/dt = −2π Ψ_{s(t)}(g, ξ(t))` for tracked points,
//! co-integrated with the slits. Provides swallow times, hulls, a backward-flow
//! tip estimate and half-plane capacity probes.

use crate::driver::DeterministicDriver;
use crate::exec;
use crate::geometry::{SlitVector, EPS_GEOM};
use crate::kernel::{solve_kernel, KernelError, KernelSolution};
use crate::rk45::{hermite, Rk45, Rk45Options, StepError};
use crate::slit_ode::{explosion, EvolveConfig, Status, Trajectory};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum ChainError {
    #[error("tracked point {index} at {z} is not in the slit domain")]
    NotInDomain { index: usize, z: Complex64 },
    #[error("step size fell to {h:.3e} at t = {t}")]
    StepUnderflow { t: f64, h: f64, cause: Option<KernelError> },
    #[error("t_max must be positive, got {0}")]
    BadHorizon(f64),
    #[error("probe radius {rho} is below four times the configuration size {size}")]
    ProbeTooClose { rho: f64, size: f64 },
    #[error("history has no capacity probes")]
    NoProbes,
    #[error("time {0} outside the recorded history")]
    OutOfRange(f64),
    #[error("backward flow left the domain at time {t}: {z}")]
    BackwardBlowup { t: f64, z: Complex64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub evolve: EvolveConfig,
    /// A point is swallowed once `|g − ξ| ≤ eps_swallow`.
    pub eps_swallow: f64,
    /// Step cap `c_swallow · min |g − ξ|²` over active points.
    pub c_swallow: f64,
    /// Times the integrator must land on exactly.
    pub report_times: Vec<f64>,
    /// Track 64 capacity probes on the upper half circle of this radius;
    /// `Some(0.0)` picks `max(8, 4 · size)`.
    pub probe_radius: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            evolve: EvolveConfig::default(),
            eps_swallow: 1e-4,
            c_swallow: 0.1,
            report_times: Vec::new(),
            probe_radius: None,
        }
    }
}

pub const PROBE_COUNT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedPoint {
    pub z_init: Complex64,
    pub g: Complex64,
    pub swallowed_at: Option<f64>,
}

/// Snapshot of the chain at one recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub t: f64,
    pub xi: f64,
    pub slits: SlitVector,
    pub tracked: Vec<TrackedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapHistory {
    /// User points followed by the capacity probes, if any.
    pub points: Vec<Complex64>,
    pub user_points: usize,
    pub probe_radius: Option<f64>,
    pub swallowed_at: Vec<Option<f64>>,
    pub times: Vec<f64>,
    pub xi: Vec<f64>,
    pub slits: Vec<SlitVector>,
    pub g: Vec<Vec<Complex64>>,
    dg: Vec<Vec<Complex64>>,
    ds: Vec<Vec<f64>>,
    pub status: Status,
}

/// Size of a configuration for probe placement: the larger of its diameter
/// and its distance from the origin.
fn config_size(s: &SlitVector) -> f64 {
    s.diameter().max(s.extent())
}

fn probe_points(rho: f64) -> Vec<Complex64> {
    (0..PROBE_COUNT)
        .map(|k| Complex64::from_polar(rho, PI * (k as f64 + 0.5) / PROBE_COUNT as f64))
        .collect()
}

impl MapHistory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> ChainState {
        ChainState {
            t: self.times[k],
            xi: self.xi[k],
            slits: self.slits[k].clone(),
            tracked: self
                .points
                .iter()
                .zip(&self.g[k])
                .zip(&self.swallowed_at)
                .map(|((&z, &g), &sw)| TrackedPoint {
                    z_init: z,
                    g,
                    swallowed_at: sw.filter(|&s| s <= self.times[k]),
                })
                .collect(),
        }
    }

    /// Map values at time `t`, exact at recorded times and Hermite in between.
    pub fn g_at(&self, t: f64) -> Result<Vec<Complex64>, ChainError> {
        let last = self.len() - 1;
        if t < self.times[0] - 1e-12 || t > self.times[last] + 1e-12 {
            return Err(ChainError::OutOfRange(t));
        }
        let k = self.times.partition_point(|&s| s < t - 1e-12);
        if k <= last && (self.times[k] - t).abs() <= 1e-12 {
            return Ok(self.g[k].clone());
        }
        let k = k - 1;
        let flat = |v: &[Complex64]| v.iter().flat_map(|z| [z.re, z.im]).collect::<Vec<_>>();
        let (y0, y1) = (flat(&self.g[k]), flat(&self.g[k + 1]));
        let (f0, f1) = (flat(&self.dg[k]), flat(&self.dg[k + 1]));
        let mut out = vec![0.0; y0.len()];
        hermite(self.times[k], &y0, &f0, self.times[k + 1], &y1, &f1, t, &mut out);
        Ok(out.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    /// Slit trajectory view of the history.
    pub fn slit_trajectory(&self) -> Trajectory {
        Trajectory {
            times: self.times.clone(),
            states: self.slits.clone(),
            xi: self.xi.clone(),
            r: self.slits.iter().zip(&self.xi).map(|(s, &x)| s.distance_r(x)).collect(),
            derivs: self.ds.clone(),
            status: self.status.clone(),
        }
    }
}

/// Solves the kernel at one stage and returns slit drift plus point velocities.
fn stage_velocity(
    y: &[f64],
    ns: usize,
    xi: f64,
    active: &[bool],
    cfg: &ChainConfig,
    out: &mut [f64],
) -> Result<(), KernelError> {
    let s = SlitVector::validate(&y[..3 * ns]).expect("stage states are vetted before evaluation");
    let sol: KernelSolution = solve_kernel(&s, xi, &cfg.evolve.kernel)?;
    out[..3 * ns].copy_from_slice(&sol.drift().b);
    let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
    let vel = exec::map(&idx, |&i| {
        let g = Complex64::new(y[3 * ns + 2 * i], y[3 * ns + 2 * i + 1]);
        sol.eval_psi(g).map(|p| -2.0 * PI * p)
    });
    for v in &mut out[3 * ns..] {
        *v = 0.0;
    }
    for (&i, v) in idx.iter().zip(vel) {
        let v = v?;
        out[3 * ns + 2 * i] = v.re;
        out[3 * ns + 2 * i + 1] = v.im;
    }
    Ok(())
}

/// Co-integrates the slit and map flows from `points`.
pub fn evolve_map(
    s_init: &SlitVector,
    driver: &DeterministicDriver,
    points: &[Complex64],
    t_max: f64,
    cfg: &ChainConfig,
) -> Result<MapHistory, ChainError> {
    if !(t_max > 0.0) {
        return Err(ChainError::BadHorizon(t_max));
    }
    for (i, &z) in points.iter().enumerate() {
        if !s_init.contains(z) {
            return Err(ChainError::NotInDomain { index: i, z });
        }
    }
    let probe_radius = cfg.probe_radius.map(|r| if r > 0.0 { r } else { 8f64.max(4.0 * config_size(s_init)) });
    let mut all: Vec<Complex64> = points.to_vec();
    if let Some(rho) = probe_radius {
        let size = config_size(s_init);
        if rho < 4.0 * size {
            return Err(ChainError::ProbeTooClose { rho, size });
        }
        all.extend(probe_points(rho));
    }
    let ns = s_init.n();
    let np = all.len();
    let mut active = vec![true; np];
    let mut swallowed_at: Vec<Option<f64>> = vec![None; np];
    let mut y: Vec<f64> = s_init.to_vec();
    y.extend(all.iter().flat_map(|z| [z.re, z.im]));
    let mut f = vec![0.0; y.len()];
    stage_velocity(&y, ns, driver.xi(0.0), &active, cfg, &mut f)?;
    let unpack = |y: &[f64]| -> Vec<Complex64> {
        y[3 * ns..].chunks(2).map(|c| Complex64::new(c[0], c[1])).collect()
    };
    let mut hist = MapHistory {
        points: all.clone(),
        user_points: points.len(),
        probe_radius,
        swallowed_at: Vec::new(),
        times: vec![0.0],
        xi: vec![driver.xi(0.0)],
        slits: vec![s_init.clone()],
        g: vec![all.clone()],
        dg: vec![unpack(&f)],
        ds: vec![f[..3 * ns].to_vec()],
        status: Status::Completed { t_max },
    };
    let mut stops: Vec<f64> = cfg
        .report_times
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < t_max)
        .collect();
    stops.sort_by(f64::total_cmp);
    stops.push(t_max);
    let opts = Rk45Options {
        rtol: cfg.evolve.rtol,
        atol: cfg.evolve.atol,
        ..Rk45Options::default()
    };
    let h0 = Rk45::initial_step(&y, &f, &opts, cfg.evolve.h_max);
    let mut st = Rk45::new(0.0, y, f, h0, opts);
    let mut stop_idx = 0;
    'outer: while st.t < t_max {
        let target = stops[stop_idx];
        let xi_now = driver.xi(st.t);
        let s_now = SlitVector::validate(&st.y[..3 * ns]).expect("accepted states are valid");
        let r = s_now.distance_r(xi_now);
        let mut cap = (cfg.evolve.c_step * r * r).min(cfg.evolve.h_max);
        for i in 0..np {
            if active[i] {
                let g = Complex64::new(st.y[3 * ns + 2 * i], st.y[3 * ns + 2 * i + 1]);
                cap = cap.min(cfg.c_swallow * (g - xi_now).norm_sqr());
            }
        }
        let mut weights = vec![true; 3 * ns];
        weights.extend(active.iter().flat_map(|&a| [a, a]));
        let act = active.clone();
        let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| stage_velocity(y, ns, driver.xi(t), &act, cfg, out);
        let mut admissible = |t: f64, y: &[f64]| {
            let Ok(s) = SlitVector::validate(&y[..3 * ns]) else {
                return false;
            };
            let xi = driver.xi(t);
            s.distance_r(xi) > 0.0
                && (0..np).all(|i| {
                    !act[i] || {
                        let g = Complex64::new(y[3 * ns + 2 * i], y[3 * ns + 2 * i + 1]);
                        g.im > 0.0 && s.contains(g) && (g - xi).norm() > EPS_GEOM
                    }
                })
        };
        match st.step(&mut rhs, cap, target, Some(&weights), &mut admissible) {
            Ok(()) => {}
            Err(StepError::Underflow { t, h, last }) => {
                // collapse next to the driver counts as swallowing the nearest point
                let xi = driver.xi(st.t);
                let nearest = (0..np)
                    .filter(|&i| active[i])
                    .map(|i| (i, (Complex64::new(st.y[3 * ns + 2 * i], st.y[3 * ns + 2 * i + 1]) - xi).norm()))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                match nearest {
                    Some((i, d)) if d <= cfg.eps_swallow.sqrt() => {
                        active[i] = false;
                        swallowed_at[i] = Some(st.t);
                        continue 'outer;
                    }
                    _ => return Err(ChainError::StepUnderflow { t, h, cause: last }),
                }
            }
        }
        let xi = driver.xi(st.t);
        for i in 0..np {
            if active[i] {
                let g = Complex64::new(st.y[3 * ns + 2 * i], st.y[3 * ns + 2 * i + 1]);
                if (g - xi).norm() <= cfg.eps_swallow {
                    active[i] = false;
                    swallowed_at[i] = Some(st.t);
                    st.f[3 * ns + 2 * i] = 0.0;
                    st.f[3 * ns + 2 * i + 1] = 0.0;
                }
            }
        }
        let s = SlitVector::validate(&st.y[..3 * ns]).expect("accepted states are valid");
        hist.times.push(st.t);
        hist.xi.push(xi);
        hist.g.push(unpack(&st.y));
        hist.dg.push(unpack(&st.f));
        hist.ds.push(st.f[..3 * ns].to_vec());
        let reason = if ns == 0 { None } else { explosion(&s, xi, &cfg.evolve) };
        hist.slits.push(s);
        if let Some(reason) = reason {
            hist.status = Status::Exploded { zeta: st.t, reason };
            break;
        }
        if st.t >= target && stop_idx + 1 < stops.len() {
            stop_idx += 1;
        }
    }
    hist.swallowed_at = swallowed_at;
    Ok(hist)
}

/// Initial positions of user points swallowed by time `t`.
pub fn hull_at(history: &MapHistory, t: f64) -> Vec<Complex64> {
    history.points[..history.user_points]
        .iter()
        .zip(&history.swallowed_at)
        .filter(|(_, sw)| sw.is_some_and(|s| s <= t))
        .map(|(z, _)| *z)
        .collect()
}

/// Laurent coefficient of `g_t(z) = z + a/z + …` from the tracked probes:
/// the real part of the mean of `z (g_t(z) − z)` over the half circle.
pub fn hcap_estimate(history: &MapHistory, t: f64) -> Result<f64, ChainError> {
    let rho = history.probe_radius.ok_or(ChainError::NoProbes)?;
    let hull = hull_at(history, t);
    let size = hull
        .iter()
        .map(|z| z.norm())
        .fold(config_size(&history.slits[0]), f64::max);
    if rho < 4.0 * size {
        return Err(ChainError::ProbeTooClose { rho, size });
    }
    let g = history.g_at(t)?;
    let start = history.user_points;
    let sum: Complex64 = history.points[start..]
        .iter()
        .zip(&g[start..])
        .map(|(z, gz)| z * (gz - z))
        .sum();
    Ok(sum.re / PROBE_COUNT as f64)
}

/// Approximates the tip `γ(t)` by flowing `ξ(t) + iδ` backward to time 0
/// along the recorded slit trajectory.
pub fn trace_tip(
    traj: &Trajectory,
    driver: &DeterministicDriver,
    t: f64,
    delta: f64,
    cfg: &EvolveConfig,
) -> Result<Complex64, ChainError> {
    let z0 = Complex64::new(driver.xi(t), delta);
    if t <= 0.0 {
        return Ok(z0);
    }
    if t > traj.t_end() + 1e-12 {
        return Err(ChainError::OutOfRange(t));
    }
    let slits_at = |tau: f64| -> SlitVector {
        if traj.derivs.len() == traj.len() {
            SlitVector::validate(&traj.sample(t - tau)).expect("interpolated slits are valid")
        } else {
            traj.states[traj.times.partition_point(|&s| s < t - tau).min(traj.len() - 1)].clone()
        }
    };
    let mut rhs = |tau: f64, y: &[f64], out: &mut [f64]| -> Result<(), KernelError> {
        let s = slits_at(tau);
        let sol = solve_kernel(&s, driver.xi(t - tau), &cfg.kernel)?;
        let v = 2.0 * PI * sol.eval_psi(Complex64::new(y[0], y[1]))?;
        out[0] = v.re;
        out[1] = v.im;
        Ok(())
    };
    let mut admissible = |tau: f64, y: &[f64]| {
        let z = Complex64::new(y[0], y[1]);
        z.re.is_finite() && z.im.is_finite() && slits_at(tau).contains(z)
    };
    let mut f = vec![0.0; 2];
    rhs(0.0, &[z0.re, z0.im], &mut f)?;
    let opts = Rk45Options {
        rtol: cfg.rtol,
        atol: cfg.atol,
        ..Rk45Options::default()
    };
    let mut st = Rk45::new(0.0, vec![z0.re, z0.im], f, 1e-3 * delta * delta, opts);
    while st.t < t {
        if let Err(StepError::Underflow { t: tau, .. }) = st.step(&mut rhs, cfg.h_max, t, None, &mut admissible) {
            return Err(ChainError::BackwardBlowup {
                t: t - tau,
                z: Complex64::new(st.y[0], st.y[1]),
            });
        }
    }
    Ok(Complex64::new(st.y[0], st.y[1]))
}
