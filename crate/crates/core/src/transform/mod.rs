//! Transfer of a Komatu-Loewner evolution to the half-plane.
//!
//! `ι_t = g⁰_t ∘ ι ∘ g_t⁻¹` is evolved pointwise by
//!
//! ```text
//! ∂ₜι(z) = 2ι′(ξ)² / (ι(z) − U) − 2ι′(z) / (z − ξ) + 2π ι′(z) H(z, ξ)
//! ```
//!
//! on circles of nodes. Each circle carries its own spectral derivative, and
//! the circle around the driver yields `U = ι(ξ)`, `ι′(ξ)` and `ι″(ξ)` by
//! Cauchy interpolation. The half-plane chain then follows
//! `dg⁰/dt = ȧ⁰ / (g⁰ − U)` with `ȧ⁰ = 2ι′(ξ)²`.
//!
//! The circle scheme has to re-seed its nodes by analytic continuation
//! whenever the driver moves, which degrades on Brownian drivers. The
//! [`IotaMethod::Contour`] scheme instead follows a fixed contour along the
//! characteristics `ι_t(g_t(z)) = g⁰_t(z)`; see [`contour`].

pub mod contour;

use crate::driver::DeterministicDriver;
use crate::geometry::SlitVector;
use crate::kernel::{solve_kernel, KernelConfig, KernelError, KernelSolution};
use crate::rk45::{Rk45, Rk45Options, StepError};
use crate::skle::{CoefficientSpec, SklePath};
use crate::slit_ode::Trajectory;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TransformError {
    #[error("a slit entered the derivative circle at t = {t} (distance {dist:.3e}, radius {rho:.3e})")]
    CircleCollision { t: f64, dist: f64, rho: f64 },
    #[error("tracked point {index} came too close to the driver or a slit at t = {t}")]
    PointTooClose { index: usize, t: f64 },
    #[error("step size fell to {h:.3e} at t = {t}")]
    StepUnderflow { t: f64, h: f64 },
    #[error("t_max must lie in (0, {limit}], got {t_max}")]
    BadHorizon { t_max: f64, limit: f64 },
    #[error("iota'(xi) = {value} at t = {t} is not positive")]
    Degenerate { t: f64, value: f64 },
    #[error("capacity is not strictly increasing at t = {0}")]
    NonMonotoneCapacity(f64),
    #[error("increments do not match the path: {0}")]
    IncrementMismatch(String),
    #[error("time {0} outside the recorded range")]
    OutOfRange(f64),
    #[error("contour quadrature lost accuracy at t = {t} (estimate {estimate:.3e})")]
    ContourResolution { t: f64, estimate: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Slits and driver as functions of time.
pub trait DrivingPath: Sync {
    fn t_end(&self) -> f64;
    /// Times the integrator must land on.
    fn breakpoints(&self) -> &[f64];
    fn xi(&self, t: f64) -> f64;
    /// One-sided derivative of the driver.
    fn xi_dot(&self, t: f64, right: bool) -> f64;
    fn slits(&self, t: f64) -> SlitVector;
}

/// Slit trajectory under a deterministic driver.
pub struct DrivenTrajectory<'a> {
    pub traj: &'a Trajectory,
    pub driver: &'a DeterministicDriver,
}

impl DrivingPath for DrivenTrajectory<'_> {
    fn t_end(&self) -> f64 {
        self.traj.t_end()
    }

    fn breakpoints(&self) -> &[f64] {
        &self.traj.times
    }

    fn xi(&self, t: f64) -> f64 {
        self.driver.xi(t)
    }

    fn xi_dot(&self, t: f64, right: bool) -> f64 {
        self.driver.xi_dot(t, right)
    }

    fn slits(&self, t: f64) -> SlitVector {
        SlitVector::validate(&self.traj.sample(t)).expect("interpolated slits stay admissible")
    }
}

/// An SKLE path, with the driver linear between nodes.
impl DrivingPath for SklePath {
    fn t_end(&self) -> f64 {
        self.trajectory.t_end()
    }

    fn breakpoints(&self) -> &[f64] {
        &self.trajectory.times
    }

    fn xi(&self, t: f64) -> f64 {
        crate::driver::interp_linear(&self.trajectory.times, &self.trajectory.xi, t)
    }

    fn xi_dot(&self, t: f64, right: bool) -> f64 {
        let (ts, xs) = (&self.trajectory.times, &self.trajectory.xi);
        let n = ts.len();
        if n < 2 {
            return 0.0;
        }
        let k = if right {
            ts.partition_point(|&s| s <= t).clamp(1, n - 1) - 1
        } else {
            ts.partition_point(|&s| s < t).clamp(1, n - 1) - 1
        };
        (xs[k + 1] - xs[k]) / (ts[k + 1] - ts[k])
    }

    fn slits(&self, t: f64) -> SlitVector {
        SlitVector::validate(&self.trajectory.sample(t)).expect("interpolated slits stay admissible")
    }
}

/// Equispaced nodes on a circle with spectral evaluation of the analytic
/// function they sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Complex64,
    pub rho: f64,
    pub nodes: usize,
    /// Retained Taylor modes, at most `nodes / 2`.
    pub modes: usize,
}

impl Circle {
    pub fn node(&self, k: usize) -> Complex64 {
        self.center + Complex64::from_polar(self.rho, 2.0 * PI * k as f64 / self.nodes as f64)
    }

    /// Normalised Taylor coefficients `a_n ρⁿ`, `n < modes`, from node values.
    /// Negative frequencies, which an analytic function does not have, and
    /// the oversampled band are dropped.
    pub fn coefficients(&self, vals: &[Complex64]) -> Vec<Complex64> {
        let n = self.nodes;
        (0..self.modes.min(n / 2))
            .map(|m| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, v) in vals.iter().enumerate() {
                    acc += v * Complex64::from_polar(1.0, -2.0 * PI * ((m * k) % n) as f64 / n as f64);
                }
                acc / n as f64
            })
            .collect()
    }

    /// Value and first two derivatives at `z` from normalised coefficients.
    fn eval(&self, c: &[Complex64], z: Complex64) -> [Complex64; 3] {
        let w = (z - self.center) / self.rho;
        let zero = Complex64::new(0.0, 0.0);
        let (mut f, mut d1, mut d2) = (zero, zero, zero);
        for (n, a) in c.iter().enumerate().rev() {
            let nf = n as f64;
            f = f * w + a;
            if n >= 1 {
                d1 = d1 * w + a * nf;
            }
            if n >= 2 {
                d2 = d2 * w + a * (nf * (nf - 1.0));
            }
        }
        [f, d1 / self.rho, d2 / (self.rho * self.rho)]
    }

    /// Node values of the analytic part of `vals`.
    fn project(&self, vals: &mut [Complex64]) {
        let c = self.coefficients(vals);
        for (k, v) in vals.iter_mut().enumerate() {
            *v = self.eval(&c, self.node(k))[0];
        }
    }

    /// Derivative at every node.
    fn node_derivatives(&self, c: &[Complex64]) -> Vec<Complex64> {
        let n = self.nodes;
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (m, a) in c.iter().enumerate().skip(1) {
                    acc += a * m as f64 * Complex64::from_polar(1.0, 2.0 * PI * (((m - 1) * k) % n) as f64 / n as f64);
                }
                acc / self.rho
            })
            .collect()
    }
}

/// How `ι_t` near the driver is represented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IotaMethod {
    /// Node values on a circle around `ξ`, moved along with it.
    #[default]
    Circle,
    /// Characteristics from a fixed contour around the initial driver.
    Contour,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IotaConfig {
    pub method: IotaMethod,
    pub kernel: KernelConfig,
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    /// Nodes on the circle around the driver.
    pub center_nodes: usize,
    /// Nodes on the circle around each tracked point.
    pub point_nodes: usize,
    /// Taylor modes kept on every circle.
    pub modes: usize,
    /// Driver circle radius as a fraction of the distance to the slits.
    pub radius_fraction: f64,
    /// Contour points on the upper half; the lower half is mirrored.
    pub contour_nodes: usize,
    /// Contour radius as a fraction of the initial distance to the slits.
    pub contour_fraction: f64,
    /// Largest tolerated quadrature error estimate on the contour.
    pub contour_tol: f64,
    /// Extra times at which the history is recorded.
    pub report_times: Vec<f64>,
}

impl Default for IotaConfig {
    fn default() -> Self {
        IotaConfig {
            kernel: KernelConfig::default(),
            rtol: 1e-10,
            atol: 1e-12,
            h_max: 0.02,
            center_nodes: 64,
            point_nodes: 32,
            modes: 12,
            radius_fraction: 0.25,
            method: IotaMethod::Circle,
            contour_nodes: 128,
            contour_fraction: 0.8,
            contour_tol: 1e-8,
            report_times: Vec::new(),
        }
    }
}

/// Snapshot of `ι_t` at one recorded time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotaState {
    pub t: f64,
    pub xi: f64,
    /// `U = ι(ξ)`.
    pub u: f64,
    /// Imaginary part of `ι(ξ)`, zero up to rounding.
    pub u_im: f64,
    pub iota1: f64,
    pub iota2: f64,
    pub a0: f64,
    /// `dU/dt` from the left and from the right.
    pub udot: (f64, f64),
    /// `da⁰/dt = 2ι′(ξ)²`.
    pub adot: f64,
    /// `d²a⁰/dt²` from the left and from the right.
    pub addot: (f64, f64),
    /// `∂ₜι` at `ξ` by Cauchy interpolation of the circle values.
    pub dt_iota_at_xi: f64,
    /// `b_BMD` of the current configuration.
    pub bmd: f64,
    /// `R(ξ, s)`.
    pub r: f64,
    /// `ι` at the tracked points.
    pub points: Vec<Complex64>,
    pub circle: Circle,
    pub circle_values: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IotaHistory {
    pub states: Vec<IotaState>,
    /// Number of times the driver circle was moved.
    pub recenterings: usize,
    /// Largest estimated interpolation error: circle re-seeding, or the
    /// contour quadrature.
    pub max_interp_error: f64,
    /// Largest observed `ι′(ξ)` over smallest, over the run.
    pub iota1_ratio: f64,
}

impl IotaHistory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.t).collect()
    }

    pub fn t_end(&self) -> f64 {
        self.states.last().map_or(0.0, |s| s.t)
    }

    /// The state recorded exactly at `t`, if any.
    pub fn at(&self, t: f64) -> Option<&IotaState> {
        let k = self.states.partition_point(|s| s.t < t);
        self.states.get(k).filter(|s| s.t == t)
    }

    fn bracket(&self, t: f64) -> Result<usize, TransformError> {
        let n = self.states.len();
        if n < 2 || t < self.states[0].t || t > self.states[n - 1].t {
            return Err(TransformError::OutOfRange(t));
        }
        Ok(self.states.partition_point(|s| s.t <= t).clamp(1, n - 1) - 1)
    }

    /// Cubic Hermite interpolation of `U` and `ȧ⁰` at `t`.
    pub fn u_adot_at(&self, t: f64) -> Result<(f64, f64), TransformError> {
        let k = self.bracket(t)?;
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        Ok((
            hermite1(a.t, a.u, a.udot.1, b.t, b.u, b.udot.0, t),
            hermite1(a.t, a.adot, a.addot.1, b.t, b.adot, b.addot.0, t),
        ))
    }

    /// `a⁰(t)` by cubic Hermite interpolation.
    pub fn a0_at(&self, t: f64) -> Result<f64, TransformError> {
        let k = self.bracket(t)?;
        let (a, b) = (&self.states[k], &self.states[k + 1]);
        Ok(hermite1(a.t, a.a0, a.adot, b.t, b.a0, b.adot, t))
    }
}

fn hermite1(t0: f64, y0: f64, d0: f64, t1: f64, y1: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (-2.0 * s3 + 3.0 * s2) * y1
        + (s3 - s2) * h * d1
}

fn pack(vals: &[Complex64], out: &mut [f64]) {
    for (i, v) in vals.iter().enumerate() {
        out[2 * i] = v.re;
        out[2 * i + 1] = v.im;
    }
}

fn unpack(y: &[f64]) -> Vec<Complex64> {
    y.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
}

/// Layout of the packed state: driver circle, then one circle per point,
/// then `a⁰`.
struct Layout {
    center: Circle,
    points: Vec<Circle>,
}

impl Layout {
    fn circles(&self) -> impl Iterator<Item = &Circle> {
        std::iter::once(&self.center).chain(self.points.iter())
    }

    fn len(&self) -> usize {
        2 * self.circles().map(|c| c.nodes).sum::<usize>() + 1
    }
}

/// Everything the right-hand side knows at one `(t, y)`.
struct Eval {
    out: Vec<f64>,
    u: Complex64,
    i1: Complex64,
    i2: Complex64,
    /// `∂ₜι` and `∂ₜι′` at `ξ`.
    dt0: Complex64,
    dt1: Complex64,
    bmd: f64,
}

fn evaluate(
    lay: &Layout,
    path: &impl DrivingPath,
    cfg: &IotaConfig,
    t: f64,
    y: &[f64],
) -> Result<Eval, KernelError> {
    let xi = path.xi(t);
    let s = path.slits(t);
    let sol: Option<KernelSolution> = if s.is_empty() {
        None
    } else {
        Some(solve_kernel(&s, xi, &cfg.kernel)?)
    };
    let h = |z: Complex64| sol.as_ref().map_or(Complex64::new(0.0, 0.0), |k| k.eval_h(z));
    let xz = Complex64::new(xi, 0.0);
    let vals = unpack(&y[..y.len() - 1]);
    let cc = lay.center;
    let c0 = cc.coefficients(&vals[..cc.nodes]);
    let [u, i1, i2] = cc.eval(&c0, xz);
    let lead = 2.0 * i1 * i1;
    let mut rhs = Vec::with_capacity(vals.len());
    let mut off = 0;
    for circle in lay.circles() {
        let v = &vals[off..off + circle.nodes];
        let coef = if off == 0 { c0.clone() } else { circle.coefficients(v) };
        let d = circle.node_derivatives(&coef);
        let mut r: Vec<Complex64> = (0..circle.nodes)
            .map(|k| {
                let z = circle.node(k);
                lead / (v[k] - u) - 2.0 * d[k] / (z - xz) + 2.0 * PI * d[k] * h(z)
            })
            .collect();
        circle.project(&mut r);
        rhs.extend(r);
        off += circle.nodes;
    }
    let g = cc.coefficients(&rhs[..cc.nodes]);
    let [dt0, dt1, _] = cc.eval(&g, xz);
    let mut out = vec![0.0; y.len()];
    pack(&rhs, &mut out);
    *out.last_mut().unwrap() = lead.re;
    let bmd = sol.as_ref().map_or(0.0, |k| k.bmd());
    Ok(Eval {
        out,
        u,
        i1,
        i2,
        dt0,
        dt1,
        bmd,
    })
}

fn radius_for(r: f64, frac: f64) -> f64 {
    (frac * r).min(0.5)
}

/// Initial circle around a tracked point.
fn point_circle(p: Complex64, s: &SlitVector, xi: f64, nodes: usize, modes: usize) -> Circle {
    let d = s.dist_to_slits_and_mirrors(p).min((p - xi).norm());
    Circle {
        center: p,
        rho: (0.25 * d).min(0.5),
        nodes,
        modes,
    }
}

/// Evolves `ι_t` along `path` up to `t_max`, tracking `ι_t` at the fixed
/// points `points`. Records a state at every breakpoint of the path, every
/// report time and `t_max`.
pub fn evolve_iota(
    path: &impl DrivingPath,
    t_max: f64,
    points: &[Complex64],
    cfg: &IotaConfig,
) -> Result<IotaHistory, TransformError> {
    let limit = path.t_end();
    if !(t_max > 0.0 && t_max <= limit) {
        return Err(TransformError::BadHorizon { t_max, limit });
    }
    if cfg.method == IotaMethod::Contour {
        return contour::evolve(path, t_max, points, cfg);
    }
    let xi0 = path.xi(0.0);
    let s0 = path.slits(0.0);
    let r0 = s0.distance_r(xi0);
    let mut lay = Layout {
        center: Circle {
            center: Complex64::new(xi0, 0.0),
            rho: radius_for(r0, cfg.radius_fraction),
            nodes: cfg.center_nodes,
            modes: cfg.modes,
        },
        points: points.iter().map(|p| point_circle(*p, &s0, xi0, cfg.point_nodes, cfg.modes)).collect(),
    };
    for (i, c) in lay.points.iter().enumerate() {
        if !(c.rho > 0.0) {
            return Err(TransformError::PointTooClose { index: i, t: 0.0 });
        }
    }
    let mut y = vec![0.0; lay.len()];
    let init: Vec<Complex64> = lay.circles().flat_map(|c| (0..c.nodes).map(|k| c.node(k))).collect();
    pack(&init, &mut y);

    let stops = stop_times(path, t_max, cfg);

    let opts = Rk45Options {
        rtol: cfg.rtol,
        atol: cfg.atol,
        ..Rk45Options::default()
    };
    let mut hist = IotaHistory {
        states: Vec::new(),
        recenterings: 0,
        max_interp_error: 0.0,
        iota1_ratio: 1.0,
    };
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    let mut record = |lay: &Layout, t: f64, y: &[f64], hist: &mut IotaHistory| -> Result<Vec<f64>, TransformError> {
        let ev = evaluate(lay, path, cfg, t, y)?;
        let i1 = ev.i1.re;
        if !(i1 > 0.0 && i1.is_finite()) {
            return Err(TransformError::Degenerate { t, value: i1 });
        }
        lo = lo.min(i1);
        hi = hi.max(i1);
        hist.iota1_ratio = hi / lo;
        let xi = path.xi(t);
        let (vl, vr) = (path.xi_dot(t, false), path.xi_dot(t, true));
        let vals = unpack(&y[..y.len() - 1]);
        let mut pts = Vec::with_capacity(lay.points.len());
        let mut off = lay.center.nodes;
        for c in &lay.points {
            let v = &vals[off..off + c.nodes];
            pts.push(v.iter().sum::<Complex64>() / c.nodes as f64);
            off += c.nodes;
        }
        let s = path.slits(t);
        hist.states.push(IotaState {
            t,
            xi,
            u: ev.u.re,
            u_im: ev.u.im,
            iota1: i1,
            iota2: ev.i2.re,
            a0: *y.last().unwrap(),
            udot: (ev.dt0.re + i1 * vl, ev.dt0.re + i1 * vr),
            adot: 2.0 * i1 * i1,
            addot: (
                4.0 * i1 * (ev.dt1.re + ev.i2.re * vl),
                4.0 * i1 * (ev.dt1.re + ev.i2.re * vr),
            ),
            dt_iota_at_xi: ev.dt0.re,
            bmd: ev.bmd,
            r: s.distance_r(xi),
            points: pts,
            circle: lay.center,
            circle_values: vals[..lay.center.nodes].to_vec(),
        });
        Ok(ev.out)
    };

    let f0 = record(&lay, 0.0, &y, &mut hist)?;
    let h0 = Rk45::initial_step(&y, &f0, &opts, cfg.h_max);
    let mut st = Rk45::new(0.0, y, f0, h0, opts);
    for &stop in &stops {
        while st.t < stop {
            let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), KernelError> {
                out.copy_from_slice(&evaluate(&lay, path, cfg, t, y)?.out);
                Ok(())
            };
            let mut ok = |_: f64, _: &[f64]| true;
            // keep the driver well inside the circle over one step
            let speed = path.xi_dot(st.t, true).abs();
            let cap = cfg.h_max.min(0.2 * lay.center.rho / speed.max(1e-300));
            if let Err(StepError::Underflow { t, h, last }) = st.step(&mut rhs, cap, stop, None, &mut ok) {
                return Err(last.map_or(TransformError::StepUnderflow { t, h }, TransformError::Kernel));
            }
            let t = st.t;
            check_points(&lay, path, t)?;
            if let Some(moved) = recenter(&mut lay, path, t, &mut st.y, cfg.radius_fraction) {
                hist.recenterings += 1;
                hist.max_interp_error = hist.max_interp_error.max(moved);
                let f = evaluate(&lay, path, cfg, t, &st.y)?.out;
                let h = st.h();
                st = Rk45::new(t, st.y.clone(), f, h, opts);
            }
            if t == stop {
                record(&lay, t, &st.y, &mut hist)?;
            }
        }
    }
    Ok(hist)
}

fn stop_times(path: &impl DrivingPath, t_max: f64, cfg: &IotaConfig) -> Vec<f64> {
    let mut stops: Vec<f64> = path
        .breakpoints()
        .iter()
        .chain(&cfg.report_times)
        .copied()
        .filter(|t| *t > 0.0 && *t < t_max)
        .collect();
    stops.push(t_max);
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    stops
}

fn check_points(lay: &Layout, path: &impl DrivingPath, t: f64) -> Result<(), TransformError> {
    let xi = path.xi(t);
    let s = path.slits(t);
    for (i, c) in lay.points.iter().enumerate() {
        if (c.center - xi).norm() <= 2.0 * c.rho || s.dist_to_slits_and_mirrors(c.center) <= 2.0 * c.rho {
            return Err(TransformError::PointTooClose { index: i, t });
        }
    }
    let dist = s.dist_to_slits_and_mirrors(lay.center.center);
    if dist <= lay.center.rho {
        return Err(TransformError::CircleCollision {
            t,
            dist,
            rho: lay.center.rho,
        });
    }
    Ok(())
}

/// Moves the driver circle once the driver is more than `0.3ρ` off centre or
/// the slits crowd it, re-seeding node values from the old Taylor expansion.
/// Returns the estimated re-seeding error when a move happened.
fn recenter(
    lay: &mut Layout,
    path: &impl DrivingPath,
    t: f64,
    y: &mut [f64],
    frac: f64,
) -> Option<f64> {
    let xi = path.xi(t);
    let s = path.slits(t);
    let old = lay.center;
    let target = radius_for(s.distance_r(xi), frac);
    let off = (Complex64::new(xi, 0.0) - old.center).norm();
    let crowded = s.dist_to_slits_and_mirrors(old.center) < 3.0 * old.rho;
    if off <= 0.3 * old.rho && !crowded && old.rho <= 1.5 * target {
        return None;
    }
    let new = Circle {
        center: Complex64::new(xi, 0.0),
        rho: target.min(1.25 * old.rho),
        nodes: old.nodes,
        modes: old.modes,
    };
    let vals = unpack(&y[..2 * old.nodes]);
    let coef = old.coefficients(&vals);
    let reach = (off + new.rho) / old.rho;
    // size of the last retained terms at the farthest new node
    let tail = coef[coef.len() - 2..]
        .iter()
        .map(|a| a.norm())
        .fold(0.0, f64::max)
        * reach.powi(old.modes as i32 - 1);
    let fresh: Vec<Complex64> = (0..new.nodes).map(|k| old.eval(&coef, new.node(k))[0]).collect();
    pack(&fresh, &mut y[..2 * new.nodes]);
    lay.center = new;
    Some(tail)
}

/// Half-plane chain `g⁰_t` tracked at points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfplaneChain {
    pub times: Vec<f64>,
    pub g: Vec<Vec<Complex64>>,
    pub swallowed_at: Vec<Option<f64>>,
}

impl HalfplaneChain {
    pub fn at(&self, t: f64) -> Option<&[Complex64]> {
        let k = self.times.partition_point(|s| *s < t);
        (self.times.get(k) == Some(&t)).then(|| self.g[k].as_slice())
    }
}

/// Integrates `dg⁰/dt = ȧ⁰(t) / (g⁰ − U(t))` from `g⁰_0(z) = z`, landing on
/// every recorded time of `hist`. Points whose image comes within `1e-6` of
/// `U` are frozen and reported as swallowed.
pub fn loewner_halfplane(
    hist: &IotaHistory,
    points: &[Complex64],
    t_max: f64,
) -> Result<HalfplaneChain, TransformError> {
    let limit = hist.t_end();
    if !(t_max > 0.0 && t_max <= limit) {
        return Err(TransformError::BadHorizon { t_max, limit });
    }
    for w in hist.states.windows(2) {
        if !(w[1].a0 > w[0].a0) {
            return Err(TransformError::NonMonotoneCapacity(w[1].t));
        }
    }
    let m = points.len();
    let mut swallowed: Vec<Option<f64>> = vec![None; m];
    let mut y = vec![0.0; 2 * m];
    pack(points, &mut y);
    let mut chain = HalfplaneChain {
        times: vec![0.0],
        g: vec![points.to_vec()],
        swallowed_at: Vec::new(),
    };
    let opts = Rk45Options {
        rtol: 1e-11,
        atol: 1e-13,
        ..Rk45Options::default()
    };
    let rhs_at = |t: f64, y: &[f64], out: &mut [f64], frozen: &[Option<f64>]| -> Result<(), TransformError> {
        let (u, ad) = hist.u_adot_at(t)?;
        for i in 0..m {
            if frozen[i].is_some() {
                out[2 * i] = 0.0;
                out[2 * i + 1] = 0.0;
                continue;
            }
            let v = ad / (Complex64::new(y[2 * i], y[2 * i + 1]) - u);
            out[2 * i] = v.re;
            out[2 * i + 1] = v.im;
        }
        Ok(())
    };
    let mut f0 = vec![0.0; 2 * m];
    rhs_at(0.0, &y, &mut f0, &swallowed)?;
    let h0 = Rk45::initial_step(&y, &f0, &opts, 0.01);
    let mut st = Rk45::new(0.0, y, f0, h0, opts);
    for s in hist.states.iter().skip(1) {
        let stop = s.t.min(t_max);
        while st.t < stop {
            let (u, ad) = hist.u_adot_at(st.t)?;
            let gap = (0..m)
                .filter(|i| swallowed[*i].is_none())
                .map(|i| (Complex64::new(st.y[2 * i], st.y[2 * i + 1]) - u).norm())
                .fold(f64::INFINITY, f64::min);
            let cap = (0.1 * gap * gap / ad.max(1e-300)).clamp(1e-14, 0.01);
            let frozen = swallowed.clone();
            let weights: Vec<bool> = (0..2 * m).map(|i| frozen[i / 2].is_none()).collect();
            let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| rhs_at(t, y, out, &frozen);
            let mut ok = |_: f64, _: &[f64]| true;
            let res = st.step(&mut rhs, cap, stop, Some(&weights), &mut ok);
            let (u, _) = hist.u_adot_at(st.t)?;
            let mut fresh = false;
            for i in 0..m {
                let g = Complex64::new(st.y[2 * i], st.y[2 * i + 1]);
                if swallowed[i].is_none() && ((g - u).norm() < 1e-6 || res.is_err()) && (g - u).norm() < 1e-3 {
                    swallowed[i] = Some(st.t);
                    fresh = true;
                }
            }
            if let Err(StepError::Underflow { t, h, last }) = res {
                if !fresh {
                    return Err(last.unwrap_or(TransformError::StepUnderflow { t, h }));
                }
            }
            if fresh {
                let mut f = vec![0.0; 2 * m];
                rhs_at(st.t, &st.y, &mut f, &swallowed)?;
                st = Rk45::new(st.t, st.y.clone(), f, st.h().max(1e-10), opts);
            }
        }
        chain.times.push(st.t);
        chain.g.push(unpack(&st.y));
        if st.t >= t_max {
            break;
        }
    }
    chain.swallowed_at = swallowed;
    Ok(chain)
}

/// `hcap` of the transformed hull from probes on a circle of radius `rho`:
/// `Re mean z (g⁰(z) − z)`.
pub fn hcap_halfplane(hist: &IotaHistory, t: f64, rho: f64, probes: usize) -> Result<f64, TransformError> {
    let pts: Vec<Complex64> = (0..probes)
        .map(|k| Complex64::from_polar(rho, 2.0 * PI * (k as f64 + 0.5) / probes as f64))
        .collect();
    let chain = loewner_halfplane(hist, &pts, t)?;
    let g = chain.g.last().unwrap();
    Ok(pts.iter().zip(g).map(|(z, w)| (z * (w - z)).re).sum::<f64>() / probes as f64)
}

/// The capacity reparametrisation `ť = a⁰(t)/2`.
#[derive(Debug, Clone)]
pub struct TimeChange<'a> {
    hist: &'a IotaHistory,
}

impl<'a> TimeChange<'a> {
    pub fn new(hist: &'a IotaHistory) -> Result<Self, TransformError> {
        for w in hist.states.windows(2) {
            if !(w[1].a0 > w[0].a0) {
                return Err(TransformError::NonMonotoneCapacity(w[1].t));
            }
        }
        Ok(TimeChange { hist })
    }

    /// `ť(t) = a⁰(t)/2`.
    pub fn to_check(&self, t: f64) -> Result<f64, TransformError> {
        Ok(0.5 * self.hist.a0_at(t)?)
    }

    /// `t = (a⁰)⁻¹(2ť)` by safeguarded Newton iteration.
    pub fn to_original(&self, tc: f64) -> Result<f64, TransformError> {
        let st = &self.hist.states;
        let target = 2.0 * tc;
        let n = st.len();
        if n < 2 || target < st[0].a0 || target > st[n - 1].a0 {
            return Err(TransformError::OutOfRange(tc));
        }
        let k = st.partition_point(|s| s.a0 <= target).clamp(1, n - 1) - 1;
        let (a, b) = (&st[k], &st[k + 1]);
        let (mut lo, mut hi) = (a.t, b.t);
        let mut t = a.t + (target - a.a0) / (b.a0 - a.a0) * (b.t - a.t);
        for _ in 0..100 {
            let f = hermite1(a.t, a.a0, a.adot, b.t, b.a0, b.adot, t) - target;
            if f.abs() <= 1e-15 * (1.0 + target.abs()) {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let h = b.t - a.t;
            let s = (t - a.t) / h;
            let d = (6.0 * s * s - 6.0 * s) / h * a.a0
                + (3.0 * s * s - 4.0 * s + 1.0) * a.adot
                + (-6.0 * s * s + 6.0 * s) / h * b.a0
                + (3.0 * s * s - 2.0 * s) * b.adot;
            let next = t - f / d;
            t = if d > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo <= 1e-16 * (1.0 + hi.abs()) {
                break;
            }
        }
        Ok(t)
    }
}

/// Which drift term enters the Itô expansion of `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItoForm {
    /// `ι′(b_BMD + b)`, from `∂ₜι(ξ) = −3ι″ + ι′ b_BMD` and `dξ = α dB + b dt`.
    Derived,
    /// `ι′(b_BMD − b)`.
    Flipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItoReport {
    pub rms_gap: f64,
    pub max_gap: f64,
    pub final_gap: f64,
    /// `(t, U geometric, U from the Itô sum)` at every path node.
    pub series: Vec<(f64, f64, f64)>,
}

/// Compares `U(t) = ι_t(ξ(t))` with the left-point Itô sum
/// `ι′α ΔB + ι′(b_BMD ± b) Δt + ½ι″(α² − 6) Δt` over the path's own steps.
pub fn ito_drive_check(
    path: &SklePath,
    coeffs: &CoefficientSpec,
    hist: &IotaHistory,
    form: ItoForm,
) -> Result<ItoReport, TransformError> {
    let tr = &path.trajectory;
    if path.leaf_increments.len() + 1 != tr.len() || path.bmd.len() != tr.len() {
        return Err(TransformError::IncrementMismatch(format!(
            "{} increments and {} b_BMD values for {} nodes",
            path.leaf_increments.len(),
            path.bmd.len(),
            tr.len()
        )));
    }
    let base: f64 = path.increments.iter().sum();
    let leaf: f64 = path.leaf_increments.iter().sum();
    if matches!(tr.status, crate::slit_ode::Status::Completed { .. })
        && (base - leaf).abs() > 1e-9 * (1.0 + base.abs())
    {
        return Err(TransformError::IncrementMismatch(format!("sums {base} vs {leaf}")));
    }
    let alpha = coeffs.alpha.value();
    let sign = match form {
        ItoForm::Derived => 1.0,
        ItoForm::Flipped => -1.0,
    };
    let t_end = hist.t_end();
    let mut ui = tr.xi[0];
    let mut series = Vec::new();
    let (mut sq, mut mx, mut last) = (0.0, 0.0f64, 0.0);
    for k in 0..tr.len() {
        let t = tr.times[k];
        if t > t_end {
            break;
        }
        let st = hist.at(t).ok_or(TransformError::OutOfRange(t))?;
        let gap = (st.u - ui).abs();
        sq += gap * gap;
        mx = mx.max(gap);
        last = gap;
        series.push((t, st.u, ui));
        if k + 1 < tr.len() {
            let h = tr.times[k + 1] - t;
            let bmd = path.bmd[k];
            if !bmd.is_finite() {
                return Err(TransformError::IncrementMismatch(format!("no b_BMD at node {k}")));
            }
            let b = coeffs.drift.value(bmd);
            ui += st.iota1 * alpha * path.leaf_increments[k]
                + st.iota1 * (bmd + sign * b) * h
                + 0.5 * st.iota2 * (alpha * alpha - 6.0) * h;
        }
    }
    Ok(ItoReport {
        rms_gap: (sq / series.len() as f64).sqrt(),
        max_gap: mx,
        final_gap: last,
        series,
    })
}
