//! `ι_t` from characteristics.
//!
//! Points `z` of a circle `Γ` around the initial driver are carried along
//! both flows, `w = g_t(z)` by the Komatu-Loewner field and `v = g⁰_t(z)` by
//! `dv/dt = ȧ⁰ / (v − U)`. Since `ι_t(w) = v`, the image contour carries `ι_t`
//! exactly, and `U`, `ι′(ξ)`, `ι″(ξ)` follow from the trapezoidal Cauchy
//! integral over it. Both flows are ordinary ODEs at fixed `z`, so nothing is
//! ever continued analytically. The scheme lasts as long as the hull stays
//! inside `Γ`; the quadrature error estimate reports when it stops doing so.

use super::{
    pack, radius_for, stop_times, unpack, Circle, DrivingPath, IotaConfig, IotaHistory, IotaState, TransformError,
};
use crate::exec;
use crate::kernel::{solve_kernel, KernelError};
use crate::rk45::{Rk45, Rk45Options, StepError};
use num_complex::Complex64;
use std::f64::consts::PI;

/// Spectral differentiation on `n` equispaced periodic samples (`n` even).
struct Diff {
    n: usize,
    row: Vec<f64>,
}

impl Diff {
    fn new(n: usize) -> Self {
        let h = 2.0 * PI / n as f64;
        let row = (0..n)
            .map(|d| {
                if d == 0 {
                    0.0
                } else {
                    let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
                    0.5 * sign / (0.5 * d as f64 * h).tan()
                }
            })
            .collect();
        Diff { n, row }
    }

    fn apply(&self, f: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        (0..n)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, fj) in f.iter().enumerate() {
                    acc += fj * self.row[(k + n - j) % n];
                }
                acc
            })
            .collect()
    }
}

/// Whole contour from its upper half: sample `k ≥ M` mirrors `2M − 1 − k`.
fn mirror(upper: &[Complex64]) -> Vec<Complex64> {
    let m = upper.len();
    let mut full = upper.to_vec();
    full.extend((0..m).map(|k| upper[m - 1 - k].conj()));
    full
}

struct Ctx<'a> {
    m: usize,
    diff: Diff,
    cfg: &'a IotaConfig,
}

struct Eval {
    out: Vec<f64>,
    u: Complex64,
    i1: Complex64,
    i2: Complex64,
    dt0: Complex64,
    dt1: Complex64,
    bmd: f64,
    /// Full rule against the even-node rule for `ι′(ξ)`.
    error: f64,
    w: Vec<Complex64>,
    dw: Vec<Complex64>,
    v: Vec<Complex64>,
}

impl Ctx<'_> {
    fn evaluate(&self, path: &impl DrivingPath, t: f64, y: &[f64]) -> Result<Eval, KernelError> {
        let m = self.m;
        let n = 2 * m;
        let xi = path.xi(t);
        let s = path.slits(t);
        let sol = if s.is_empty() {
            None
        } else {
            Some(solve_kernel(&s, xi, &self.cfg.kernel)?)
        };
        let xz = Complex64::new(xi, 0.0);
        let all = unpack(&y[..4 * m]);
        let w = mirror(&all[..m]);
        let v = mirror(&all[m..]);
        let dw = self.diff.apply(&w);
        let wdot_up = exec::map(&all[..m], |&z| {
            let h = sol.as_ref().map_or(Complex64::new(0.0, 0.0), |k| k.eval_h(z));
            2.0 / (z - xz) - 2.0 * PI * h
        });
        let wdot = mirror(&wdot_up);
        let dwdot = self.diff.apply(&wdot);

        // sums (1/iN) Σ v w′ / (w − ξ)^k, k = 1, 2, 3, full and even-node rules
        let scale = Complex64::new(0.0, -1.0 / n as f64);
        let mut c = [Complex64::new(0.0, 0.0); 3];
        let mut even = Complex64::new(0.0, 0.0);
        for j in 0..n {
            let r = 1.0 / (w[j] - xz);
            let base = v[j] * dw[j] * r;
            c[0] += base;
            c[1] += base * r;
            c[2] += base * r * r;
            if j % 2 == 0 {
                even += 2.0 * base * r;
            }
        }
        let u = c[0] * scale;
        let i1 = c[1] * scale;
        let i2 = 2.0 * c[2] * scale;
        let error = ((even - c[1]) * scale).norm();

        let lead = 2.0 * i1 * i1;
        let vdot: Vec<Complex64> = v.iter().map(|vj| lead / (vj - u)).collect();
        // ∂ₜ of the Cauchy sums at fixed ξ
        let (mut d0, mut d1) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for j in 0..n {
            let r = 1.0 / (w[j] - xz);
            let a = (vdot[j] * dw[j] + v[j] * dwdot[j]) * r - v[j] * dw[j] * wdot[j] * r * r;
            d0 += a;
            d1 += a * r - v[j] * dw[j] * wdot[j] * r * r * r;
        }
        let mut out = vec![0.0; y.len()];
        pack(&wdot_up, &mut out[..2 * m]);
        pack(&vdot[..m], &mut out[2 * m..4 * m]);
        out[4 * m] = lead.re;
        Ok(Eval {
            out,
            u,
            i1,
            i2,
            dt0: d0 * scale,
            dt1: d1 * scale,
            bmd: sol.as_ref().map_or(0.0, |k| k.bmd()),
            error,
            w,
            dw,
            v,
        })
    }
}

/// Cauchy interpolation of `ι` at `p` from the contour, with the winding
/// number of the contour around `p`.
fn interpolate(ev: &Eval, p: Complex64) -> (Complex64, Complex64) {
    let n = ev.w.len() as f64;
    let (mut f, mut wind) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for j in 0..ev.w.len() {
        let q = ev.dw[j] / (ev.w[j] - p);
        f += ev.v[j] * q;
        wind += q;
    }
    let scale = Complex64::new(0.0, -1.0 / n);
    (f * scale, wind * scale)
}

pub(super) fn evolve(
    path: &impl DrivingPath,
    t_max: f64,
    points: &[Complex64],
    cfg: &IotaConfig,
) -> Result<IotaHistory, TransformError> {
    let m = cfg.contour_nodes.max(8);
    let xi0 = path.xi(0.0);
    let s0 = path.slits(0.0);
    let rho0 = if s0.is_empty() {
        1.0
    } else {
        cfg.contour_fraction * s0.distance_r(xi0)
    };
    let gamma: Vec<Complex64> = (0..m)
        .map(|k| Complex64::new(xi0, 0.0) + Complex64::from_polar(rho0, PI * (k as f64 + 0.5) / m as f64))
        .collect();
    let mut y = vec![0.0; 4 * m + 1];
    pack(&gamma, &mut y[..2 * m]);
    pack(&gamma, &mut y[2 * m..4 * m]);
    let ctx = Ctx {
        m,
        diff: Diff::new(2 * m),
        cfg,
    };
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
    let mut record = |t: f64, y: &[f64], hist: &mut IotaHistory| -> Result<Vec<f64>, TransformError> {
        let ev = ctx.evaluate(path, t, y)?;
        if ev.error > cfg.contour_tol {
            return Err(TransformError::ContourResolution { t, estimate: ev.error });
        }
        hist.max_interp_error = hist.max_interp_error.max(ev.error);
        let i1 = ev.i1.re;
        if !(i1 > 0.0 && i1.is_finite()) {
            return Err(TransformError::Degenerate { t, value: i1 });
        }
        lo = lo.min(i1);
        hi = hi.max(i1);
        hist.iota1_ratio = hi / lo;
        let xi = path.xi(t);
        let s = path.slits(t);
        let r = s.distance_r(xi);
        let (vl, vr) = (path.xi_dot(t, false), path.xi_dot(t, true));
        let mut pts = Vec::with_capacity(points.len());
        for (i, &p) in points.iter().enumerate() {
            let (f, wind) = interpolate(&ev, p);
            if (wind - 1.0).norm() > 1e-8 {
                return Err(TransformError::PointTooClose { index: i, t });
            }
            pts.push(f);
        }
        let xz = Complex64::new(xi, 0.0);
        let reach = ev.w.iter().map(|w| (w - xz).norm()).fold(f64::INFINITY, f64::min);
        let circle = Circle {
            center: xz,
            rho: radius_for(r, cfg.radius_fraction).min(0.5 * reach),
            nodes: cfg.center_nodes,
            modes: cfg.modes,
        };
        let circle_values = (0..circle.nodes).map(|k| interpolate(&ev, circle.node(k)).0).collect();
        hist.states.push(IotaState {
            t,
            xi,
            u: ev.u.re,
            u_im: ev.u.im,
            iota1: i1,
            iota2: ev.i2.re,
            a0: y[4 * m],
            udot: (ev.dt0.re + i1 * vl, ev.dt0.re + i1 * vr),
            adot: 2.0 * i1 * i1,
            addot: (
                4.0 * i1 * (ev.dt1.re + ev.i2.re * vl),
                4.0 * i1 * (ev.dt1.re + ev.i2.re * vr),
            ),
            dt_iota_at_xi: ev.dt0.re,
            bmd: ev.bmd,
            r,
            points: pts,
            circle,
            circle_values,
        });
        Ok(ev.out)
    };

    let f0 = record(0.0, &y, &mut hist)?;
    let h0 = Rk45::initial_step(&y, &f0, &opts, cfg.h_max);
    let mut st = Rk45::new(0.0, y, f0, h0, opts);
    for stop in stop_times(path, t_max, cfg) {
        while st.t < stop {
            let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), KernelError> {
                out.copy_from_slice(&ctx.evaluate(path, t, y)?.out);
                Ok(())
            };
            let mut ok = |_: f64, y: &[f64]| (0..m).all(|k| y[2 * k + 1] > 0.0);
            if let Err(StepError::Underflow { t, h, last }) = st.step(&mut rhs, cfg.h_max, stop, None, &mut ok) {
                return Err(last.map_or(TransformError::StepUnderflow { t, h }, TransformError::Kernel));
            }
        }
        record(st.t, &st.y, &mut hist)?;
    }
    Ok(hist)
}
