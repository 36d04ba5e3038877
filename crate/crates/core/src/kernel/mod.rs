//! The BMD complex Poisson kernel `Ψ_s(·, ξ₀)` of a standard slit domain.
//!
//! `Im Ψ = P + u` with `P(z) = Im(−1/(π(z − ξ₀)))` and `u` a single-layer
//! potential on the slits minus its mirror image, so `u` vanishes on the real
//! axis. The layer density lives on graded Gauss panels; the unknown constant
//! value of `Im Ψ` on each slit is solved for together with the density, and
//! each slit's total charge is forced to zero. Near-field interactions use
//! product integration against the logarithm, so the same representation is
//! accurate up to and on the slits.

mod cache;
pub mod oracle;
pub mod panels;

pub use cache::KernelCache;

use crate::geometry::{SlitVector, EPS_GEOM};
use crate::quadrature::{bernstein_rho, monomial_integral, panel_rule, LogKind, PanelRule};
use num_complex::Complex64;
use panels::{layout, LayoutParams, Panel, PanelKind};
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("collocation residual {residual:.3e} above tolerance {tol:.3e} after {refinements} refinements")]
    IllConditioned {
        residual: f64,
        tol: f64,
        refinements: u32,
    },
    #[error("boundary point {xi} lies within {dist:.3e} of a slit")]
    PointTooClose { xi: f64, dist: f64 },
    #[error("evaluation point {0} is on a slit or at the pole")]
    EvalOnSingularity(Complex64),
    #[error("slit {0} spans fewer than two lattice cells")]
    LatticeTooCoarse(usize),
    #[error("lattice configuration: {0}")]
    BadLattice(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    /// Panel length relative to the local feature scale.
    pub eta: f64,
    /// Largest share of a slit a single panel may cover.
    pub max_frac: f64,
    /// Relative collocation residual accepted without refinement.
    pub tol: f64,
    /// Number of times the panel mesh may be halved.
    pub max_refinements: u32,
    /// Bernstein-ellipse parameter below which product integration is used.
    pub near_rho: f64,
    /// Residual is checked at every `check_stride`-th interior midpoint.
    pub check_stride: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            eta: 1.5,
            max_frac: 0.5,
            tol: 1e-8,
            max_refinements: 3,
            near_rho: 2.6,
            check_stride: 3,
        }
    }
}

/// Slit drift in slit-coordinate order: heights, left ends, right ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftVector {
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelSolution {
    slits: SlitVector,
    xi: f64,
    panels: Vec<Panel>,
    /// Layer density per unit reference variable at the panel nodes.
    psi: Vec<f64>,
    constants: Vec<f64>,
    residual: f64,
    refinements: u32,
    near_rho: f64,
}

/// `P(z) = Im(−1/(π(z − ξ)))`, the half-plane Poisson kernel.
pub fn poisson_halfplane(z: Complex64, xi: f64) -> f64 {
    let dx = z.re - xi;
    z.im / (PI * (dx * dx + z.im * z.im))
}

/// Fills `m` with `∫ t^k log(z − x(t) − i·y_line) dt` when `z` is in the
/// panel's near field; returns false (leaving `m` untouched) otherwise.
fn near_moments(
    panel: &Panel,
    y_line: f64,
    z: Complex64,
    rule: &PanelRule,
    near_rho: f64,
    m: &mut [Complex64],
    tmp: &mut [Complex64],
) -> bool {
    let h = panel.b - panel.a;
    if panel.dist(z, y_line) > 2.0 * h {
        return false;
    }
    let n = rule.n();
    let shift = match panel.kind {
        PanelKind::Interior => {
            let hh = 0.5 * h;
            let mid = 0.5 * (panel.a + panel.b);
            let c = Complex64::new((z.re - mid) / hh, (z.im - y_line) / hh);
            if bernstein_rho(c) >= near_rho {
                return false;
            }
            rule.log_moments(c, LogKind::CMinusT, m);
            hh.ln()
        }
        PanelKind::LeftTip => {
            let z0 = Complex64::new(z.re - panel.a, z.im - y_line);
            let r = (z0 / h).sqrt();
            let c1 = Complex64::new(2.0 * r.re - 1.0, 2.0 * r.im);
            let c2 = Complex64::new(-2.0 * r.re - 1.0, -2.0 * r.im);
            if bernstein_rho(c1).min(bernstein_rho(c2)) >= near_rho {
                return false;
            }
            rule.log_moments(c1, LogKind::CMinusT, m);
            rule.log_moments(c2, LogKind::TMinusC, tmp);
            for (a, b) in m[..n].iter_mut().zip(&tmp[..n]) {
                *a += b;
            }
            h.ln() - 2.0 * LN_2
        }
        PanelKind::RightTip => {
            let z0 = Complex64::new(z.re - panel.b, z.im - y_line);
            let rho = (z0 / h).sqrt();
            let d1 = Complex64::new(-2.0 * rho.im - 1.0, 2.0 * rho.re);
            let d2 = Complex64::new(2.0 * rho.im - 1.0, -2.0 * rho.re);
            if bernstein_rho(d1).min(bernstein_rho(d2)) >= near_rho {
                return false;
            }
            rule.log_moments(d1, LogKind::TMinusC, m);
            rule.log_moments(d2, LogKind::TMinusC, tmp);
            for (a, b) in m[..n].iter_mut().zip(&tmp[..n]) {
                *a += b;
            }
            h.ln() - 2.0 * LN_2
        }
    };
    for (k, mk) in m[..n].iter_mut().enumerate() {
        *mk += monomial_integral(k) * shift;
    }
    true
}

/// Scratch buffers for near-field product integration.
struct Scratch {
    m: Vec<Complex64>,
    tmp: Vec<Complex64>,
    lam: Vec<Complex64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Scratch {
            m: vec![z; n],
            tmp: vec![z; n],
            lam: vec![z; n],
        }
    }

    /// Product weights for panel/line/target, or None in the far field.
    fn weights(
        &mut self,
        panel: &Panel,
        y_line: f64,
        z: Complex64,
        rule: &PanelRule,
        near_rho: f64,
    ) -> Option<&[Complex64]> {
        if near_moments(panel, y_line, z, rule, near_rho, &mut self.m, &mut self.tmp) {
            rule.weights_from_moments(&self.m, &mut self.lam);
            Some(&self.lam)
        } else {
            None
        }
    }
}

struct Discretization {
    panels: Vec<Panel>,
    /// node abscissae, panel-major
    xs: Vec<f64>,
    /// reference weights, panel-major
    ws: Vec<f64>,
}

impl Discretization {
    fn new(panels: Vec<Panel>, rule: &PanelRule) -> Self {
        let mut xs = Vec::with_capacity(panels.len() * rule.n());
        let mut ws = Vec::with_capacity(panels.len() * rule.n());
        for p in &panels {
            for (&t, &w) in rule.gauss.nodes.iter().zip(&rule.gauss.weights) {
                xs.push(p.x_at(t));
                ws.push(w);
            }
        }
        Discretization { panels, xs, ws }
    }
}

/// Row of the map density ↦ `u(z)` (real part of the mirrored log potential).
fn potential_row(
    d: &Discretization,
    z: Complex64,
    rule: &PanelRule,
    near_rho: f64,
    sc: &mut Scratch,
    row: &mut [f64],
) {
    let n = rule.n();
    for (p, panel) in d.panels.iter().enumerate() {
        let off = p * n;
        let y = panel.y;
        let dy_up = z.im - y;
        let dy_dn = z.im + y;
        let mut done_up = false;
        let mut done_dn = false;
        if let Some(lam) = sc.weights(panel, y, z, rule, near_rho) {
            for i in 0..n {
                row[off + i] += lam[i].re;
            }
            done_up = true;
        }
        if let Some(lam) = sc.weights(panel, -y, z, rule, near_rho) {
            for i in 0..n {
                row[off + i] -= lam[i].re;
            }
            done_dn = true;
        }
        match (done_up, done_dn) {
            (true, true) => {}
            (false, false) => {
                for i in 0..n {
                    let dx = z.re - d.xs[off + i];
                    let up = dx * dx + dy_up * dy_up;
                    let dn = dx * dx + dy_dn * dy_dn;
                    row[off + i] += 0.5 * d.ws[off + i] * (up / dn).ln();
                }
            }
            (false, true) => {
                for i in 0..n {
                    let dx = z.re - d.xs[off + i];
                    row[off + i] += 0.5 * d.ws[off + i] * (dx * dx + dy_up * dy_up).ln();
                }
            }
            (true, false) => {
                for i in 0..n {
                    let dx = z.re - d.xs[off + i];
                    row[off + i] -= 0.5 * d.ws[off + i] * (dx * dx + dy_dn * dy_dn).ln();
                }
            }
        }
    }
}

fn lu_solve(a: Vec<f64>, rhs: Vec<f64>, dim: usize) -> Option<Vec<f64>> {
    if dim <= 160 {
        let m = nalgebra::DMatrix::from_row_slice(dim, dim, &a);
        let b = nalgebra::DVector::from_vec(rhs);
        m.lu().solve(&b).map(|x| x.as_slice().to_vec())
    } else {
        use faer::linalg::solvers::Solve;
        let m = faer::Mat::<f64>::from_fn(dim, dim, |i, j| a[i * dim + j]);
        let b = faer::Mat::<f64>::from_fn(dim, 1, |i, _| rhs[i]);
        let x = m.partial_piv_lu().solve(&b);
        let out: Vec<f64> = (0..dim).map(|i| x[(i, 0)]).collect();
        out.iter().all(|v| v.is_finite()).then_some(out)
    }
}

/// Solves for the kernel of `D(s)` with pole at `xi`.
pub fn solve_kernel(s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<KernelSolution, KernelError> {
    if s.is_empty() {
        return Ok(KernelSolution::empty(xi, cfg));
    }
    let r = s.distance_r(xi);
    if r <= EPS_GEOM {
        return Err(KernelError::PointTooClose { xi, dist: r });
    }
    let mut params = LayoutParams {
        eta: cfg.eta,
        max_frac: cfg.max_frac,
    };
    let mut best = f64::INFINITY;
    for refinement in 0..=cfg.max_refinements {
        let panels = layout(s, xi, params);
        if let Some(mut sol) = solve_on(s, xi, panels, cfg) {
            sol.refinements = refinement;
            if sol.residual <= cfg.tol {
                return Ok(sol);
            }
            best = best.min(sol.residual);
        }
        params.eta *= 0.5;
        params.max_frac *= 0.5;
    }
    Err(KernelError::IllConditioned {
        residual: best,
        tol: cfg.tol,
        refinements: cfg.max_refinements,
    })
}

fn solve_on(s: &SlitVector, xi: f64, panels: Vec<Panel>, cfg: &KernelConfig) -> Option<KernelSolution> {
    let rule = panel_rule();
    let n = rule.n();
    let d = Discretization::new(panels, rule);
    let nn = d.xs.len();
    let ns = s.n();
    let dim = nn + ns;
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut sc = Scratch::new(n);
    let mut scale: f64 = 0.0;
    for r in 0..nn {
        let panel = &d.panels[r / n];
        let z = Complex64::new(d.xs[r], panel.y);
        let row = &mut a[r * dim..(r + 1) * dim];
        potential_row(&d, z, rule, cfg.near_rho, &mut sc, &mut row[..nn]);
        row[nn + panel.slit] = -1.0;
        let p = poisson_halfplane(z, xi);
        rhs[r] = -p;
        scale = scale.max(p);
    }
    for (p, panel) in d.panels.iter().enumerate() {
        let row = &mut a[(nn + panel.slit) * dim..(nn + panel.slit + 1) * dim];
        for i in 0..n {
            row[p * n + i] = d.ws[p * n + i];
        }
    }
    let x = lu_solve(a, rhs, dim)?;
    let psi = x[..nn].to_vec();
    let constants = x[nn..].to_vec();
    let mut sol = KernelSolution {
        slits: s.clone(),
        xi,
        panels: d.panels,
        psi,
        constants,
        residual: 0.0,
        refinements: 0,
        near_rho: cfg.near_rho,
    };
    // residual at midpoints between consecutive nodes
    let stride = cfg.check_stride.max(1);
    let mut worst: f64 = 0.0;
    for panel in &sol.panels {
        for i in (0..n - 1).step_by(stride) {
            let t = 0.5 * (rule.gauss.nodes[i] + rule.gauss.nodes[i + 1]);
            let z = Complex64::new(panel.x_at(t), panel.y);
            let dev = sol.im_psi(z) - sol.constants[panel.slit];
            worst = worst.max(dev.abs());
        }
    }
    sol.residual = if scale > 0.0 { worst / scale } else { worst };
    sol.residual.is_finite().then_some(sol)
}

impl KernelSolution {
    fn empty(xi: f64, cfg: &KernelConfig) -> Self {
        KernelSolution {
            slits: SlitVector::empty(),
            xi,
            panels: Vec::new(),
            psi: Vec::new(),
            constants: Vec::new(),
            residual: 0.0,
            refinements: 0,
            near_rho: cfg.near_rho,
        }
    }

    pub fn slits(&self) -> &SlitVector {
        &self.slits
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    /// Value of `Im Ψ` on each slit.
    pub fn slit_constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn refinements(&self) -> u32 {
        self.refinements
    }

    pub fn node_count(&self) -> usize {
        self.psi.len()
    }

    /// Quadrature nodes on the slits.
    pub fn charge_points(&self) -> Vec<Complex64> {
        let rule = panel_rule();
        self.panels
            .iter()
            .flat_map(|p| rule.gauss.nodes.iter().map(move |&t| Complex64::new(p.x_at(t), p.y)))
            .collect()
    }

    /// Point charges `q_k = ω_k ψ_k`; they sum to zero on each slit.
    pub fn charges(&self) -> Vec<f64> {
        let rule = panel_rule();
        let n = rule.n();
        self.psi
            .iter()
            .enumerate()
            .map(|(k, &v)| v * rule.gauss.weights[k % n])
            .collect()
    }

    /// Sum of charges on each slit.
    pub fn slit_charge_sums(&self) -> Vec<f64> {
        let n = panel_rule().n();
        let mut sums = vec![0.0; self.slits.n()];
        for (k, q) in self.charges().into_iter().enumerate() {
            sums[self.panels[k / n].slit] += q;
        }
        sums
    }

    /// `Σ_j ∫ ψ log(z − w)` over all panels on the lines `±y_j`,
    /// returned as (upper-line sum, mirror-line sum).
    fn log_potentials(&self, z: Complex64) -> (Complex64, Complex64) {
        let rule = panel_rule();
        let n = rule.n();
        let mut sc = Scratch::new(n);
        let mut up = Complex64::new(0.0, 0.0);
        let mut dn = Complex64::new(0.0, 0.0);
        for (p, panel) in self.panels.iter().enumerate() {
            let psi = &self.psi[p * n..(p + 1) * n];
            for (sign, acc) in [(1.0, &mut up), (-1.0, &mut dn)] {
                let y_line = sign * panel.y;
                if let Some(lam) = sc.weights(panel, y_line, z, rule, self.near_rho) {
                    for i in 0..n {
                        *acc += lam[i] * psi[i];
                    }
                } else {
                    let dy = z.im - y_line;
                    for (i, &t) in rule.gauss.nodes.iter().enumerate() {
                        let w = Complex64::new(z.re - panel.x_at(t), dy);
                        *acc += w.ln() * (rule.gauss.weights[i] * psi[i]);
                    }
                }
            }
        }
        (up, dn)
    }

    /// Regular part `H(z) = Ψ(z) + 1/(π(z − ξ))`.
    pub fn eval_h(&self, z: Complex64) -> Complex64 {
        if self.panels.is_empty() {
            return Complex64::new(0.0, 0.0);
        }
        let (up, dn) = self.log_potentials(z);
        Complex64::i() * (up - dn)
    }

    fn pole(&self, z: Complex64) -> Complex64 {
        -1.0 / (PI * (z - self.xi))
    }

    /// `Ψ(z)` for `z` off the slits and away from the pole.
    pub fn eval_psi(&self, z: Complex64) -> Result<Complex64, KernelError> {
        let on_slit = self
            .slits
            .slits()
            .iter()
            .any(|s| s.dist(z) <= EPS_GEOM || s.dist(z.conj()) <= EPS_GEOM);
        if on_slit || (z - self.xi).norm() <= EPS_GEOM || !z.re.is_finite() || !z.im.is_finite() {
            return Err(KernelError::EvalOnSingularity(z));
        }
        Ok(self.pole(z) + self.eval_h(z))
    }

    /// `u(z) = Re Σ ∫ψ (log(z − w) − log(z − w̄))`, real arithmetic in the far field.
    fn layer_potential(&self, z: Complex64) -> f64 {
        let rule = panel_rule();
        let n = rule.n();
        let mut sc = Scratch::new(n);
        let mut acc = 0.0;
        for (p, panel) in self.panels.iter().enumerate() {
            let psi = &self.psi[p * n..(p + 1) * n];
            let y = panel.y;
            let near_up = sc
                .weights(panel, y, z, rule, self.near_rho)
                .map(|lam| lam.iter().zip(psi).map(|(l, v)| l.re * v).sum::<f64>());
            let near_dn = sc
                .weights(panel, -y, z, rule, self.near_rho)
                .map(|lam| lam.iter().zip(psi).map(|(l, v)| l.re * v).sum::<f64>());
            let (dy_up, dy_dn) = (z.im - y, z.im + y);
            let mut far = 0.0;
            for (i, &t) in rule.gauss.nodes.iter().enumerate() {
                let dx = z.re - panel.x_at(t);
                let up = dx * dx + dy_up * dy_up;
                let dn = dx * dx + dy_dn * dy_dn;
                let term = match (near_up, near_dn) {
                    (None, None) => (up / dn).ln(),
                    (None, Some(_)) => up.ln(),
                    (Some(_), None) => -dn.ln(),
                    (Some(_), Some(_)) => break,
                };
                far += 0.5 * rule.gauss.weights[i] * psi[i] * term;
            }
            acc += far + near_up.unwrap_or(0.0) - near_dn.unwrap_or(0.0);
        }
        acc
    }

    /// `Im Ψ(z) = K*(z)`; also valid on the slits, where it equals the slit
    /// constant up to the residual.
    pub fn im_psi(&self, z: Complex64) -> f64 {
        poisson_halfplane(z, self.xi) + self.layer_potential(z)
    }

    /// `Ψ` at the left (`right = false`) or right endpoint of slit `j`.
    pub fn endpoint_psi(&self, j: usize, right: bool) -> Complex64 {
        let sl = self.slits.slit(j);
        let z = if right { sl.right() } else { sl.left() };
        self.pole(z) + self.eval_h(z)
    }

    /// `b_l = −2π Im Ψ(z_l)` for heights, `−2π Re Ψ` at the endpoints.
    pub fn drift(&self) -> DriftVector {
        let n = self.slits.n();
        let mut b = vec![0.0; 3 * n];
        for j in 0..n {
            b[j] = -2.0 * PI * self.constants[j];
            b[n + j] = -2.0 * PI * self.endpoint_psi(j, false).re;
            b[2 * n + j] = -2.0 * PI * self.endpoint_psi(j, true).re;
        }
        DriftVector { b }
    }

    /// `b_BMD = 2π H(ξ₀, ξ₀)`, real by reflection symmetry.
    pub fn bmd(&self) -> f64 {
        let h = self.eval_h(Complex64::new(self.xi, 0.0));
        debug_assert!(h.im.abs() <= 1e-10 * (1.0 + h.re.abs()), "H(ξ,ξ) = {h}");
        2.0 * PI * h.re
    }
}

pub fn drift_b(s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<DriftVector, KernelError> {
    Ok(solve_kernel(s, xi, cfg)?.drift())
}

pub fn bmd_constant(s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<f64, KernelError> {
    Ok(solve_kernel(s, xi, cfg)?.bmd())
}
