//! Stochastic Komatu-Loewner evolution: the driver follows
//! `dξ = α dB + b dt` while the slits follow the slit ODE.
//!
//! Paths use Euler-Maruyama for `ξ` and one RK4 step of the slit ODE per
//! (sub)step, with `ξ` linear across the step. A step is bisected, with a
//! Brownian-bridge draw for the split increment, whenever the slit drift
//! would move a slit by more than `kappa · R` in one step or a stage leaves
//! the admissible set. All randomness comes from ChaCha streams keyed by the
//! path seed, so a seed fixes the path bit for bit.

use crate::exec;
use crate::geometry::SlitVector;
use crate::kernel::{solve_kernel, KernelConfig, KernelError};
use crate::slit_ode::{explosion, EvolveConfig, Status, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SkleError {
    #[error("invalid coefficient: {0}")]
    InvalidCoefficient(String),
    #[error("cannot parse coefficient spec {0:?}")]
    BadSpec(String),
    #[error("t_max must be positive, got {0}")]
    BadHorizon(f64),
    #[error("dt must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("substep fell to {dt:.3e} at t = {t} without an admissible step")]
    StepUnderflow { t: f64, dt: f64, partial: Box<Trajectory> },
    #[error("coefficient is not homogeneous: {what} off by {gap:.3e} at scale {c}")]
    Homogeneity { what: String, c: f64, gap: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Diffusion coefficient, homogeneous of degree 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AlphaSpec {
    Const(f64),
}

/// Driver drift, homogeneous of degree −1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    /// `λ · b_BMD`.
    BmdConstant(f64),
}

impl AlphaSpec {
    pub fn value(&self) -> f64 {
        match *self {
            AlphaSpec::Const(a) => a,
        }
    }
}

impl DriftSpec {
    /// Value given the BMD constant of the current configuration.
    pub fn value(&self, bmd: f64) -> f64 {
        match *self {
            DriftSpec::Zero => 0.0,
            DriftSpec::BmdConstant(l) => l * bmd,
        }
    }
}

impl fmt::Display for AlphaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaSpec::Const(a) => write!(f, "const:{a}"),
        }
    }
}

impl fmt::Display for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftSpec::Zero => write!(f, "zero"),
            DriftSpec::BmdConstant(l) => write!(f, "bmd:{l}"),
        }
    }
}

fn parse_number(s: &str, full: &str) -> Result<f64, SkleError> {
    let t = s.trim();
    let v = if let Some(rest) = t.strip_prefix("sqrt") {
        rest.trim_matches(|c| c == '(' || c == ')').parse::<f64>().map(f64::sqrt)
    } else {
        t.parse::<f64>()
    };
    v.ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| SkleError::BadSpec(full.to_string()))
}

/// Accepts `const:<a>`, a bare number, or `sqrt(<a>)`.
impl FromStr for AlphaSpec {
    type Err = SkleError;
    fn from_str(s: &str) -> Result<Self, SkleError> {
        let body = s.trim().strip_prefix("const:").unwrap_or(s);
        let a = parse_number(body, s)?;
        if a < 0.0 {
            return Err(SkleError::InvalidCoefficient(format!("alpha = {a} is negative")));
        }
        Ok(AlphaSpec::Const(a))
    }
}

/// Accepts `zero`, `bmd:<λ>`, `bmd` (λ = 1) and `-bmd` (λ = −1).
impl FromStr for DriftSpec {
    type Err = SkleError;
    fn from_str(s: &str) -> Result<Self, SkleError> {
        match s.trim() {
            "zero" | "0" => Ok(DriftSpec::Zero),
            "bmd" => Ok(DriftSpec::BmdConstant(1.0)),
            "-bmd" => Ok(DriftSpec::BmdConstant(-1.0)),
            t => match t.strip_prefix("bmd:") {
                Some(l) => Ok(DriftSpec::BmdConstant(parse_number(l, s)?)),
                None => Err(SkleError::BadSpec(s.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub alpha: AlphaSpec,
    pub drift: DriftSpec,
}

impl CoefficientSpec {
    pub fn new(alpha: AlphaSpec, drift: DriftSpec) -> Result<Self, SkleError> {
        let spec = CoefficientSpec { alpha, drift };
        spec.validate()?;
        Ok(spec)
    }

    /// `SKLE_{√6, −b_BMD}`.
    pub fn locality() -> Self {
        CoefficientSpec {
            alpha: AlphaSpec::Const(6f64.sqrt()),
            drift: DriftSpec::BmdConstant(-1.0),
        }
    }

    pub fn validate(&self) -> Result<(), SkleError> {
        let a = self.alpha.value();
        if !(a.is_finite() && a >= 0.0) {
            return Err(SkleError::InvalidCoefficient(format!("alpha = {a}")));
        }
        if let DriftSpec::BmdConstant(l) = self.drift {
            if !l.is_finite() {
                return Err(SkleError::InvalidCoefficient(format!("drift factor {l}")));
            }
        }
        Ok(())
    }

    /// `(α, b)` at `(ξ, s)`.
    pub fn eval(&self, s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<(f64, f64), KernelError> {
        let b = match self.drift {
            DriftSpec::Zero => 0.0,
            _ => self.drift.value(solve_kernel(s, xi, cfg)?.bmd()),
        };
        Ok((self.alpha.value(), b))
    }

    /// Checks `α(cξ, cs) = α(ξ, s)` and `c·b(cξ, cs) = b(ξ, s)` on random
    /// configurations.
    pub fn check_homogeneity(&self, samples: usize, seed: u64, cfg: &KernelConfig) -> Result<(), SkleError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..samples {
            let (xi, s) = sample_configuration(&mut rng, 1.0);
            let c = (rng.random::<f64>() * 4.0 - 2.0).exp();
            let (a0, b0) = self.eval(&s, xi, cfg)?;
            let (a1, b1) = self.eval(&s.scale_about(c, 0.0), c * xi, cfg)?;
            let ga = (a1 - a0).abs();
            if ga > 1e-12 * (1.0 + a0.abs()) {
                return Err(SkleError::Homogeneity { what: "alpha".into(), c, gap: ga });
            }
            let gb = (c * b1 - b0).abs();
            if gb > 1e-7 * (1.0 + b0.abs()) {
                return Err(SkleError::Homogeneity { what: "drift".into(), c, gap: gb });
            }
        }
        Ok(())
    }
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec {
            alpha: AlphaSpec::Const(0.0),
            drift: DriftSpec::Zero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkleConfig {
    /// Kernel settings and the explosion threshold.
    pub evolve: EvolveConfig,
    /// Largest slit displacement per step relative to `R`.
    pub kappa: f64,
    /// Maximum number of bisections of one base step.
    pub max_depth: u32,
}

impl Default for SkleConfig {
    fn default() -> Self {
        SkleConfig {
            evolve: EvolveConfig::default(),
            kappa: 0.2,
            max_depth: 40,
        }
    }
}

/// Seed of path `index` in a batch seeded by `base`.
pub fn path_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Step sizes covering `[0, t_max]`, all `dt` except a possibly shorter last one.
pub fn step_grid(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt - 1e-9).ceil().max(1.0) as usize;
    let mut out = vec![dt; n];
    out[n - 1] = t_max - dt * (n - 1) as f64;
    out
}

/// Brownian increments `√h · N(0,1)` for the given step sizes.
pub fn draw_increments(seed: u64, steps: &[f64]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    steps
        .iter()
        .map(|h| {
            let z: f64 = rng.sample(StandardNormal);
            h.sqrt() * z
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SklePath {
    pub seed: u64,
    pub dt: f64,
    /// Base-step Brownian increments.
    pub increments: Vec<f64>,
    pub trajectory: Trajectory,
    /// Brownian increment of each recorded step (one per trajectory interval).
    pub leaf_increments: Vec<f64>,
    /// `b_BMD` at each trajectory node where it was evaluated (NaN otherwise).
    pub bmd: Vec<f64>,
    /// Number of bisections performed.
    pub splits: usize,
}

impl SklePath {
    pub fn status(&self) -> &Status {
        &self.trajectory.status
    }

    pub fn zeta(&self) -> Option<f64> {
        self.trajectory.zeta()
    }
}

/// Slit drift plus driver coefficients at one configuration.
struct Eval {
    b: Vec<f64>,
    alpha: f64,
    drift: f64,
    bmd: f64,
}

fn evaluate(coeffs: &CoefficientSpec, s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<Eval, KernelError> {
    let sol = solve_kernel(s, xi, cfg)?;
    let bmd = sol.bmd();
    Ok(Eval {
        b: sol.drift().b,
        alpha: coeffs.alpha.value(),
        drift: coeffs.drift.value(bmd),
        bmd,
    })
}

fn slit_drift(s: &[f64], xi: f64, cfg: &KernelConfig) -> Option<Vec<f64>> {
    let s = SlitVector::validate(s).ok()?;
    if !(s.distance_r(xi) > 0.0) {
        return None;
    }
    solve_kernel(&s, xi, cfg).ok().map(|k| k.drift().b)
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(u, v)| u + a * v).collect()
}

/// One step from `(ξ, s)` given the evaluation there: the new driver, the new
/// slits and the last RK4 stage, or `None` if a stage is inadmissible.
fn leaf(
    xi: f64,
    s: &SlitVector,
    ev: &Eval,
    dt: f64,
    db: f64,
    cfg: &KernelConfig,
) -> Option<(f64, SlitVector, Vec<f64>)> {
    let xi1 = xi + ev.alpha * db + ev.drift * dt;
    let xm = 0.5 * (xi + xi1);
    let y = s.to_vec();
    let k1 = &ev.b;
    let k2 = slit_drift(&axpy(&y, 0.5 * dt, k1), xm, cfg)?;
    let k3 = slit_drift(&axpy(&y, 0.5 * dt, &k2), xm, cfg)?;
    let k4 = slit_drift(&axpy(&y, dt, &k3), xi1, cfg)?;
    let y1: Vec<f64> = (0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]))
        .collect();
    let s1 = SlitVector::validate(&y1).ok()?;
    if !(s1.distance_r(xi1) > 0.0) {
        return None;
    }
    Some((xi1, s1, k4))
}

/// A single unrefined step. Used to test scaling covariance of the scheme.
pub fn euler_step(
    xi: f64,
    s: &SlitVector,
    coeffs: &CoefficientSpec,
    db: f64,
    dt: f64,
    cfg: &KernelConfig,
) -> Result<(f64, SlitVector), SkleError> {
    let ev = evaluate(coeffs, s, xi, cfg)?;
    leaf(xi, s, &ev, dt, db, cfg)
        .map(|(x, s, _)| (x, s))
        .ok_or(SkleError::StepUnderflow {
            t: 0.0,
            dt,
            partial: Box::new(empty_trajectory(s, xi)),
        })
}

fn empty_trajectory(s: &SlitVector, xi: f64) -> Trajectory {
    Trajectory {
        times: vec![0.0],
        states: vec![s.clone()],
        xi: vec![xi],
        r: vec![s.distance_r(xi)],
        derivs: vec![vec![0.0; 3 * s.n()]],
        status: Status::Completed { t_max: 0.0 },
    }
}

struct Stepper<'a> {
    coeffs: &'a CoefficientSpec,
    cfg: &'a SkleConfig,
    bridge: ChaCha8Rng,
    traj: Trajectory,
    leaf_increments: Vec<f64>,
    bmd: Vec<f64>,
    splits: usize,
}

enum Flow {
    Go,
    Stop,
}

impl Stepper<'_> {
    fn current(&self) -> (f64, SlitVector) {
        (*self.traj.xi.last().unwrap(), self.traj.states.last().unwrap().clone())
    }

    fn advance(&mut self, t: f64, dt: f64, db: f64, depth: u32, start: Option<Eval>) -> Result<Flow, SkleError> {
        let (xi, s) = self.current();
        let kcfg = &self.cfg.evolve.kernel;
        let ev = match start {
            Some(ev) => ev,
            None => {
                let ev = evaluate(self.coeffs, &s, xi, kcfg)?;
                *self.traj.derivs.last_mut().unwrap() = ev.b.clone();
                *self.bmd.last_mut().unwrap() = ev.bmd;
                ev
            }
        };
        let r = s.distance_r(xi);
        let speed = ev.b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let can_split = depth < self.cfg.max_depth;
        if can_split && dt * speed > self.cfg.kappa * r {
            return self.split(t, dt, db, depth, ev);
        }
        match leaf(xi, &s, &ev, dt, db, kcfg) {
            Some((xi1, s1, k4)) => {
                let reason = explosion(&s1, xi1, &self.cfg.evolve);
                self.traj.r.push(s1.distance_r(xi1));
                self.traj.times.push(t + dt);
                self.traj.states.push(s1);
                self.traj.xi.push(xi1);
                self.traj.derivs.push(k4);
                self.leaf_increments.push(db);
                self.bmd.push(f64::NAN);
                if let Some(reason) = reason {
                    self.traj.status = Status::Exploded { zeta: t + dt, reason };
                    return Ok(Flow::Stop);
                }
                Ok(Flow::Go)
            }
            None if can_split => self.split(t, dt, db, depth, ev),
            None => Err(SkleError::StepUnderflow {
                t,
                dt,
                partial: Box::new(self.traj.clone()),
            }),
        }
    }

    fn split(&mut self, t: f64, dt: f64, db: f64, depth: u32, ev: Eval) -> Result<Flow, SkleError> {
        self.splits += 1;
        let z: f64 = self.bridge.sample(StandardNormal);
        let db1 = 0.5 * db + 0.5 * dt.sqrt() * z;
        if let Flow::Stop = self.advance(t, 0.5 * dt, db1, depth + 1, Some(ev))? {
            return Ok(Flow::Stop);
        }
        self.advance(t + 0.5 * dt, 0.5 * dt, db - db1, depth + 1, None)
    }
}

/// Samples one path on `[0, t_max]` with base step `dt`.
pub fn sample_path(
    xi0: f64,
    s0: &SlitVector,
    coeffs: &CoefficientSpec,
    t_max: f64,
    dt: f64,
    seed: u64,
    cfg: &SkleConfig,
) -> Result<SklePath, SkleError> {
    if !(t_max > 0.0) {
        return Err(SkleError::BadHorizon(t_max));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SkleError::BadStep(dt));
    }
    let steps = step_grid(t_max, dt);
    let inc = draw_increments(seed, &steps);
    sample_path_with_increments(xi0, s0, coeffs, &steps, inc, seed, cfg)
}

/// Samples a path driven by the given base increments; `bridge_seed` feeds
/// the bridge draws used when a step is bisected.
pub fn sample_path_with_increments(
    xi0: f64,
    s0: &SlitVector,
    coeffs: &CoefficientSpec,
    steps: &[f64],
    increments: Vec<f64>,
    bridge_seed: u64,
    cfg: &SkleConfig,
) -> Result<SklePath, SkleError> {
    coeffs.validate()?;
    assert_eq!(steps.len(), increments.len(), "one increment per step");
    if let Some(&h) = steps.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(SkleError::BadStep(h));
    }
    let mut bridge = ChaCha8Rng::seed_from_u64(bridge_seed);
    bridge.set_stream(1);
    let mut st = Stepper {
        coeffs,
        cfg,
        bridge,
        traj: empty_trajectory(s0, xi0),
        leaf_increments: Vec::new(),
        bmd: vec![f64::NAN],
        splits: 0,
    };
    let dt = steps.first().copied().unwrap_or(0.0);
    if let Some(reason) = explosion(s0, xi0, &cfg.evolve) {
        st.traj.status = Status::Exploded { zeta: 0.0, reason };
    } else {
        let mut t = 0.0;
        for (h, db) in steps.iter().zip(&increments) {
            if s0.is_empty() {
                let xi = *st.traj.xi.last().unwrap();
                st.traj.times.push(t + h);
                st.traj.states.push(SlitVector::empty());
                st.traj.xi.push(xi + coeffs.alpha.value() * db);
                st.traj.r.push(f64::INFINITY);
                st.traj.derivs.push(Vec::new());
                st.leaf_increments.push(*db);
                *st.bmd.last_mut().unwrap() = 0.0;
                st.bmd.push(f64::NAN);
            } else if let Flow::Stop = st.advance(t, *h, *db, 0, None)? {
                break;
            }
            t += h;
        }
        if !matches!(st.traj.status, Status::Exploded { .. }) {
            st.traj.status = Status::Completed { t_max: st.traj.t_end() };
        }
    }
    Ok(SklePath {
        seed: bridge_seed,
        dt,
        increments,
        trajectory: st.traj,
        leaf_increments: st.leaf_increments,
        bmd: st.bmd,
        splits: st.splits,
    })
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub index: usize,
    pub seed: u64,
    pub status: Status,
    pub final_r: f64,
    pub min_height: f64,
    /// Whether the final `R` is the smallest over the last 10% of the lifetime.
    pub tail_ends_at_minimum: bool,
    pub nodes: usize,
    pub splits: usize,
}

impl PathRecord {
    pub fn from_path(index: usize, p: &SklePath) -> Self {
        let tr = &p.trajectory;
        let last_r = *tr.r.last().unwrap();
        let from = 0.9 * tr.t_end();
        let tail_ok = tr.times.iter().zip(&tr.r).filter(|(t, _)| **t >= from).all(|(_, r)| *r >= last_r);
        PathRecord {
            index,
            seed: p.seed,
            status: tr.status.clone(),
            final_r: last_r,
            min_height: tr.states.last().map_or(f64::NAN, |s| s.min_height()),
            tail_ends_at_minimum: tail_ok,
            nodes: tr.len(),
            splits: p.splits,
        }
    }

    pub fn zeta(&self) -> Option<f64> {
        match self.status {
            Status::Exploded { zeta, .. } => Some(zeta),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_paths: usize,
    pub t_max: f64,
    pub dt: f64,
    pub base_seed: u64,
    pub exploded: usize,
    pub failed: usize,
    /// Fraction of paths exploding before `t_max`.
    pub p_explode: f64,
    /// 95% Wilson interval for `p_explode`.
    pub ci95: (f64, f64),
    pub zeta_min: Option<f64>,
    pub zeta_median: Option<f64>,
    pub zeta_mean: Option<f64>,
    pub paths: Vec<PathRecord>,
}

/// Runs `n_paths` independent paths (in parallel when enabled). The result
/// depends only on the arguments, never on the thread count.
#[allow(clippy::too_many_arguments)]
pub fn mc_explosion(
    xi0: f64,
    s0: &SlitVector,
    coeffs: &CoefficientSpec,
    t_max: f64,
    dt: f64,
    n_paths: usize,
    base_seed: u64,
    cfg: &SkleConfig,
) -> Result<McSummary, SkleError> {
    coeffs.validate()?;
    if !(t_max > 0.0) {
        return Err(SkleError::BadHorizon(t_max));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SkleError::BadStep(dt));
    }
    let paths = exec::map_range(n_paths, |i| {
        let seed = path_seed(base_seed, i as u64);
        match sample_path(xi0, s0, coeffs, t_max, dt, seed, cfg) {
            Ok(p) => PathRecord::from_path(i, &p),
            Err(e) => PathRecord::failed(i, seed, &e),
        }
    });
    Ok(summarize(t_max, dt, base_seed, paths))
}

impl PathRecord {
    /// Record of a path that stopped with an error.
    pub fn failed(index: usize, seed: u64, e: &SkleError) -> Self {
        let partial = match e {
            SkleError::StepUnderflow { partial, .. } => Some(partial.as_ref()),
            _ => None,
        };
        PathRecord {
            index,
            seed,
            status: Status::Failed { reason: e.to_string() },
            final_r: partial.map_or(f64::NAN, |t| *t.r.last().unwrap()),
            min_height: partial.map_or(f64::NAN, |t| t.states.last().unwrap().min_height()),
            tail_ends_at_minimum: false,
            nodes: partial.map_or(0, |t| t.len()),
            splits: 0,
        }
    }
}

/// Explosion statistics of a batch of path records, in index order.
pub fn summarize(t_max: f64, dt: f64, base_seed: u64, paths: Vec<PathRecord>) -> McSummary {
    let n_paths = paths.len();
    let mut zetas: Vec<f64> = paths.iter().filter_map(PathRecord::zeta).collect();
    zetas.sort_by(f64::total_cmp);
    let failed = paths.iter().filter(|p| matches!(p.status, Status::Failed { .. })).count();
    let k = zetas.len();
    McSummary {
        n_paths,
        t_max,
        dt,
        base_seed,
        exploded: k,
        failed,
        p_explode: if n_paths == 0 { 0.0 } else { k as f64 / n_paths as f64 },
        ci95: wilson_interval(k, n_paths, 1.959_963_984_540_054),
        zeta_min: zetas.first().copied(),
        zeta_median: (k > 0).then(|| {
            if k % 2 == 1 {
                zetas[k / 2]
            } else {
                0.5 * (zetas[k / 2 - 1] + zetas[k / 2])
            }
        }),
        zeta_mean: (k > 0).then(|| zetas.iter().sum::<f64>() / k as f64),
        paths,
    }
}

/// Random driver and slits with `R(ξ, s) = r(1 + u)`, `u ∈ [0, 1)`.
///
/// One to three slits are drawn with heights in `(0.05, 2)`, left ends in
/// `(−3, 3)` and lengths in `(0.05, 2)`, redrawn until pairwise disjoint, and
/// then scaled about the driver.
pub fn sample_configuration(rng: &mut impl Rng, r: f64) -> (f64, SlitVector) {
    loop {
        let n = rng.random_range(1..=3usize);
        let mut raw = vec![0.0; 3 * n];
        for j in 0..n {
            let y = 0.05 + 1.95 * rng.random::<f64>();
            let x = -3.0 + 6.0 * rng.random::<f64>();
            let len = 0.05 + 1.95 * rng.random::<f64>();
            raw[j] = y;
            raw[n + j] = x;
            raw[2 * n + j] = x + len;
        }
        let Ok(s) = SlitVector::validate(&raw) else {
            continue;
        };
        if n > 1 && s.min_separation() < 0.05 {
            continue;
        }
        let xi = -2.0 + 4.0 * rng.random::<f64>();
        let target = r * (1.0 + rng.random::<f64>());
        let c = target / s.distance_r(xi);
        return (xi, s.scale_about(c, xi));
    }
}

/// Coefficient probed for the bound `sup_{R ≥ r} |f| < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeQuantity {
    Alpha(AlphaSpec),
    Drift(DriftSpec),
    Bmd,
    /// Largest slit drift component.
    SlitDrift,
    /// Largest `|Ψ|` at a slit endpoint.
    EndpointPsi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub r: f64,
    pub samples: usize,
    /// Largest `|f|` seen.
    pub sup: f64,
    /// Every sampled value, in draw order.
    pub values: Vec<f64>,
}

impl ProbeReport {
    pub fn violations(&self, bound: f64) -> usize {
        self.values.iter().filter(|v| **v > bound).count()
    }
}

/// Evaluates `|f|` on `samples` random configurations with `R ∈ [r, 2r)`.
pub fn probe_condition_b(
    quantity: ProbeQuantity,
    r: f64,
    samples: usize,
    seed: u64,
    cfg: &KernelConfig,
) -> Result<ProbeReport, SkleError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let configs: Vec<(f64, SlitVector)> = (0..samples).map(|_| sample_configuration(&mut rng, r)).collect();
    let values = exec::map(&configs, |(xi, s)| -> Result<f64, KernelError> {
        Ok(match quantity {
            ProbeQuantity::Alpha(a) => a.value().abs(),
            ProbeQuantity::Drift(DriftSpec::Zero) => 0.0,
            ProbeQuantity::Drift(d) => d.value(solve_kernel(s, *xi, cfg)?.bmd()).abs(),
            ProbeQuantity::Bmd => solve_kernel(s, *xi, cfg)?.bmd().abs(),
            ProbeQuantity::SlitDrift => solve_kernel(s, *xi, cfg)?
                .drift()
                .b
                .iter()
                .fold(0.0, |m: f64, v| m.max(v.abs())),
            ProbeQuantity::EndpointPsi => {
                let k = solve_kernel(s, *xi, cfg)?;
                (0..s.n())
                    .flat_map(|j| [k.endpoint_psi(j, false).norm(), k.endpoint_psi(j, true).norm()])
                    .fold(0.0, f64::max)
            }
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(ProbeReport {
        r,
        samples,
        sup: values.iter().copied().fold(0.0, f64::max),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_parsing() {
        assert_eq!("const:2".parse::<AlphaSpec>().unwrap(), AlphaSpec::Const(2.0));
        assert_eq!("sqrt(6)".parse::<AlphaSpec>().unwrap(), AlphaSpec::Const(6f64.sqrt()));
        assert!("-1".parse::<AlphaSpec>().is_err());
        assert_eq!("-bmd".parse::<DriftSpec>().unwrap(), DriftSpec::BmdConstant(-1.0));
        assert_eq!("bmd:0.5".parse::<DriftSpec>().unwrap(), DriftSpec::BmdConstant(0.5));
        assert!("foo".parse::<DriftSpec>().is_err());
        let d = DriftSpec::BmdConstant(-1.5);
        assert_eq!(d.to_string().parse::<DriftSpec>().unwrap(), d);
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        let (lo, hi) = wilson_interval(0, 10, 1.96);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.2 && hi < 0.35);
    }

    #[test]
    fn grid_covers_horizon() {
        let g = step_grid(1.0, 0.3);
        assert_eq!(g.len(), 4);
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(step_grid(1.0, 0.25).len(), 4);
    }

    #[test]
    fn seeds_differ_per_path() {
        let a: Vec<u64> = (0..100).map(|i| path_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
    }

    #[test]
    fn sampled_configurations_hit_the_requested_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (xi, s) = sample_configuration(&mut rng, 0.5);
            let r = s.distance_r(xi);
            assert!((0.5..1.0 + 1e-12).contains(&r), "{r}");
        }
    }
}
