//! Slit motion `ds/dt = b(ξ(t), s(t))` under a deterministic driver, with
//! explosion detection.

use crate::driver::DeterministicDriver;
use crate::geometry::SlitVector;
use crate::kernel::{solve_kernel, KernelCache, KernelConfig, KernelError};
use crate::rk45::{hermite, Rk45, Rk45Options, StepError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum SlitOdeError {
    #[error("step size fell to {h:.3e} at t = {t} before explosion was detected")]
    StepUnderflow {
        t: f64,
        h: f64,
        cause: Option<KernelError>,
        partial: Box<Trajectory>,
    },
    #[error("t_max must be positive, got {0}")]
    BadHorizon(f64),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("trajectory did not explode")]
    NotExploded,
}

/// Source of the slit drift at a configuration.
pub trait DriftField: Sync {
    fn drift(&self, s: &SlitVector, xi: f64) -> Result<Vec<f64>, KernelError>;
}

impl DriftField for KernelConfig {
    fn drift(&self, s: &SlitVector, xi: f64) -> Result<Vec<f64>, KernelError> {
        Ok(solve_kernel(s, xi, self)?.drift().b)
    }
}

/// Kernel solves routed through a shared cache.
pub struct CachedField<'a> {
    pub cfg: KernelConfig,
    pub cache: &'a KernelCache,
}

impl DriftField for CachedField<'_> {
    fn drift(&self, s: &SlitVector, xi: f64) -> Result<Vec<f64>, KernelError> {
        Ok(self.cache.solve(s, xi, &self.cfg)?.drift().b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    pub kernel: KernelConfig,
    pub rtol: f64,
    pub atol: f64,
    /// Explosion threshold on `R`.
    pub eps_explode: f64,
    /// Validity guard: a height or slit separation at or below this also ends
    /// the run as an explosion.
    pub eps_guard: f64,
    /// Step cap `c_step · R²`.
    pub c_step: f64,
    pub h_max: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            kernel: KernelConfig::default(),
            rtol: 1e-8,
            atol: 1e-10,
            eps_explode: 1e-3,
            eps_guard: 1e-6,
            c_step: 5.0,
            h_max: 0.02,
        }
    }
}

impl EvolveConfig {
    fn rk(&self) -> Rk45Options {
        Rk45Options {
            rtol: self.rtol,
            atol: self.atol,
            ..Rk45Options::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplosionReason {
    /// `R(ξ, s)` fell below the threshold.
    Distance,
    /// A slit came within the threshold of the real axis.
    Height,
    /// Two slits came within the threshold of each other.
    Collision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Completed { t_max: f64 },
    Exploded { zeta: f64, reason: ExplosionReason },
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SlitVector>,
    pub xi: Vec<f64>,
    pub r: Vec<f64>,
    /// `ds/dt` at each sample, for dense output.
    pub derivs: Vec<Vec<f64>>,
    pub status: Status,
}

impl Trajectory {
    fn start(s: &SlitVector, xi: f64, f: Vec<f64>) -> Self {
        Trajectory {
            times: vec![0.0],
            states: vec![s.clone()],
            xi: vec![xi],
            r: vec![s.distance_r(xi)],
            derivs: vec![f],
            status: Status::Completed { t_max: 0.0 },
        }
    }

    fn push(&mut self, t: f64, s: SlitVector, xi: f64, f: Vec<f64>) {
        self.r.push(s.distance_r(xi));
        self.times.push(t);
        self.states.push(s);
        self.xi.push(xi);
        self.derivs.push(f);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn zeta(&self) -> Option<f64> {
        match self.status {
            Status::Exploded { zeta, .. } => Some(zeta),
            _ => None,
        }
    }

    /// Raw slit vector at time `t` by cubic Hermite interpolation, clamped
    /// to the recorded interval.
    pub fn sample(&self, t: f64) -> Vec<f64> {
        let last = self.len() - 1;
        if t <= self.times[0] {
            return self.states[0].to_vec();
        }
        if t >= self.times[last] {
            return self.states[last].to_vec();
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (a, b) = (self.states[k].to_vec(), self.states[k + 1].to_vec());
        let mut out = vec![0.0; a.len()];
        hermite(
            self.times[k],
            &a,
            &self.derivs[k],
            self.times[k + 1],
            &b,
            &self.derivs[k + 1],
            t,
            &mut out,
        );
        out
    }
}

pub(crate) fn explosion(s: &SlitVector, xi: f64, cfg: &EvolveConfig) -> Option<ExplosionReason> {
    if s.distance_r(xi) < cfg.eps_explode {
        Some(ExplosionReason::Distance)
    } else if s.min_height() <= cfg.eps_guard {
        Some(ExplosionReason::Height)
    } else if s.min_separation() <= cfg.eps_guard {
        Some(ExplosionReason::Collision)
    } else {
        None
    }
}

/// Integrates the slit ODE with the panel kernel.
pub fn evolve_slits(
    s_init: &SlitVector,
    driver: &DeterministicDriver,
    t_max: f64,
    cfg: &EvolveConfig,
) -> Result<Trajectory, SlitOdeError> {
    evolve_slits_with(&cfg.kernel, s_init, driver, t_max, cfg)
}

/// Integrates the slit ODE with an arbitrary drift source.
pub fn evolve_slits_with(
    field: &impl DriftField,
    s_init: &SlitVector,
    driver: &DeterministicDriver,
    t_max: f64,
    cfg: &EvolveConfig,
) -> Result<Trajectory, SlitOdeError> {
    if !(t_max > 0.0) {
        return Err(SlitOdeError::BadHorizon(t_max));
    }
    let xi0 = driver.xi(0.0);
    if let Some(reason) = explosion(s_init, xi0, cfg) {
        let mut traj = Trajectory::start(s_init, xi0, vec![0.0; 3 * s_init.n()]);
        traj.status = Status::Exploded { zeta: 0.0, reason };
        return Ok(traj);
    }
    let f0 = field.drift(s_init, xi0)?;
    let mut traj = Trajectory::start(s_init, xi0, f0.clone());
    if s_init.is_empty() {
        traj.push(t_max, s_init.clone(), driver.xi(t_max), Vec::new());
        traj.status = Status::Completed { t_max };
        return Ok(traj);
    }
    let mut rhs = |t: f64, y: &[f64], out: &mut [f64]| -> Result<(), KernelError> {
        let s = SlitVector::validate(y).expect("stage states are vetted before evaluation");
        out.copy_from_slice(&field.drift(&s, driver.xi(t))?);
        Ok(())
    };
    let mut admissible = |t: f64, y: &[f64]| {
        SlitVector::validate(y).is_ok_and(|s| s.distance_r(driver.xi(t)) > 0.0)
    };
    let r0 = traj.r[0];
    let opts = cfg.rk();
    let cap0 = (cfg.c_step * r0 * r0).min(cfg.h_max);
    let h0 = Rk45::initial_step(&s_init.to_vec(), &f0, &opts, cap0);
    let mut st = Rk45::new(0.0, s_init.to_vec(), f0, h0, opts);
    while st.t < t_max {
        let r = *traj.r.last().unwrap();
        let cap = (cfg.c_step * r * r).min(cfg.h_max);
        if let Err(StepError::Underflow { t, h, last }) = st.step(&mut rhs, cap, t_max, None, &mut admissible) {
            traj.status = Status::Failed {
                reason: "step underflow".into(),
            };
            return Err(SlitOdeError::StepUnderflow {
                t,
                h,
                cause: last,
                partial: Box::new(traj),
            });
        }
        let s = SlitVector::validate(&st.y).expect("accepted states are admissible");
        let xi = driver.xi(st.t);
        let reason = explosion(&s, xi, cfg);
        traj.push(st.t, s, xi, st.f.clone());
        if let Some(reason) = reason {
            traj.status = Status::Exploded { zeta: st.t, reason };
            return Ok(traj);
        }
    }
    traj.status = Status::Completed { t_max };
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplosionReport {
    pub zeta: f64,
    pub reason: ExplosionReason,
    /// `(t, R)` over the last 10% of the lifetime.
    pub r_tail: Vec<(f64, f64)>,
    pub min_height: f64,
}

impl ExplosionReport {
    /// True when the last tail value is the smallest one.
    pub fn tail_ends_at_minimum(&self) -> bool {
        let last = self.r_tail.last().map_or(f64::NAN, |p| p.1);
        self.r_tail.iter().all(|p| p.1 >= last)
    }
}

pub fn explosion_report(traj: &Trajectory) -> Result<ExplosionReport, SlitOdeError> {
    let Status::Exploded { zeta, reason } = traj.status else {
        return Err(SlitOdeError::NotExploded);
    };
    let from = 0.9 * zeta;
    let r_tail = traj
        .times
        .iter()
        .zip(&traj.r)
        .filter(|(t, _)| **t >= from)
        .map(|(t, r)| (*t, *r))
        .collect();
    Ok(ExplosionReport {
        zeta,
        reason,
        r_tail,
        min_height: traj.states.last().map_or(f64::NAN, |s| s.min_height()),
    })
}

/// Explosion-time lower bound `2 y₀²` from the comparison equation `t = 2(y₀² − Y²)`.
pub fn comparison_lower_bound(y0: f64) -> f64 {
    assert!(y0 > 0.0, "height must be positive");
    2.0 * y0 * y0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_bound_examples() {
        assert_eq!(comparison_lower_bound(1.0), 2.0);
        assert_eq!(comparison_lower_bound(0.5), 0.5);
    }

    #[test]
    fn empty_configuration_completes() {
        let t = evolve_slits(
            &SlitVector::empty(),
            &DeterministicDriver::constant(0.0),
            1.0,
            &EvolveConfig::default(),
        )
        .unwrap();
        assert_eq!(t.status, Status::Completed { t_max: 1.0 });
        assert!(matches!(explosion_report(&t), Err(SlitOdeError::NotExploded)));
    }

    #[test]
    fn rejects_bad_horizon() {
        let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
        let d = DeterministicDriver::constant(0.0);
        assert!(matches!(
            evolve_slits(&s, &d, 0.0, &EvolveConfig::default()),
            Err(SlitOdeError::BadHorizon(_))
        ));
    }

    #[test]
    fn distant_driver_barely_moves_the_slit() {
        let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
        let d = DeterministicDriver::constant(1e6);
        let t = evolve_slits(&s, &d, 1.0, &EvolveConfig::default()).unwrap();
        // far from the slits |Ψ| ≈ 1/(πR), so each coordinate moves at most 2/R per unit time
        let bound = 2.0 / (1e6 - s.diameter());
        let last = t.states.last().unwrap().to_vec();
        for (a, b) in last.iter().zip(s.to_vec()) {
            assert!((a - b).abs() <= bound, "{a} vs {b}");
        }
    }
}
