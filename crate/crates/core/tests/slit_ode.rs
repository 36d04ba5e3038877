use kl_core::driver::DeterministicDriver;
use kl_core::geometry::SlitVector;
use kl_core::kernel::oracle::{oracle_drift, LatticeConfig};
use kl_core::kernel::{KernelConfig, KernelError};
use kl_core::slit_ode::{
    evolve_slits, evolve_slits_with, explosion_report, DriftField, EvolveConfig, SlitOdeError, Status,
};

fn sine() -> DeterministicDriver {
    DeterministicDriver::Sine {
        offset: 0.1,
        amplitude: 0.5,
        omega: 3.0,
        phase: 0.0,
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[test]
fn centred_slit_explodes_cleanly() {
    let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
    let cfg = EvolveConfig::default();
    let traj = evolve_slits(&s, &DeterministicDriver::constant(0.0), 10.0, &cfg).unwrap();
    let rep = explosion_report(&traj).unwrap();
    assert!(rep.r_tail.last().unwrap().1 <= cfg.eps_explode);
    assert!(rep.tail_ends_at_minimum());
    assert!(rep.min_height <= cfg.eps_explode);
    assert_eq!(traj.zeta(), Some(*traj.times.last().unwrap()));
    // mirror symmetry about the driver is preserved
    let last = traj.states.last().unwrap().slit(0);
    assert!((last.x + last.xr).abs() < 1e-8);
}

#[test]
fn heights_decrease_and_samples_stay_valid() {
    let s = SlitVector::validate(&[0.8, 1.4, -1.5, 0.3, -0.5, 1.6]).unwrap();
    let traj = evolve_slits(&s, &sine(), 0.4, &EvolveConfig::default()).unwrap();
    assert_eq!(traj.status, Status::Completed { t_max: 0.4 });
    for w in traj.times.windows(2) {
        assert!(w[1] > w[0]);
    }
    for k in 1..traj.len() {
        for j in 0..s.n() {
            assert!(traj.states[k].slit(j).y < traj.states[k - 1].slit(j).y);
        }
        assert!(traj.r[k] > 0.0);
    }
}

#[test]
fn explosion_time_respects_the_point_slit_bound() {
    // a slit shrunk to a point under the driver explodes at about y0²/4
    for (y0, len) in [(0.5, 0.05), (1.0, 2.0), (0.4, 1.5)] {
        let s = SlitVector::validate(&[y0, -0.5 * len, 0.5 * len]).unwrap();
        let traj = evolve_slits(&s, &DeterministicDriver::constant(0.0), 10.0, &EvolveConfig::default()).unwrap();
        let zeta = traj.zeta().unwrap();
        assert!(zeta >= y0 * y0 / 16.0, "y0 = {y0}: {zeta}");
    }
}

#[test]
fn translation_equivariance() {
    let s = SlitVector::validate(&[1.0, -1.0, 0.5]).unwrap();
    let cfg = EvolveConfig::default();
    let base = evolve_slits(&s, &sine(), 0.3, &cfg).unwrap();
    let moved = evolve_slits(&s.translate(2.5), &sine().shifted(2.5), 0.3, &cfg).unwrap();
    for k in 0..=10 {
        let t = 0.03 * k as f64;
        let a = SlitVector::validate(&base.sample(t)).unwrap().translate(2.5).to_vec();
        assert!(max_gap(&a, &moved.sample(t)) <= 1e-7);
    }
}

#[test]
fn scaling_equivariance() {
    let s = SlitVector::validate(&[1.0, -1.0, 0.5]).unwrap();
    let cfg = EvolveConfig::default();
    let base = evolve_slits(&s, &sine(), 0.3, &cfg).unwrap();
    let big = evolve_slits(&s.scale(2.0), &sine().scaled(2.0), 1.2, &cfg).unwrap();
    for k in 0..=30 {
        let t = 0.01 * k as f64;
        let a = SlitVector::validate(&base.sample(t)).unwrap().scale(2.0).to_vec();
        assert!(max_gap(&a, &big.sample(4.0 * t)) <= 1e-6);
    }
}

/// Drift from the darning lattice, with the slit height placed on a lattice row.
fn lattice_drift(s: &SlitVector) -> Vec<f64> {
    let y = s.slit(0).y;
    let h = y / (y / 0.025).round();
    let cells = 2 * (4.0 / h).round() as usize;
    let half = 0.5 * cells as f64 * h;
    let cfg = LatticeConfig {
        y_max: (4.0 / h).round() * h,
        ..LatticeConfig::centered(0.0, half, 4.0, cells)
    };
    oracle_drift(s, 0.0, &cfg).unwrap().b
}

#[test]
fn lattice_drift_cross_check() {
    let s0 = SlitVector::validate(&[1.0, -0.6, 1.0]).unwrap();
    let (t_end, steps) = (0.2, 4);
    let dt = t_end / steps as f64;
    // Heun with the lattice drift
    let mut y = s0.to_vec();
    for _ in 0..steps {
        let f0 = lattice_drift(&SlitVector::validate(&y).unwrap());
        let pred: Vec<f64> = y.iter().zip(&f0).map(|(a, b)| a + dt * b).collect();
        let f1 = lattice_drift(&SlitVector::validate(&pred).unwrap());
        for i in 0..y.len() {
            y[i] += 0.5 * dt * (f0[i] + f1[i]);
        }
    }
    let traj = evolve_slits(&s0, &DeterministicDriver::constant(0.0), t_end, &EvolveConfig::default()).unwrap();
    let panel = traj.states.last().unwrap().to_vec();
    let init = s0.to_vec();
    for i in 0..3 {
        let (dl, dp) = (y[i] - init[i], panel[i] - init[i]);
        assert!((dl - dp).abs() <= 0.05 * dp.abs(), "component {i}: {dl} vs {dp}");
    }
}

struct FailingAfter(f64);

impl DriftField for FailingAfter {
    fn drift(&self, s: &SlitVector, xi: f64) -> Result<Vec<f64>, KernelError> {
        if s.slit(0).y < self.0 {
            return Err(KernelError::IllConditioned {
                residual: 1.0,
                tol: 0.0,
                refinements: 0,
            });
        }
        KernelConfig::default().drift(s, xi)
    }
}

#[test]
fn failing_drift_reports_underflow_with_partial_path() {
    let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
    let err = evolve_slits_with(
        &FailingAfter(0.9),
        &s,
        &DeterministicDriver::constant(0.0),
        5.0,
        &EvolveConfig::default(),
    )
    .unwrap_err();
    match err {
        SlitOdeError::StepUnderflow { partial, cause, .. } => {
            assert!(partial.len() > 1);
            assert!(matches!(partial.status, Status::Failed { .. }));
            assert!(matches!(cause, Some(KernelError::IllConditioned { .. })));
        }
        e => panic!("unexpected {e}"),
    }
}
