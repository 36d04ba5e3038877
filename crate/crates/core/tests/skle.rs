use kl_core::driver::DeterministicDriver;
use kl_core::exec;
use kl_core::geometry::SlitVector;
use kl_core::kernel::{solve_kernel, KernelConfig};
use kl_core::skle::{
    euler_step, mc_explosion, probe_condition_b, sample_path, AlphaSpec, CoefficientSpec, DriftSpec, ProbeQuantity,
    SkleConfig,
};
use kl_core::slit_ode::{evolve_slits, EvolveConfig, Status};
use proptest::prelude::*;

fn slit() -> SlitVector {
    SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_noise_reproduces_the_slit_ode() {
    let s = SlitVector::validate(&[0.8, 1.4, -1.5, 0.3, -0.5, 1.6]).unwrap();
    let coeffs = CoefficientSpec::default();
    let path = sample_path(0.2, &s, &coeffs, 0.3, 1e-3, 5, &SkleConfig::default()).unwrap();
    let ode = evolve_slits(&s, &DeterministicDriver::constant(0.2), 0.3, &EvolveConfig::default()).unwrap();
    let tr = &path.trajectory;
    assert!(tr.xi.iter().all(|x| *x == 0.2));
    for k in (0..tr.len()).step_by(25) {
        assert!(max_gap(&tr.states[k].to_vec(), &ode.sample(tr.times[k])) <= 1e-7, "t = {}", tr.times[k]);
    }
}

#[test]
fn one_step_commutes_with_scaling() {
    let s = SlitVector::validate(&[0.7, 1.1, -0.8, 0.2, 0.1, 1.5]).unwrap();
    let cfg = KernelConfig::default();
    let coeffs = CoefficientSpec::locality();
    let (xi, db, dt) = (0.3, 0.04, 1e-3);
    let (x1, s1) = euler_step(xi, &s, &coeffs, db, dt, &cfg).unwrap();
    for c in [0.5, 2.0, 7.0] {
        let (xc, sc) = euler_step(c * xi, &s.scale(c), &coeffs, c * db, c * c * dt, &cfg).unwrap();
        assert!((xc - c * x1).abs() <= 1e-9 * c, "c = {c}");
        assert!(max_gap(&sc.to_vec(), &s1.scale(c).to_vec()) <= 1e-9 * c, "c = {c}");
    }
}

#[test]
fn same_seed_same_path() {
    let cfg = SkleConfig::default();
    let coeffs = CoefficientSpec::locality();
    let a = sample_path(0.0, &slit(), &coeffs, 0.2, 1e-2, 42, &cfg).unwrap();
    let b = sample_path(0.0, &slit(), &coeffs, 0.2, 1e-2, 42, &cfg).unwrap();
    let c = sample_path(0.0, &slit(), &coeffs, 0.2, 1e-2, 43, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(a.increments, c.increments);
}

#[test]
fn locality_paths_explode_with_a_monotone_tail() {
    let path = sample_path(0.0, &slit(), &CoefficientSpec::locality(), 3.0, 1e-2, 1, &SkleConfig::default()).unwrap();
    let tr = &path.trajectory;
    let Status::Exploded { zeta, .. } = tr.status else {
        panic!("{:?}", tr.status);
    };
    let last = *tr.r.last().unwrap();
    assert!(last <= 1e-3);
    assert!(tr.times.iter().zip(&tr.r).filter(|(t, _)| **t >= 0.9 * zeta).all(|(_, r)| *r >= last));
    assert!(path.splits > 0);
    for w in tr.states.windows(2) {
        assert!(w[1].slit(0).y < w[0].slit(0).y);
    }
}

#[test]
fn monte_carlo_is_thread_count_independent() {
    let cfg = SkleConfig::default();
    let coeffs = CoefficientSpec::new(AlphaSpec::Const(2.0), DriftSpec::Zero).unwrap();
    let s = SlitVector::validate(&[0.3, -0.2, 0.2]).unwrap();
    let one = exec::with_jobs(Some(1), || mc_explosion(0.0, &s, &coeffs, 0.05, 1e-2, 6, 9, &cfg)).unwrap();
    let three = exec::with_jobs(Some(3), || mc_explosion(0.0, &s, &coeffs, 0.05, 1e-2, 6, 9, &cfg)).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&three).unwrap());
    assert_eq!(one.paths.len(), 6);
    assert!(one.ci95.0 <= one.p_explode && one.p_explode <= one.ci95.1);
    assert_eq!(one.failed, 0);
}

#[test]
fn bmd_probe_respects_its_scale_bound() {
    let cfg = KernelConfig::default();
    for r in [0.5, 2.0] {
        let rep = probe_condition_b(ProbeQuantity::Bmd, r, 20, 11, &cfg).unwrap();
        assert_eq!(rep.violations(4.0 / r), 0, "sup {}", rep.sup);
        let alpha = probe_condition_b(ProbeQuantity::Alpha(AlphaSpec::Const(6f64.sqrt())), r, 5, 11, &cfg).unwrap();
        assert!((alpha.sup - 6f64.sqrt()).abs() < 1e-15);
    }
}

#[test]
fn locality_coefficients_are_homogeneous() {
    CoefficientSpec::locality().check_homogeneity(10, 4, &KernelConfig::default()).unwrap();
}

#[test]
fn negative_alpha_is_rejected() {
    assert!(CoefficientSpec::new(AlphaSpec::Const(-1.0), DriftSpec::Zero).is_err());
    assert!(sample_path(0.0, &slit(), &CoefficientSpec::default(), 0.0, 1e-2, 0, &SkleConfig::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Bisection only redistributes Brownian increments, so without drift
    /// the driver ends at `ξ₀ + α ΣΔB`.
    #[test]
    fn bridging_preserves_the_brownian_endpoint(seed in 0u64..1000) {
        let s = SlitVector::validate(&[0.15, -0.1, 0.1]).unwrap();
        let coeffs = CoefficientSpec::new(AlphaSpec::Const(1.5), DriftSpec::Zero).unwrap();
        let p = sample_path(0.0, &s, &coeffs, 0.05, 1e-2, seed, &SkleConfig::default()).unwrap();
        let tr = &p.trajectory;
        if let Status::Completed { .. } = tr.status {
            let sum: f64 = p.increments.iter().sum();
            prop_assert!((tr.xi.last().unwrap() - 1.5 * sum).abs() <= 1e-12);
        }
    }

    /// `b_BMD` is odd under reflection about the driver.
    #[test]
    fn bmd_is_odd_under_reflection(x in -1.0f64..1.0, y in 0.2f64..1.5) {
        let s = SlitVector::validate(&[y, x, x + 0.7]).unwrap();
        let m = SlitVector::validate(&[y, -x - 0.7, -x]).unwrap();
        let cfg = KernelConfig::default();
        let a = solve_kernel(&s, 0.0, &cfg).unwrap().bmd();
        let b = solve_kernel(&m, 0.0, &cfg).unwrap().bmd();
        prop_assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
    }
}
