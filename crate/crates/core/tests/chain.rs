use kl_core::chain::{evolve_map, hcap_estimate, hull_at, trace_tip, ChainConfig, ChainError};
use kl_core::driver::DeterministicDriver;
use kl_core::geometry::SlitVector;
use kl_core::slit_ode::{evolve_slits, EvolveConfig, Status};
use num_complex::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Upper-half-plane branch of `√(z² + 4t)`.
fn loewner_vertical(z: Complex64, t: f64) -> Complex64 {
    let w = (z * z + 4.0 * t).sqrt();
    if w.im < 0.0 {
        -w
    } else {
        w
    }
}

fn sample_points() -> Vec<Complex64> {
    vec![c(0.5, 0.5), c(-1.0, 0.2), c(2.0, 3.0), c(-0.3, 1.5), c(0.1, 4.0)]
}

#[test]
fn empty_domain_matches_the_vertical_slit_map() {
    let pts = sample_points();
    let cfg = ChainConfig {
        report_times: vec![0.25, 0.5],
        ..ChainConfig::default()
    };
    let hist = evolve_map(&SlitVector::empty(), &DeterministicDriver::constant(0.0), &pts, 1.0, &cfg).unwrap();
    for t in [0.25, 0.5, 1.0] {
        let g = hist.g_at(t).unwrap();
        for (z, gz) in pts.iter().zip(&g) {
            assert!((gz - loewner_vertical(*z, t)).norm() <= 1e-6, "{z} at {t}: {gz}");
        }
    }
}

#[test]
fn swallow_time_on_the_vertical_trace() {
    let pts = [c(0.0, 1.0), c(0.0, 1.5), c(0.0, 3.0)];
    let hist = evolve_map(&SlitVector::empty(), &DeterministicDriver::constant(0.0), &pts, 1.0, &ChainConfig::default())
        .unwrap();
    for (z, sw) in pts.iter().zip(&hist.swallowed_at) {
        let expect = z.im * z.im / 4.0;
        if expect <= 1.0 {
            let t = sw.expect("swallowed");
            assert!((t - expect).abs() <= 1e-6, "{z}: {t} vs {expect}");
        } else {
            assert!(sw.is_none());
        }
    }
}

#[test]
fn hulls_grow_and_stay_under_the_trace() {
    let mut pts = vec![c(0.0, 0.5), c(0.0, 1.2), c(0.0, 1.9), c(0.0, 2.5)];
    for i in 0..6 {
        for j in 1..6 {
            pts.push(c(-1.5 + 0.6 * i as f64, 0.5 * j as f64));
        }
    }
    let hist = evolve_map(&SlitVector::empty(), &DeterministicDriver::constant(0.0), &pts, 1.0, &ChainConfig::default())
        .unwrap();
    assert!(hull_at(&hist, 0.0).is_empty());
    let ts = [0.0, 0.1, 0.3, 0.6, 1.0];
    for w in ts.windows(2) {
        let (a, b) = (hull_at(&hist, w[0]), hull_at(&hist, w[1]));
        assert!(a.iter().all(|z| b.contains(z)));
    }
    let h1 = hull_at(&hist, 1.0);
    assert_eq!(h1.len(), 3);
    assert!(h1.iter().all(|z| z.norm() <= 2.0));
}

#[test]
fn distant_slit_barely_perturbs_the_map() {
    let s = SlitVector::validate(&[1.0, 50.0, 52.0]).unwrap();
    let r = s.distance_r(0.0);
    let pts = sample_points();
    let hist = evolve_map(&s, &DeterministicDriver::constant(0.0), &pts, 1.0, &ChainConfig::default()).unwrap();
    let g = hist.g_at(1.0).unwrap();
    for (z, gz) in pts.iter().zip(&g) {
        assert!((gz - loewner_vertical(*z, 1.0)).norm() <= 1.0 / r);
    }
}

#[test]
fn flow_is_downward_and_mirror_symmetric() {
    let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
    let pts = [c(0.4, 2.0), c(-0.4, 2.0), c(1.5, 0.5), c(-1.5, 0.5), c(0.2, 0.4), c(-0.2, 0.4)];
    let hist = evolve_map(&s, &DeterministicDriver::constant(0.0), &pts, 0.3, &ChainConfig::default()).unwrap();
    for k in 1..hist.len() {
        for i in 0..pts.len() {
            if hist.swallowed_at[i].is_none() {
                assert!(hist.g[k][i].im <= hist.g[k - 1][i].im + 1e-14);
            }
        }
        for i in (0..pts.len()).step_by(2) {
            let (a, b) = (hist.g[k][i], hist.g[k][i + 1]);
            assert!((a + b.conj()).norm() <= 1e-8, "{a} vs {b}");
        }
    }
}

#[test]
fn capacity_of_the_empty_domain_chain() {
    let cfg = ChainConfig {
        report_times: vec![0.1, 0.5],
        probe_radius: Some(0.0),
        ..ChainConfig::default()
    };
    let hist = evolve_map(&SlitVector::empty(), &DeterministicDriver::constant(0.0), &[], 1.0, &cfg).unwrap();
    assert_eq!(hcap_estimate(&hist, 0.0).unwrap(), 0.0);
    for t in [0.1, 0.5, 1.0] {
        let a = hcap_estimate(&hist, t).unwrap();
        assert!((a - 2.0 * t).abs() <= 1e-4 * t, "{a} vs {}", 2.0 * t);
    }
}

#[test]
fn capacity_grows_at_rate_two_with_a_slit() {
    let s = SlitVector::validate(&[1.5, 1.0, 3.0]).unwrap();
    let cfg = ChainConfig {
        report_times: vec![0.1, 0.25, 0.5, 0.75],
        probe_radius: Some(0.0),
        ..ChainConfig::default()
    };
    let hist = evolve_map(&s, &DeterministicDriver::constant(0.0), &[], 1.0, &cfg).unwrap();
    assert_eq!(hist.status, Status::Completed { t_max: 1.0 });
    let mut prev = 0.0;
    for t in [0.1, 0.25, 0.5, 0.75, 1.0] {
        let a = hcap_estimate(&hist, t).unwrap();
        assert!((a - 2.0 * t).abs() <= 0.01 * 2.0 * t, "{a} at {t}");
        assert!(a > prev);
        prev = a;
    }
}

#[test]
fn capacity_needs_probes_far_enough_out() {
    let s = SlitVector::validate(&[1.0, -1.0, 1.0]).unwrap();
    let cfg = ChainConfig {
        probe_radius: Some(3.0),
        ..ChainConfig::default()
    };
    let err = evolve_map(&s, &DeterministicDriver::constant(0.0), &[], 0.1, &cfg);
    assert!(matches!(err, Err(ChainError::ProbeTooClose { .. })));
    let plain = evolve_map(&s, &DeterministicDriver::constant(0.0), &[], 0.1, &ChainConfig::default()).unwrap();
    assert!(matches!(hcap_estimate(&plain, 0.1), Err(ChainError::NoProbes)));
}

#[test]
fn vertical_tip() {
    let d = DeterministicDriver::constant(0.0);
    let cfg = EvolveConfig::default();
    let traj = evolve_slits(&SlitVector::empty(), &d, 1.0, &cfg).unwrap();
    for t in [0.25, 1.0] {
        let tip = trace_tip(&traj, &d, t, 1e-3, &cfg).unwrap();
        assert!((tip - c(0.0, 2.0 * t.sqrt())).norm() <= 1e-3, "{tip}");
    }
}

#[test]
fn tip_maps_back_next_to_the_driver() {
    let s = SlitVector::validate(&[1.0, -1.0, 1.5]).unwrap();
    let d = DeterministicDriver::Linear { xi0: 0.0, rate: 0.8 };
    let cfg = EvolveConfig::default();
    let t = 0.2;
    let traj = evolve_slits(&s, &d, t, &cfg).unwrap();
    let delta = 1e-2;
    let tip = trace_tip(&traj, &d, t, delta, &cfg).unwrap();
    assert!(tip.im > 2.0 * delta);
    let hist = evolve_map(&s, &d, &[tip], t, &ChainConfig::default()).unwrap();
    let g = hist.g_at(t).unwrap()[0];
    assert!((g - c(d.xi(t), delta)).norm() <= 1e-4 * delta.max(1.0), "{g}");
}

#[test]
fn slit_trajectory_view_interpolates_like_the_slit_ode() {
    let s = SlitVector::validate(&[1.0, -1.0, 1.5]).unwrap();
    let d = DeterministicDriver::Linear { xi0: 0.0, rate: 0.8 };
    let hist = evolve_map(&s, &d, &[c(0.5, 2.0)], 0.3, &ChainConfig::default()).unwrap();
    let view = hist.slit_trajectory();
    let ode = evolve_slits(&s, &d, 0.3, &EvolveConfig::default()).unwrap();
    for k in 0..=29 {
        let t = 0.01 * k as f64 + 0.005;
        let gap = view.sample(t).iter().zip(ode.sample(t)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 1e-6, "t = {t}: {gap}");
    }
}
