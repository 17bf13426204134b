use std::sync::Arc;

use num_complex::Complex64;
use sns_core::bounds::{constant_c1, constant_c2, BoundConstants};
use sns_core::estimators::{entropy_inequality_check, Estimators};
use sns_core::{BilinearWorkspace, Error, FourierField, NoiseOperator, PhysicsParams, Simulator, SpectralGrid, TestFunction};

struct Setup {
    est: Estimators,
    grid: Arc<SpectralGrid>,
}

fn setup(n: u32, nu: f64, n0: u32, q: f64, dt: f64, nonlinear: bool, n_paths: usize) -> Setup {
    let grid = SpectralGrid::new(n).unwrap();
    let ws = Arc::new(BilinearWorkspace::new(&grid));
    let mut params = PhysicsParams::new(&grid, nu, n0).unwrap();
    params.nonlinear = nonlinear;
    let noise = if q == 0.0 {
        NoiseOperator::zero(&grid, n0).unwrap()
    } else {
        NoiseOperator::uniform(&grid, n0, q).unwrap()
    };
    let c2 = constant_c2(&grid).unwrap().value;
    let consts = BoundConstants::new(&params, &noise, constant_c1(&grid), c2);
    let sim = Arc::new(Simulator::new(ws, params, noise, dt).unwrap());
    Setup {
        est: Estimators::new(sim, consts, n_paths, 11).unwrap(),
        grid,
    }
}

fn field(g: &Arc<SpectralGrid>, entries: &[([i32; 2], f64, f64)]) -> FourierField {
    let mut u = FourierField::zeros(g);
    for (k, re, im) in entries {
        u.set_mode(*k, Complex64::new(*re, *im)).unwrap();
    }
    u
}

fn default_setup(n_paths: usize) -> Setup {
    setup(4, 1.2, 2, 0.2, 0.01, true, n_paths)
}

#[test]
fn constant_function_and_time_zero_are_exact() {
    let s = default_setup(64);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let c = TestFunction::constant(&x0, 2.0).unwrap();
    let e = s.est.semigroup_estimate(&c, &x0, 0.5).unwrap();
    assert_eq!((e.mean, e.stderr), (2.0, 0.0));
    let f = TestFunction::gauss_bump(&x0, 2, 0.5, 1.0).unwrap();
    let e0 = s.est.semigroup_estimate(&f, &x0, 0.0).unwrap();
    assert_eq!((e0.mean, e0.stderr), (f.eval(&x0), 0.0));
}

/// Linear dynamics: each real coordinate of a forced mode is Gaussian with mean
/// `a0 d^n` and variance `q^2 dt/2 sum_{j=1..n} d^{2j}`, so the bump has a closed form.
#[test]
fn linear_regime_matches_gaussian_integral() {
    let (nu, q, dt, t) = (0.8, 0.5, 0.01, 0.5);
    let s = setup(4, nu, 2, q, dt, false, 4000);
    let x0 = field(&s.grid, &[([1, 0], 0.3, -0.2), ([1, 1], 0.1, 0.0), ([2, 1], 0.2, 0.2)]);
    let c = field(&s.grid, &[([1, 0], 0.1, 0.0), ([0, 1], 0.05, 0.05)]);
    let (m, sc, a) = (2u32, 0.6, 1.5);
    let f = TestFunction::gauss_bump(&c, m, sc, a).unwrap();
    let n = (t / dt).round() as i32;
    let alpha = 2.0 / (sc * sc);
    let mut prod = 1.0;
    for (i, k) in s.grid.modes().iter().enumerate() {
        let k2 = s.grid.norm_sq(i);
        if k2 > (m * m) as f64 {
            continue;
        }
        let d = (-nu * k2 * dt).exp();
        let forced = k2 <= 4.0;
        let var = if forced {
            q * q * dt / 2.0 * (1..=n).map(|j| d.powi(2 * j)).sum::<f64>()
        } else {
            0.0
        };
        let mean = x0.amplitude_at(*k) * d.powi(n);
        let ck = c.amplitude_at(*k);
        for (mu, cc) in [(mean.re, ck.re), (mean.im, ck.im)] {
            let den = 1.0 + 2.0 * alpha * var;
            prod *= den.powf(-0.5) * (-alpha * (mu - cc).powi(2) / den).exp();
        }
    }
    let exact = 1.0 + a * prod;
    let e = s.est.semigroup_estimate(&f, &x0, t).unwrap();
    assert!((e.mean - exact).abs() <= 3.0 * e.stderr, "{} vs {exact} (se {})", e.mean, e.stderr);
}

#[test]
fn weighted_estimate_reduces_to_direct_at_equal_starts() {
    let s = default_setup(40);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1), ([2, 1], 0.05, 0.0)]);
    let f = TestFunction::gauss_bump(&x0, 2, 0.4, 1.0).unwrap();
    let d = s.est.semigroup_estimate(&f, &x0, 0.3).unwrap();
    let w = s.est.weighted_semigroup_estimate(&f, &x0, &x0, 0.3).unwrap();
    assert_eq!(d, w.estimate);
    assert_eq!((w.mean_weight.mean, w.mean_weight.stderr), (1.0, 0.0));
    assert_eq!(w.effective_samples, 40.0);
}

#[test]
fn weighted_estimate_matches_direct_simulation_from_y() {
    let s = default_setup(3000);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let y0 = field(&s.grid, &[([1, 0], 0.25, 0.05), ([0, 1], 0.05, 0.0), ([2, 1], 0.03, 0.0)]);
    let fs = [
        TestFunction::gauss_bump(&y0, 2, 0.4, 1.0).unwrap(),
        TestFunction::coordinate_sigmoid(&x0, &field(&s.grid, &[([1, 0], 1.0, 0.0)]), 0.2, 1.0).unwrap(),
    ];
    for f in &fs {
        let w = s.est.weighted_semigroup_estimate(f, &x0, &y0, 1.0).unwrap();
        let d = s.est.semigroup_estimate_independent(f, &y0, 1.0).unwrap();
        assert!(!w.low_ess_warning);
        assert!(w.estimate.agrees_with(&d, 3.0), "{:?} vs {:?}", w.estimate, d);
    }
    let c = TestFunction::constant(&x0, 3.0).unwrap();
    let w = s.est.weighted_semigroup_estimate(&c, &x0, &y0, 1.0).unwrap();
    assert!((w.estimate.mean - 3.0).abs() <= 3.0 * w.estimate.stderr);
}

#[test]
fn entropy_forms_agree_and_vanish_without_shift() {
    let s = default_setup(2000);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let y0 = field(&s.grid, &[([1, 0], 0.3, 0.1), ([1, 1], 0.0, 0.05)]);
    let r = s.est.entropy_estimate(&x0, &y0, 1.0).unwrap();
    assert!(r.forms_agree, "{r:?}");
    assert!(r.weighted_control_energy.mean > 0.0);
    assert!(r.bound.as_ref().unwrap().pass);
    let z = s.est.entropy_estimate(&x0, &x0, 1.0).unwrap();
    assert_eq!(z.weighted_control_energy.mean, 0.0);
    assert_eq!(z.m_log_m.mean, 0.0);
}

#[test]
fn zh_moments_decay_and_vanish_at_equal_starts() {
    let s = default_setup(300);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let y0 = field(&s.grid, &[([1, 0], 0.25, 0.1), ([2, 1], 0.05, 0.0), ([3, 0], 0.0, 0.05)]);
    let grid: Vec<f64> = (1..=5).map(|i| 1.0 + 0.4 * i as f64).collect();
    let reps = s.est.zh_moment_decay(&[1, 2], &x0, &y0, &grid).unwrap();
    for r in &reps {
        assert!(r.all_pass, "{r:?}");
        assert!(r.fitted_rate.unwrap() < 0.0);
    }
    let zero = s.est.zh_moment_decay(&[1], &x0, &x0, &grid).unwrap();
    assert!(zero[0].rows.iter().all(|r| r.moment.mean == 0.0));
    assert_eq!(zero[0].sup_unit.mean, 0.0);
    assert!(zero[0].fitted_rate.is_none());
    assert!(s.est.zh_moment_decay(&[1], &x0, &y0, &grid[..2]).is_err());
}

#[test]
fn exp_moment_gate_and_degenerate_point() {
    let s = setup(4, 1.0, 2, 0.0, 0.01, true, 8);
    let zero = FourierField::zeros(&s.grid);
    let r = s.est.exp_moment_check(&zero, 1.0).unwrap();
    assert_eq!(r.report.lhs.mean, 1.0);
    assert_eq!(r.report.rhs, 1.0);
    assert!(r.report.pass);
    let bad = setup(4, 0.5, 2, 0.2, 0.01, true, 8);
    match bad.est.exp_moment_check(&zero, 1.0) {
        Err(Error::Hypothesis { name, .. }) => assert!(name.starts_with("exp_moment")),
        other => panic!("expected hypothesis error, got {other:?}"),
    }
    let s = default_setup(1000);
    let x0 = field(&s.grid, &[([1, 0], 0.3, 0.1)]);
    let r = s.est.exp_moment_check(&x0, 1.0).unwrap();
    assert!(r.report.pass && r.report.margin > 0.0, "{r:?}");
}

#[test]
fn mlh_jensen_cell_and_constant_function() {
    let s = default_setup(500);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let f = TestFunction::gauss_bump(&x0, 2, 0.3, 3.0).unwrap();
    let r = s.est.mlh_check(&f, &x0, &x0, 1.0).unwrap();
    assert!(r.report.pass);
    assert_eq!(r.rhs_parts.entropy_term, 0.0);
    assert!(r.report.margin >= 0.0);
    let y0 = field(&s.grid, &[([1, 0], 0.25, 0.1)]);
    let c = TestFunction::constant(&x0, 2.0).unwrap();
    let r = s.est.mlh_check(&c, &x0, &y0, 1.0).unwrap();
    assert!(r.report.pass);
    let consts = r.rhs_parts.entropy_term + r.rhs_parts.shift_term;
    assert!((r.report.margin - consts).abs() <= 3.0 * r.report.sigma + 1e-12, "{r:?}");
}

#[test]
fn gradient_probe_limits() {
    let s = default_setup(200);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let h = field(&s.grid, &[([1, 0], 1.0, 0.5), ([0, 1], 0.0, 0.3)]);
    let c = TestFunction::constant(&x0, 2.0).unwrap();
    for r in s.est.gradient_probe(&c, &x0, &[h.clone()], &[0.5], &[1e-2]).unwrap() {
        assert_eq!(r.quotient.mean, 0.0);
    }
    let f = TestFunction::gauss_bump(&field(&s.grid, &[([1, 0], 0.1, 0.0)]), 2, 0.5, 1.0).unwrap();
    let rows = s.est.gradient_probe(&f, &x0, &[h], &[0.0, 1.0], &[1e-3, 1e-5]).unwrap();
    for r in &rows {
        assert!(r.pass, "{r:?}");
        if let Some(a) = r.analytic {
            assert!((r.quotient.mean - a).abs() < 10.0 * r.eps, "{r:?}");
        }
    }
    assert_eq!(rows.iter().filter(|r| r.analytic.is_some()).count(), 2);
}

#[test]
fn distance_bounds_sandwich() {
    let s = default_setup(300);
    let x0 = field(&s.grid, &[([1, 0], 0.2, 0.1)]);
    let y0 = field(&s.grid, &[([1, 0], 0.25, 0.1), ([0, 1], 0.05, 0.05)]);
    let rows = s.est.dgamma_distance_bounds(&x0, &y0, &[0.5, 1.0, 2.0], &[0.05, 1e9], 8).unwrap();
    for r in &rows {
        assert!(r.sandwich_ok && r.lower.mean <= r.upper.mean + 1e-15, "{r:?}");
    }
    let huge: Vec<_> = rows.iter().filter(|r| r.gamma == 1e9).collect();
    assert!(huge.iter().all(|r| r.upper.mean < 1e-9));
    let same = s.est.dgamma_distance_bounds(&x0, &x0, &[0.5], &[0.1], 4).unwrap();
    assert_eq!((same[0].upper.mean, same[0].lower.mean), (0.0, 0.0));
    assert!(s.est.dgamma_distance_bounds(&x0, &y0, &[0.5], &[0.1], 0).is_err());
}

#[test]
fn entropy_inequality_edge_cases() {
    // f = 1 is Jensen, with equality for constant g
    let r = entropy_inequality_check(&[1.0; 4], &[0.7; 4]).unwrap();
    assert!(r.pass);
    assert!(r.margin.abs() < 1e-15);
    let r = entropy_inequality_check(&[1.0, 1.0, 1.0], &[0.0, 1.0, -2.0]).unwrap();
    assert!(r.pass && r.margin > 0.0);
    // g = 0 leaves the entropy of f, which is nonnegative
    let r = entropy_inequality_check(&[0.5, 2.0, 0.0], &[0.0; 3]).unwrap();
    assert!(r.pass && r.rhs >= 0.0);
    assert!(entropy_inequality_check(&[0.0, 0.0], &[1.0, 2.0]).is_err());
    assert!(entropy_inequality_check(&[1.0], &[1.0]).is_err());
}
