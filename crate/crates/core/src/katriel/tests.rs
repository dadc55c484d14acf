use super::*;
use std::f64::consts::PI;

// closed-form primitive of the example difference on one period
fn d_primitive(x: f64) -> f64 {
    let k = (x / PERIOD).floor();
    let r = x - k * PERIOD;
    // ∫cos over [0,π] is 0; the second piece gives π − 3 per period
    let inner = if r < PI { r.sin() } else { (r - PI) - 1.5 * (r.cos() + 1.0) };
    k * (PI - 3.0) + inner
}

// first x > t where the primitive from t reaches ±2|ρ| or returns to 0
fn exit_oracle(t: f64, rho: f64) -> f64 {
    let g = |x: f64| d_primitive(x) - d_primitive(t);
    let hit = |x: f64, prev: f64| {
        let v = g(x);
        v.abs() >= 2.0 * rho.abs() || (v != 0.0 && prev != 0.0 && v.signum() != prev.signum())
    };
    let h = 1e-4;
    let mut x = t + h;
    let mut prev = g(x);
    loop {
        let nx = x + h;
        if hit(nx, prev) {
            let (mut a, mut b) = (x, nx);
            for _ in 0..60 {
                let c = 0.5 * (a + b);
                if hit(c, prev) {
                    b = c;
                } else {
                    a = c;
                }
            }
            return b;
        }
        prev = g(nx);
        x = nx;
    }
}

fn d_value(x: f64) -> f64 {
    let r = x.rem_euclid(PERIOD);
    if r < PI {
        r.cos()
    } else {
        1.0 + 1.5 * r.sin()
    }
}

fn thetas() -> [f64; 4] {
    let a = (2.0f64 / 3.0).asin();
    [PI / 2.0, PI, PI + a, 2.0 * PI - a]
}

#[test]
fn example_model_and_reduction() {
    let m = TwoPatchModel::example(0.05, 0.25);
    let (a, b) = m.means();
    let half = (PI - 3.0) / (4.0 * PI);
    assert!((a - (-0.1 + half)).abs() < 1e-12 && (b - (-0.1 - half)).abs() < 1e-12);
    assert!((chi(&m).unwrap() - 0.158_583_327_361).abs() < 1e-9);
    m.check_hypotheses().unwrap();
    let (p, f) = reduce(&m).unwrap();
    assert_eq!(p.eps, 0.05);
    assert!((p.m() - 0.5).abs() < 1e-15);
    for i in 0..100 {
        let x = 0.0731 * i as f64;
        assert!((f.value(x) - d_value(x)).abs() < 1e-12, "{x}");
    }
    assert!((f.integrate(0.0, PERIOD) - (PI - 3.0)).abs() < 1e-10);
    let (p0, _) = reduce(&m.with_mu(0.0)).unwrap();
    assert_eq!(p0.m(), 0.0);
}

#[test]
fn rejects_bad_models() {
    let d = PiecewiseFunction::parse(EXAMPLE_D).unwrap();
    let flat = PiecewiseFunction::constant(-0.1);
    assert!(matches!(TwoPatchModel::new(flat.clone(), d.clone(), 0.1, 0.1), Err(KatrielError::NotPeriodic)));
    assert!(TwoPatchModel::new(d.clone(), d.clone(), 0.0, 0.1).is_err());
    assert!(TwoPatchModel::new(d.clone(), d.clone(), 0.1, -1.0).is_err());
    // equal sink patches: chi = mean(r) < 0, no inflation
    let r = PiecewiseFunction::parse("periodic=2*pi; all: -0.1+0.5*sin(x)").unwrap();
    let same = TwoPatchModel::new(r.clone(), r, 0.1, 0.1).unwrap();
    assert!((chi(&same).unwrap() + 0.1).abs() < 1e-10);
    assert!(matches!(same.check_hypotheses(), Err(KatrielError::Hypothesis(_))));
    assert!(matches!(mu_star(&same, &ThresholdOptions::default()), Err(KatrielError::Hypothesis(_))));
}

#[test]
fn chi_of_opposite_constants() {
    let c = PiecewiseFunction::parse("periodic=2*pi; all: 0.3").unwrap();
    let m = TwoPatchModel::new(c.clone(), c.scale(-1.0), 0.1, 0.1).unwrap();
    assert!((chi(&m).unwrap() - 0.3).abs() < 1e-12);
}

#[test]
fn constant_f_orbit_is_the_equilibrium() {
    let f = PiecewiseFunction::parse("periodic=2*pi; all: 0.7").unwrap();
    for m in [1e-3, 0.5] {
        let orbit = periodic_orbit(&SmParams::with_m(0.05, m), &f, &OrbitOptions::default()).unwrap();
        assert!((orbit.y0 - 0.7).abs() < 1e-9, "{}", orbit.y0);
        assert!(orbit.samples.iter().all(|s| (s.y.unwrap() - 0.7).abs() < 1e-8));
        assert!(orbit.derivative > 0.0 && orbit.derivative < 1.0);
    }
    let zero = PiecewiseFunction::parse("periodic=2*pi; all: 1").unwrap();
    assert!(matches!(
        periodic_orbit(&SmParams::with_m(0.05, 0.0), &zero, &OrbitOptions::default()),
        Err(KatrielError::ZeroCoupling)
    ));
}

#[test]
fn symmetric_patches_have_flat_orbit() {
    let r = PiecewiseFunction::parse("periodic=2*pi; x<pi: -0.3+0.2*cos(x); else: -0.1").unwrap();
    let m = TwoPatchModel::new(r.clone(), r.clone(), 0.05, 0.2).unwrap();
    let want = 2.0 * r.integrate(0.0, PERIOD) / PERIOD;
    let e = delta_eval(&m, &OrbitOptions::default()).unwrap();
    assert!((e.delta - want).abs() < 1e-12, "{} vs {want}", e.delta);
    assert!((delta_direct(&m, 50, 10).unwrap() - want).abs() < 1e-9);
}

#[test]
fn decoupled_rates() {
    let m = TwoPatchModel::example(0.05, 0.0);
    let e = delta_eval(&m, &OrbitOptions::default()).unwrap();
    assert!((e.delta + 0.2).abs() < 1e-12 && !e.converged);
    assert!((delta_direct(&m, 50, 10).unwrap() + 0.2).abs() < 1e-9);
}

#[test]
fn orbit_shadows_periodic_ctrajectory() {
    // off the retard intervals y ≈ f, on them y ≈ 0, up to an O(ν) lag
    let rho = -0.3;
    // chain of the periodic C-trajectory: a sign change inside a retard
    // interval is not an entry
    let mut omega: Vec<(f64, f64)> = Vec::new();
    let mut t = thetas()[0];
    while t < thetas()[0] + PERIOD - 1e-9 {
        let s = exit_oracle(t, rho);
        omega.push((t, s));
        let all: Vec<f64> = (0..3).flat_map(|k| thetas().map(|u| u + k as f64 * PERIOD)).collect();
        t = all.into_iter().find(|&u| u > s).unwrap();
    }
    assert_eq!(omega.len(), 3);
    // corners are rounded over O(ε ln 1/ε)
    let near = |x: f64| {
        omega.iter().any(|&(a, b)| [x, x + PERIOD, x - PERIOD].iter().any(|&u| (u - a).abs() < 0.3 || (u - b).abs() < 0.3))
    };
    let inside = |x: f64| omega.iter().any(|&(a, b)| (x > a && x < b) || (x + PERIOD > a && x + PERIOD < b));
    for nu in [0.05, 0.01] {
        let m = TwoPatchModel::example(nu, (rho / nu).exp() / 2.0);
        let (p, f) = reduce(&m).unwrap();
        let orbit = periodic_orbit(&p, &f, &OrbitOptions::default()).unwrap();
        assert!(orbit.residual < 1e-9);
        let tol = 3.0 * nu;
        let mut checked = 0;
        for s in orbit.samples.iter().filter(|s| !near(s.x)) {
            let y = s.y.unwrap_or(0.0);
            if inside(s.x) {
                assert!(y.abs() < tol, "nu {nu} x {} y {y}", s.x);
            } else {
                assert!((y - d_value(s.x)).abs() < tol, "nu {nu} x {} y {y} f {}", s.x, d_value(s.x));
            }
            checked += 1;
        }
        assert!(checked > 4000, "{checked}");
    }
}

#[test]
fn delta_agrees_with_direct_simulation() {
    for (nu, rho) in [(0.1, -0.3), (0.05, -0.05), (0.05, -0.6)] {
        let m = TwoPatchModel::example(nu, (rho / nu).exp() / 2.0);
        let a = delta(&m).unwrap();
        let b = delta_direct(&m, 50, 10).unwrap();
        assert!((a - b).abs() < 1e-5, "nu {nu} rho {rho}: {a} vs {b}");
    }
}

#[test]
fn delta_approaches_the_ctrajectory_limit() {
    // ν → 0 at fixed ρ: y ≈ |f| off the retard intervals, 0 on them
    let rho = -0.05;
    let mut lost = 0.0;
    for &t in &thetas() {
        let s = exit_oracle(t, rho);
        lost += (d_primitive(s) - d_primitive(t)).abs();
    }
    let total_abs = 2.0 + 1.249_453_926_318;
    let limit = -0.2 + (total_abs - lost) / PERIOD;
    // each retard interval removes exactly 2|ρ| of ∫|f|
    assert!((lost - 8.0 * rho.abs()).abs() < 1e-9);
    let mut gaps = Vec::new();
    for nu in [0.02, 0.01, 0.005] {
        let d = delta(&TwoPatchModel::example(nu, (rho / nu).exp() / 2.0)).unwrap();
        gaps.push((d - limit).abs());
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
    assert!(gaps[2] < 0.03, "{gaps:?}");
    // and the limit tends to −0.2 + mean|f| as ρ → 0
    assert!((-0.2 + total_abs / PERIOD - 0.317_166_654_723).abs() < 1e-9);
}

#[test]
fn lemma_gate_and_rho_star() {
    let d = PiecewiseFunction::parse(EXAMPLE_D).unwrap();
    assert!(exits_precede_next_change(&d, -0.05).unwrap());
    assert!(!exits_precede_next_change(&d, -0.3).unwrap());
    // between sign changes the primitive is monotone, so the gate fails
    // exactly at ρ = −½ min |∫_{θᵢ}^{θᵢ₊₁} f|
    let th = thetas();
    let mut widths = Vec::new();
    for i in 0..4 {
        let next = if i < 3 { th[i + 1] } else { th[0] + PERIOD };
        widths.push((d_primitive(next) - d_primitive(th[i])).abs());
    }
    let want = -0.5 * widths.iter().cloned().fold(f64::INFINITY, f64::min);
    let got = rho_star(&d, -1.0, 1e-7).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn reduction_identity_holds() {
    let (nu, rho) = (0.05, -0.3);
    let m = TwoPatchModel::example(nu, (rho / nu).exp() / 2.0);
    let opts = OrbitOptions { sim: SimOptions { rtol: 1e-11, atol: 1e-14, record: false, ..SimOptions::default() }, ..OrbitOptions::default() };
    let r = reduction_identity_residual(&m, &opts).unwrap();
    assert!(r < 1e-8, "{r}");
}

#[test]
fn fit_examples() {
    let nus = [0.1f64, 0.05, 0.02];
    let exact: Vec<f64> = nus.iter().map(|n| (-0.3 / *n).exp()).collect();
    let fit = decay_fit(&nus, &exact).unwrap();
    assert!((fit.slope + 0.3).abs() < 1e-12 && fit.intercept.abs() < 1e-12 && fit.max_residual < 1e-12);
    let flat = decay_fit(&nus, &[1e-3; 3]).unwrap();
    assert!(flat.slope.abs() < 1e-12);
    assert!(decay_fit(&nus[..2], &exact[..2]).is_err());
    assert!(decay_fit(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]).is_err());
    assert!(decay_fit(&nus, &[1.0, 0.0, 1.0]).is_err());
}

#[test]
fn threshold_on_a_short_scan() {
    let m = TwoPatchModel::example(0.1, 0.0);
    let opts = ThresholdOptions { ln_mu_lo: -40.0, ..ThresholdOptions::default() };
    let th = mu_star(&m, &opts).unwrap();
    let below = delta(&m.with_mu(th.mu_star * 0.9)).unwrap();
    let above = delta(&m.with_mu(th.mu_star * 1.1)).unwrap();
    assert!(below <= 0.0 && above > 0.0, "{below} {above}");
    // Δ turns negative again for strong migration
    assert!(th.sign_changes >= 2, "{}", th.sign_changes);
    let shifted = {
        let d = PiecewiseFunction::parse(EXAMPLE_D).unwrap();
        TwoPatchModel::from_mean_and_difference(-0.08, &d, 0.1, 0.0).unwrap()
    };
    let th2 = mu_star(&shifted, &opts).unwrap();
    assert!(th2.mu_star < th.mu_star);
}
