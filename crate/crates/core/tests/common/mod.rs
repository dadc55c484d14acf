//! Invariants shared by the property tests and the acceptance run. Each one
//! drives a seeded proptest runner so both targets see the same cases.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use slowfast::approx::{extract_exits, frechet_distance, Point};
use slowfast::katriel::{self, OrbitOptions, TwoPatchModel, PERIOD};
use slowfast::sim::{self, Chart, Initial, SimOptions, SmParams};
use slowfast::{quad, PiecewiseFunction};

pub const FIG2: &str = "x<2*pi: cos(x)+cos(2*x)+0.4 ; else: -1";
pub const FIG8: &str = "x<3.1416: 0.5*cos(x) ; else: 1.5+1.8*sin(x)";

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

pub fn quadrature_additivity(cases: u32) -> Result<(), String> {
    let f = PiecewiseFunction::parse(FIG2).unwrap();
    let d = PiecewiseFunction::parse(katriel::EXAMPLE_D).unwrap();
    let abc = (-5.0..10.0f64, 0.0..5.0f64, 0.0..5.0f64).prop_map(|(a, u, v)| (a, a + u, a + u + v));
    run(cases, abc, |(a, b, c)| {
        for g in [&f, &d] {
            let whole = g.integrate(a, c);
            let parts = g.integrate(a, b) + g.integrate(b, c);
            prop_assert!((whole - parts).abs() <= 1e-9, "{a} {b} {c}: {whole} vs {parts}");
            let back = g.integrate(c, a);
            prop_assert!((whole + back).abs() <= 1e-12);
        }
        let h = |x: f64| (3.0 * x).sin() * (-0.1 * x * x).exp();
        let whole = quad::integrate(h, a, c, 1e-12);
        let parts = quad::integrate(h, a, b, 1e-12) + quad::integrate(h, b, c, 1e-12);
        prop_assert!((whole - parts).abs() <= 1e-9);
        Ok(())
    })
}

fn polyline() -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64), 1..16)
}

pub fn frechet_metric(cases: u32) -> Result<(), String> {
    run(cases, (polyline(), polyline(), polyline()), |(a, b, c)| {
        prop_assert_eq!(frechet_distance(&a, &a), 0.0);
        let ab = frechet_distance(&a, &b);
        prop_assert_eq!(ab, frechet_distance(&b, &a));
        prop_assert!(ab >= 0.0);
        let ac = frechet_distance(&a, &c);
        let bc = frechet_distance(&b, &c);
        prop_assert!(ac <= ab + bc + 1e-12, "{ac} > {ab} + {bc}");
        Ok(())
    })
}

/// Variational derivative of the period map in `(0, 1)`. At large `ν` the
/// contraction is mild enough for a central difference to resolve it.
pub fn period_map_contraction(cases: u32) -> Result<(), String> {
    let grid = (0.05..0.2f64, -0.6..-0.05f64);
    run(cases, grid, |(nu, rho)| {
        let model = TwoPatchModel::example(nu, 0.5 * (rho / nu).exp());
        let (p, f) = katriel::reduce(&model).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let orbit = katriel::periodic_orbit(&p, &f, &OrbitOptions::default()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(orbit.derivative > 0.0 && orbit.derivative < 1.0, "nu {nu} rho {rho}: {}", orbit.derivative);
        Ok(())
    })?;
    let coarse = (4.0..10.0f64, 0.01..0.3f64);
    run(cases, coarse, |(nu, mu)| {
        let model = TwoPatchModel::example(nu, mu);
        let (p, f) = katriel::reduce(&model).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let orbit = katriel::periodic_orbit(&p, &f, &OrbitOptions::default()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let opts = SimOptions { record: false, rtol: 1e-12, atol: 1e-14, ..SimOptions::default() };
        let image = |y: f64| -> Result<f64, TestCaseError> {
            let tr = sim::integrate(&p, &f, 0.0, y, PERIOD, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
            Ok(tr.final_sign() * tr.final_ln_abs().exp())
        };
        let h = 1e-6 * orbit.y0.abs().max(1.0);
        let fd = (image(orbit.y0 + h)? - image(orbit.y0 - h)?) / (2.0 * h);
        prop_assert!(fd > 0.0 && fd < 1.0, "nu {nu} mu {mu}: fd {fd}");
        prop_assert!((fd - orbit.derivative).abs() <= 1e-4 * orbit.derivative.max(1e-3), "fd {fd} vs {}", orbit.derivative);
        Ok(())
    })
}

/// The same starting point given in each chart gives the same trajectory, and
/// the lens coordinate does not jump where the chart changes.
pub fn chart_handoff_continuity(cases: u32) -> Result<(), String> {
    let f = PiecewiseFunction::parse(FIG2).unwrap();
    let strategy = (0.005..0.05f64, -0.6..-0.1f64, -3.0..3.0f64, prop::bool::ANY);
    run(cases, strategy, |(eps, rho, lz0, neg)| {
        let p = SmParams::with_rho(eps, rho);
        let sign = if neg { -1.0 } else { 1.0 };
        let ln_abs = p.ln_m() + lz0;
        let y0 = sign * ln_abs.exp();
        let opts = SimOptions::default();
        let starts = [Initial::Log { sign, ln_abs }, Initial::MUnits(sign * lz0.exp()), Initial::Y(y0)];
        let mut finals = Vec::new();
        for s in starts {
            if matches!(s, Initial::Y(y) if y == 0.0) {
                continue;
            }
            let tr = sim::integrate(&p, &f, 0.0, s, 3.0, &opts).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for w in tr.samples.windows(2) {
                if w[0].chart != w[1].chart && w[0].chart != Chart::Raw && w[1].chart != Chart::Raw {
                    let dz = (w[1].z - w[0].z).abs();
                    prop_assert!(dz <= 0.05, "jump {dz} at x {} ({:?} -> {:?})", w[1].x, w[0].chart, w[1].chart);
                }
            }
            finals.push(tr.samples.last().unwrap().z);
        }
        for z in &finals[1..] {
            prop_assert!((z - finals[0]).abs() <= 1e-6, "{finals:?}");
        }
        Ok(())
    })
}

pub fn x_exactness(cases: u32) -> Result<(), String> {
    let f = PiecewiseFunction::parse(FIG2).unwrap();
    let strategy = (-2.0..2.0f64, -3.0..3.0f64, 0.005..0.1f64, -0.6..-0.05f64);
    run(cases, strategy, |(x0, y0, eps, rho)| {
        prop_assume!(y0.abs() > 1e-3);
        let tr = sim::integrate(&SmParams::with_rho(eps, rho), &f, x0, y0, 2.0, &SimOptions::default())
            .map_err(|e| TestCaseError::fail(e.to_string()))?;
        let mut prev = f64::NEG_INFINITY;
        for s in &tr.samples {
            prop_assert!(s.t > prev);
            prev = s.t;
            prop_assert!((s.x - (x0 + s.t)).abs() <= 1e-12 * s.x.abs().max(1.0));
        }
        prop_assert!((tr.t_end() - 2.0).abs() <= 1e-12);
        Ok(())
    })
}

pub fn lens_round_trip(cases: u32) -> Result<(), String> {
    let strategy = (-7.0..7.0f64, prop::bool::ANY, 0.005..0.2f64);
    run(cases, strategy, |(l, neg, eps)| {
        let y = if neg { -(l.exp()) } else { l.exp() };
        let z = sim::lens(y, eps);
        prop_assert!(z.abs() > 0.0 && z.signum() == y.signum());
        prop_assert_eq!(z.abs() < 1.0, y.abs() < 1.0);
        let back = sim::unlens(z, eps);
        prop_assert!((back - y).abs() <= 1e-11 * y.abs(), "{y} -> {z} -> {back}");
        Ok(())
    })
}

pub fn cisim_exit(eps: f64, rho: f64, u: f64) -> Option<f64> {
    let f = PiecewiseFunction::parse(FIG8).unwrap();
    let opts = SimOptions { record: true, ..SimOptions::default() };
    let tr = sim::integrate(&SmParams::with_rho(eps, rho), &f, 1.0, Initial::MUnits(u), 5.5, &opts).ok()?;
    extract_exits(&tr, tr.kappa).first().map(|e| e.x_exit)
}

/// Exit order along one side of the axis follows the order of the lens coordinate.
pub fn exit_order_monotone(cases: u32) -> Result<(), String> {
    let (eps, rho) = (0.01, -0.3);
    let dir = |a: f64, b: f64| (cisim_exit(eps, rho, b).unwrap() - cisim_exit(eps, rho, a).unwrap()).signum();
    let reference = [dir(0.2, 0.8), dir(-0.8, -0.2)];
    let strategy = (0.02..1.0f64, 0.02..1.0f64, prop::bool::ANY);
    run(cases, strategy, |(a, b, neg)| {
        prop_assume!((a - b).abs() > 0.05);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (lo, hi, want) = if neg { (-hi, -lo, reference[1]) } else { (lo, hi, reference[0]) };
        let (Some(x_lo), Some(x_hi)) = (cisim_exit(eps, rho, lo), cisim_exit(eps, rho, hi)) else {
            return Err(TestCaseError::fail("no exit"));
        };
        prop_assert_eq!((x_hi - x_lo).signum(), want, "u {} {}: {} {}", lo, hi, x_lo, x_hi);
        Ok(())
    })
}

pub fn delta_matches_direct(cases: u32) -> Result<(), String> {
    let strategy = (prop::sample::select(vec![0.1f64, 0.05]), -0.6..-0.05f64);
    run(cases, strategy, |(nu, rho)| {
        let model = TwoPatchModel::example(nu, 0.5 * (rho / nu).exp());
        let a = katriel::delta(&model).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let b = katriel::delta_direct(&model, 50, 10).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!((a - b).abs() <= 1e-2, "nu {nu} rho {rho}: {a} vs {b}");
        Ok(())
    })
}

pub type Invariant = fn(u32) -> Result<(), String>;

/// Every invariant with its case count.
pub const SUITE: &[(&str, Invariant, u32)] = &[
    ("quadrature_additivity", quadrature_additivity, 256),
    ("frechet_metric", frechet_metric, 256),
    ("period_map_contraction", period_map_contraction, 12),
    ("chart_handoff_continuity", chart_handoff_continuity, 32),
    ("x_exactness", x_exactness, 32),
    ("lens_round_trip", lens_round_trip, 1024),
    ("exit_order_monotone", exit_order_monotone, 12),
    ("delta_matches_direct", delta_matches_direct, 8),
];

pub fn run_named(name: &str) -> Result<(), String> {
    let (_, check, cases) = SUITE.iter().find(|(n, _, _)| *n == name).expect("known invariant");
    check(*cases)
}
