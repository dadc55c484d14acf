//! Acceptance run: one line per criterion, exit status nonzero on any
//! unexpected outcome.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use slowfast::approx::{self, extract_exits};
use slowfast::ctraj::{self, ExitLevel};
use slowfast::katriel::{self, ThresholdOptions, TwoPatchModel};
use slowfast::props;
use slowfast::sim::{self, Initial, SimOptions, SmParams, Trajectory};
use slowfast::PiecewiseFunction;

const EXIT_TOL: f64 = 0.05;
const EXIT_RUNTIME_S: f64 = 5.0;
const FRECHET_TOL: f64 = 0.15;
const FRECHET_DS: f64 = 0.01;
const COARSE_EXIT_TOL: f64 = 0.3;
const RETARD_LIMIT_RHO: f64 = -1e-6;
const RETARD_LIMIT_TOL: f64 = 1e-2;
const KATRIEL_TOL: f64 = 1e-2;
const CHI_WANT: f64 = 0.1586;
const CHI_TOL: f64 = 1e-3;
const SLOPE_MAX: f64 = -0.05;
const FIT_RESIDUAL_MAX: f64 = 0.5;
const THRESHOLD_RUNTIME_S: f64 = 300.0;

const FIG5: &str = "all: 0.5*cos(x)+0.1";

/// Clauses expected to fail, with the measured reason recorded in the report.
const KNOWN_FAILURES: &[&str] = &["3.sign"];

struct Line {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn line(id: &'static str, pass: bool, detail: String) -> Line {
    Line { id, pass, detail }
}

fn simulate(spec: &str, eps: f64, rho: f64, x0: f64, y0: impl Into<Initial>, t_end: f64) -> Trajectory {
    let f = PiecewiseFunction::parse(spec).unwrap();
    sim::integrate(&SmParams::with_rho(eps, rho), &f, x0, y0, t_end, &SimOptions::default()).unwrap()
}

fn fig2_predictions() -> Vec<f64> {
    let f = PiecewiseFunction::parse(common::FIG2).unwrap();
    ctraj::build(&f, -0.4, 0.0, 2.0, 7.0).unwrap().exits().iter().map(|e| e.s).collect()
}

fn exits_match(eps: f64, tol: f64) -> (bool, String) {
    let want = fig2_predictions();
    let tr = simulate(common::FIG2, eps, -0.4, 0.0, 2.0, 7.0);
    let got: Vec<f64> = extract_exits(&tr, tr.kappa).iter().map(|e| e.x_exit).collect();
    let ok = got.len() == want.len() && got.iter().zip(&want).all(|(g, w)| (g - w).abs() <= tol);
    (ok, format!("predicted {want:.4?}, simulated {got:.4?}, tol {tol}"))
}

fn criterion_1() -> Line {
    let start = Instant::now();
    let (ok, detail) = exits_match(0.01, EXIT_TOL);
    let secs = start.elapsed().as_secs_f64();
    line("1", ok && secs < EXIT_RUNTIME_S, format!("{detail}, {:.1} ms", secs * 1e3))
}

fn criterion_2() -> Line {
    let f = PiecewiseFunction::parse(common::FIG2).unwrap();
    let ct = ctraj::build(&f, -0.4, 0.0, 2.0, 7.0).unwrap();
    let d = |eps| {
        let tr = simulate(common::FIG2, eps, -0.4, 0.0, 2.0, 7.0);
        approx::verify(&tr, &ct, FRECHET_TOL, FRECHET_DS).unwrap().frechet
    };
    let (coarse, fine) = (d(0.01), d(0.005));
    line("2", coarse <= FRECHET_TOL && fine < coarse, format!("frechet {coarse:.5} at eps 0.01, {fine:.5} at eps 0.005"))
}

fn criterion_3() -> Vec<Line> {
    let f = PiecewiseFunction::parse(FIG5).unwrap();
    let theta = (-0.2f64).acos();
    let oracle = ctraj::exit_point(&f, -0.6, theta, 20.0).unwrap();
    let tr = simulate(FIG5, 0.01, -0.6, 0.0, 2.0, 8.0);
    let exits = extract_exits(&tr, tr.kappa);
    let mut out = Vec::new();
    let one = exits.len() == 1;
    let e = exits.first();
    let same = e.is_some_and(|e| e.side_in == e.side_out);
    let close = e.is_some_and(|e| (e.x_exit - oracle.s).abs() <= EXIT_TOL);
    out.push(line(
        "3",
        one && same && close && oracle.level == ExitLevel::Zero,
        format!("{} exit(s), oracle {:.4} level {}, simulated {:?}", exits.len(), oracle.s, oracle.level.as_str(), e.map(|e| (e.x_exit, e.side_in, e.side_out))),
    ));
    // sign of y between entry and exit of the halo
    let crossings = e.map_or(0, |e| {
        let inside: Vec<_> = tr.samples.iter().filter(|s| s.x >= e.x_entry && s.x <= e.x_exit).collect();
        inside.windows(2).filter(|w| w[0].z.signum() != w[1].z.signum() && w[0].z != 0.0 && w[1].z != 0.0).count()
    });
    let phi_min = (0..=20000)
        .map(|i| {
            let x = theta + (oracle.s - theta) * i as f64 / 20000.0;
            0.5 * (x.sin() - theta.sin()) + 0.1 * (x - theta)
        })
        .fold(f64::INFINITY, f64::min);
    out.push(line(
        "3.sign",
        crossings == 0,
        format!("{crossings} axis crossing(s) inside the halo; min of the primitive {phi_min:.4} < rho -0.6"),
    ));
    out
}

fn criterion_4() -> Line {
    let f = PiecewiseFunction::parse(common::FIG2).unwrap();
    let theta1 = ((-1.0 + 5.8f64.sqrt()) / 4.0).acos();
    let rhos = [-0.4, -0.3, -0.2, -0.1, -0.05];
    let s: Vec<f64> = rhos.iter().map(|&r| ctraj::exit_point(&f, r, theta1, 7.0).unwrap().s).collect();
    let decreasing = s.windows(2).all(|w| w[1] < w[0]);
    let limit = ctraj::exit_point(&f, RETARD_LIMIT_RHO, theta1, 7.0).unwrap().retard;
    let h = |rho| ctraj::build(&f, rho, 0.0, 2.0, 7.0).unwrap().horizontal_count();
    let (h1, h4) = (h(-0.1), h(-0.4));
    line(
        "4",
        decreasing && limit < RETARD_LIMIT_TOL && h1 == 5 && h4 == 3,
        format!("S {s:.4?}, retard {limit:.2e} at rho {RETARD_LIMIT_RHO}, horizontals {h1} at -0.1 and {h4} at -0.4"),
    )
}

fn criterion_5() -> Line {
    let (ok, detail) = exits_match(0.1, COARSE_EXIT_TOL);
    line("5", ok, detail)
}

/// First exits of the nine lens-scaled starts, grouped by side.
fn halo_fan(rho: f64) -> (Vec<(f64, Option<f64>)>, bool) {
    let eps = 0.01;
    let ln_m = SmParams::with_rho(eps, rho).ln_m();
    let runs: Vec<(f64, Option<f64>)> = (1..=9)
        .map(|k| {
            let u = (k as f64 - 5.0) * 0.2;
            let z0 = sim::lens_from_ln(u.signum(), u.abs().ln() + ln_m, eps);
            (z0, common::cisim_exit(eps, rho, u))
        })
        .collect();
    let monotone = [1.0, -1.0].iter().all(|&side| {
        let xs: Vec<f64> = runs.iter().filter(|(z, _)| z.signum() == side && *z != 0.0).filter_map(|(_, x)| *x).collect();
        xs.windows(2).all(|w| w[1] > w[0]) || xs.windows(2).all(|w| w[1] < w[0])
    });
    (runs, monotone)
}

fn criterion_6() -> Vec<Line> {
    let (runs, monotone) = halo_fan(-1.2);
    let exited = runs.iter().filter(|(_, x)| x.is_some()).count();
    let mut out = vec![line("6", monotone && exited < runs.len(), format!("{exited} of 9 exited by t = 5.5 at rho -1.2"))];
    let (runs, monotone) = halo_fan(-0.3);
    let exits: Vec<_> = runs.iter().filter_map(|(_, x)| *x).collect();
    out.push(line("6.companion", monotone && exits.len() >= 6, format!("rho -0.3: exits {exits:.4?}")));
    out
}

fn criterion_7() -> Line {
    let mut worst: f64 = 0.0;
    for nu in [0.1, 0.05] {
        for rho in [-0.05, -0.3, -0.6] {
            let model = TwoPatchModel::example(nu, 0.5 * (rho / nu).exp());
            let a = katriel::delta(&model).unwrap();
            let b = katriel::delta_direct(&model, 50, 10).unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    let model = TwoPatchModel::example(0.1, 0.1);
    let chi = katriel::chi(&model).unwrap();
    // closed form: mean|d| = (2 + ∫_π^{2π}|1 + 1.5 sin|) / 2π
    let chi_oracle = -0.1 + (2.0 + 1.249_453_926_318) / (4.0 * PI);
    let (m1, m2) = model.means();
    line(
        "7",
        worst <= KATRIEL_TOL && (chi - CHI_WANT).abs() <= CHI_TOL && (chi - chi_oracle).abs() < 1e-9 && m1 < 0.0 && m2 < 0.0,
        format!("max |delta - direct| {worst:.2e} over 6 points, chi {chi:.6}, means ({m1:.5}, {m2:.5})"),
    )
}

fn criterion_8() -> Line {
    let start = Instant::now();
    let nus = [0.1, 0.05, 0.02];
    let mut mus = Vec::new();
    for nu in nus {
        match katriel::mu_star(&TwoPatchModel::example(nu, 0.0), &ThresholdOptions::default()) {
            Ok(t) => mus.push(t.mu_star),
            Err(e) => return line("8", false, format!("nu {nu}: {e}")),
        }
    }
    // the sign change seen by the independent simulation
    let m = TwoPatchModel::example(0.1, mus[0]);
    let below = katriel::delta_direct(&m.with_mu(0.5 * mus[0]), 50, 10).unwrap();
    let above = katriel::delta_direct(&m.with_mu(2.0 * mus[0]), 50, 10).unwrap();
    let fit = katriel::decay_fit(&nus, &mus).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ordered = mus[2] < mus[1] && mus[1] < mus[0];
    line(
        "8",
        fit.slope < SLOPE_MAX && fit.max_residual <= FIT_RESIDUAL_MAX && ordered && below < 0.0 && above > 0.0 && secs < THRESHOLD_RUNTIME_S,
        format!(
            "mu* [{}], slope {:.4}, max residual {:.3}, direct delta {below:.2e} / {above:.2e} at 0.5x / 2x, {secs:.1} s",
            mus.iter().map(|m| format!("{m:.4e}")).collect::<Vec<_>>().join(", "),
            fit.slope,
            fit.max_residual
        ),
    )
}

fn criterion_9() -> Line {
    let mut failed = Vec::new();
    let mut count = 0;
    for eps in [0.01, 0.005] {
        for r in props::default_suite(eps) {
            for c in r.flatten() {
                count += 1;
                if !c.pass {
                    failed.push(format!("{} at eps {eps}", c.name));
                }
            }
        }
    }
    line("9", failed.is_empty(), format!("{count} checks, failed {failed:?}"))
}

fn criterion_10() -> Line {
    let mut failed = Vec::new();
    for (name, check, cases) in common::SUITE {
        if let Err(e) = check(*cases) {
            failed.push(format!("{name}: {}", e.lines().next().unwrap_or("")));
        }
    }
    line("10", failed.is_empty(), format!("{} invariants, failed {failed:?}", common::SUITE.len()))
}

fn main() {
    let mut lines = vec![criterion_1(), criterion_2()];
    lines.extend(criterion_3());
    lines.push(criterion_4());
    lines.push(criterion_5());
    lines.extend(criterion_6());
    lines.push(criterion_7());
    lines.push(criterion_8());
    lines.push(criterion_9());
    lines.push(criterion_10());

    let mut unexpected = 0;
    for l in &lines {
        let known = KNOWN_FAILURES.contains(&l.id);
        let tag = match (l.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (expected to fail)",
        };
        if l.pass == known {
            unexpected += 1;
        }
        println!("[{tag}] criterion {}: {}", l.id, l.detail);
    }
    println!("acceptance: {} lines, {unexpected} unexpected", lines.len());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
