//! Quantitative checks of the comparison lemmas behind the approximation
//! results: Gronwall, entry into the slow-curve halo, the semi-slow-fast
//! field near `z = ±1`, and the corridor around a sign change.

use serde::Serialize;

use crate::ode::{self, OdeOptions, Step};
use crate::par;
use crate::piecewise::PiecewiseFunction;
use crate::sim::{self, Initial, SimError, SimOptions, SmParams};

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub params: Vec<(String, f64)>,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    pub sub: Vec<CheckReport>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, params: &[(&str, f64)], measured: f64, bound: f64) -> Self {
        CheckReport {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            measured,
            bound,
            pass: measured <= bound,
            sub: Vec::new(),
        }
    }

    fn with_sub(mut self, sub: Vec<CheckReport>) -> Self {
        self.pass = self.pass && sub.iter().all(|s| s.pass);
        self.sub = sub;
        self
    }

    /// This report and its sub-checks, depth first.
    pub fn flatten(&self) -> Vec<&CheckReport> {
        let mut out = vec![self];
        for s in &self.sub {
            out.extend(s.flatten());
        }
        out
    }
}

fn tight() -> OdeOptions {
    OdeOptions { rtol: 1e-12, atol: 1e-14, h_max: 0.01, ..OdeOptions::default() }
}

/// Largest of `g` over the accepted steps, sampled at both ends and the midpoint.
fn sup_over_steps<const N: usize>(steps: &[Step<N>], g: impl Fn(f64, &[f64; N]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for s in steps {
        for th in [0.0, 0.5, 1.0] {
            worst = worst.max(g(s.t + th * s.h, &s.dense(th)));
        }
    }
    worst
}

/// `sup |x − y|` on `[0, T]` for `x' = F(t, x)` and `y' = F(t, y) + g(t, y)` against
/// `(|x₀ − y₀| + m_g/k) e^{kT} − m_g/k`.
pub fn gronwall_check(
    field: impl Fn(f64, f64) -> f64,
    pert: impl Fn(f64, f64) -> f64,
    m_g: f64,
    x0: f64,
    y0: f64,
    t_end: f64,
    k: f64,
) -> Result<CheckReport, ode::OdeError> {
    let mut steps = Vec::new();
    ode::solve(
        |t, v: &[f64; 2], _| [field(t, v[0]), field(t, v[1]) + pert(t, v[1])],
        0.0,
        [x0, y0],
        t_end,
        &[],
        &tight(),
        |s| steps.push(s.clone()),
    )?;
    let measured = sup_over_steps(&steps, |_, v| (v[0] - v[1]).abs()).max((x0 - y0).abs());
    let d0 = (x0 - y0).abs();
    let bound = if m_g == 0.0 { d0 * (k * t_end).exp() } else { (d0 + m_g / k) * (k * t_end).exp() - m_g / k };
    Ok(CheckReport::new("gronwall", &[("x0", x0), ("y0", y0), ("T", t_end), ("k", k), ("m_g", m_g)], measured, bound))
}

/// Fast system `y' = g(x, y)(f(x) − y)/ε` with `g ≥ g_min`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FastSystem {
    pub eps: f64,
    pub g_min: f64,
    /// Use `g = g_min(1 + ½ sin²(x + y))` instead of the constant `g_min`.
    pub modulated: bool,
}

impl FastSystem {
    fn g(&self, x: f64, y: f64) -> f64 {
        if self.modulated {
            self.g_min * (1.0 + 0.5 * (x + y).sin().powi(2))
        } else {
            self.g_min
        }
    }
}

/// First time `|y − f(x)| ≤ δ`, checked against `C ε ln(1/δ)` with `C = 2/g_min`,
/// then `|y − f(x)| ≤ 2δ` up to `T`.
pub fn halo_entry_check(
    sys: FastSystem,
    f: &PiecewiseFunction,
    x0: f64,
    y0: f64,
    delta: f64,
    t_end: f64,
) -> Result<CheckReport, ode::OdeError> {
    let mut steps: Vec<Step<2>> = Vec::new();
    let stops = f.breaks_in(x0, x0 + t_end).iter().map(|b| b - x0).collect::<Vec<_>>();
    ode::solve(
        |_, v: &[f64; 2], anchor| [1.0, sys.g(v[0], v[1]) * (f.value_anchored(v[0], x0 + anchor) - v[1]) / sys.eps],
        0.0,
        [x0, y0],
        t_end,
        &stops,
        &tight(),
        |s| steps.push(s.clone()),
    )?;
    let gap = |v: &[f64; 2]| (v[1] - f.value(v[0])).abs() - delta;
    let mut t_star = f64::INFINITY;
    if gap(&[x0, y0]) <= 0.0 {
        t_star = 0.0;
    } else {
        for s in &steps {
            if gap(&s.y1) <= 0.0 {
                let (mut a, mut b) = (0.0, 1.0);
                for _ in 0..60 {
                    let c = 0.5 * (a + b);
                    if gap(&s.dense(c)) <= 0.0 {
                        b = c;
                    } else {
                        a = c;
                    }
                }
                t_star = s.t + b * s.h;
                break;
            }
        }
    }
    let bound = 2.0 / sys.g_min * sys.eps * (1.0 / delta).ln();
    let params = [("eps", sys.eps), ("g_min", sys.g_min), ("x0", x0), ("y0", y0), ("delta", delta), ("T", t_end)];
    let after = sup_over_steps(&steps, |t, v| if t >= t_star { (v[1] - f.value(v[0])).abs() } else { 0.0 });
    Ok(CheckReport::new("halo_entry", &params, t_star, bound).with_sub(vec![
        CheckReport::new("halo_entry.x_advance", &params, t_star, bound),
        CheckReport::new("halo_entry.stays", &params, after, 2.0 * delta),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SemiCase {
    Attractive,
    Crossing,
}

/// The lens-chart field against `ż = z f(x)`.
///
/// Attractive (`f > 0`): the time to reach `1 − κ` exceeds the comparison time
/// by at most `C ε`, and `|z − 1| ≤ κ` afterwards. Crossing (`f < 0`): the
/// time spent in `|z − 1| ≤ κ` is at most `2κ / min|z f| + C ε`.
pub fn semi_slow_fast_check(
    case: SemiCase,
    f: &PiecewiseFunction,
    p: &SmParams,
    z0: f64,
    kappa: f64,
    c: f64,
    t_end: f64,
) -> Result<CheckReport, SimError> {
    let eps = p.eps;
    let opts = SimOptions { kappa: Some(kappa), h_max: 0.002, ..SimOptions::default() };
    let y0 = Initial::Log { sign: 1.0, ln_abs: z0.ln() / eps };
    let tr = sim::integrate(p, f, 0.0, y0, t_end, &opts)?;
    let params = [("eps", eps), ("rho", p.rho()), ("z0", z0), ("kappa", kappa), ("C", c), ("T", t_end)];
    let s = &tr.samples;
    match case {
        SemiCase::Attractive => {
            let level = 1.0 - kappa;
            let t_hit = if s[0].z >= level {
                0.0
            } else {
                let j = s.iter().position(|q| q.z >= level).unwrap_or(s.len() - 1);
                let (a, b) = (&s[j - 1], &s[j]);
                a.t + (level.ln() - a.z.ln()) / (b.z.ln() - a.z.ln()) * (b.t - a.t)
            };
            // comparison: ln z grows by ∫f
            let want = (level / z0).ln().max(0.0);
            let t_cmp = match f.first_level_crossing(0.0, &[want], t_end) {
                Ok(Some((x, _))) => x,
                _ if want == 0.0 => 0.0,
                _ => f64::INFINITY,
            };
            let lag = t_hit - t_cmp;
            let stray = s.iter().filter(|q| q.t >= t_hit).map(|q| (q.z - 1.0).abs()).fold(0.0, f64::max);
            Ok(CheckReport::new("semi_slow_fast.attractive", &params, lag.abs(), c * eps).with_sub(vec![
                CheckReport::new("semi_slow_fast.attractive.hit_time", &params, t_hit, t_cmp + c * eps),
                CheckReport::new("semi_slow_fast.attractive.stays", &params, stray, kappa),
            ]))
        }
        SemiCase::Crossing => {
            let mut inside = 0.0;
            let mut min_zf = f64::INFINITY;
            for w in s.windows(2) {
                let mid = 0.5 * (w[0].z + w[1].z);
                if (mid - 1.0).abs() <= kappa {
                    inside += w[1].t - w[0].t;
                }
            }
            for i in 0..=200 {
                let z = 1.0 - kappa + 2.0 * kappa * i as f64 / 200.0;
                for q in s.iter().step_by(16) {
                    min_zf = min_zf.min((z * f.value(q.x)).abs());
                }
            }
            let bound = 2.0 * kappa / min_zf + c * eps;
            Ok(CheckReport::new("semi_slow_fast.crossing", &params, inside, bound))
        }
    }
}

/// The lens-chart orbit after a sign change stays between the orbits of
/// `(1 ± α) z f(x)` launched where the power term drops below `α|f|/2`,
/// while `e^ρ ≤ z`. The measured quantity is the largest excursion outside
/// the corridor, in `ln z`.
pub fn corridor_check(
    f: &PiecewiseFunction,
    p: &SmParams,
    alpha: f64,
    x0: f64,
    z0: f64,
    t_end: f64,
    bound: f64,
) -> Result<CheckReport, SimError> {
    let eps = p.eps;
    let rho = p.rho();
    let opts = SimOptions { h_max: 0.002, ..SimOptions::default() };
    let tr = sim::integrate(p, f, x0, Initial::Log { sign: 1.0, ln_abs: z0.ln() / eps }, t_end, &opts)?;
    let params = [("eps", eps), ("rho", rho), ("alpha", alpha), ("x0", x0), ("z0", z0)];
    let s = &tr.samples;
    let launch = s.iter().position(|q| {
        let fx = f.value(q.x);
        fx < 0.0 && q.z > 0.0 && q.z.ln() / eps < (0.5 * alpha * fx.abs()).ln()
    });
    let Some(j) = launch else {
        return Ok(CheckReport::new("corridor", &params, f64::INFINITY, bound));
    };
    let (xs, lzs) = (s[j].x, s[j].z.ln());
    let mut violation: f64 = 0.0;
    let mut reached_floor = false;
    for q in &s[j..] {
        if q.z <= 0.0 || q.z.ln() < rho {
            reached_floor = true;
            break;
        }
        let phi = f.integrate(xs, q.x);
        let (a, b) = (lzs + (1.0 + alpha) * phi, lzs + (1.0 - alpha) * phi);
        let (lo, hi) = (a.min(b), a.max(b));
        let lz = q.z.ln();
        violation = violation.max(lo - lz).max(lz - hi);
    }
    let exit = CheckReport::new("corridor.reaches_exit_face", &params, if reached_floor { 0.0 } else { 1.0 }, 0.0);
    Ok(CheckReport::new("corridor", &params, violation, bound).with_sub(vec![exit]))
}

/// The default suite at one `ε`, in a fixed order.
pub fn default_suite(eps: f64) -> Vec<CheckReport> {
    type Job = Box<dyn Fn(f64) -> CheckReport + Send + Sync>;
    let fail = |name: &str, e: String| {
        let mut r = CheckReport::new(name, &[], f64::INFINITY, 0.0);
        r.name = format!("{name} ({e})");
        r
    };
    let jobs: Vec<Job> = vec![
        Box::new(move |_| {
            gronwall_check(|_, _| 0.0, |_, _| 0.0, 0.0, 1.0, 1.0, 5.0, 1.0).unwrap_or_else(|e| fail("gronwall", e.to_string()))
        }),
        Box::new(move |_| {
            gronwall_check(|_, x| -x, |_, _| 1e-6, 1e-6, 1.0, 1.0, 5.0, 1.0).unwrap_or_else(|e| fail("gronwall", e.to_string()))
        }),
        Box::new(move |_| {
            gronwall_check(|_, x| x.sin(), |_, x| 1e-8 * x.cos(), 1e-8, 0.5, 0.5, 10.0, 1.0)
                .unwrap_or_else(|e| fail("gronwall", e.to_string()))
        }),
        Box::new(move |eps| {
            let f = PiecewiseFunction::parse("all: x*x").expect("valid");
            let sys = FastSystem { eps, g_min: 1.0, modulated: false };
            halo_entry_check(sys, &f, 0.0, 2.0, 0.01, 0.4).unwrap_or_else(|e| fail("halo_entry", e.to_string()))
        }),
        Box::new(move |eps| {
            let f = PiecewiseFunction::parse("all: x*x").expect("valid");
            let sys = FastSystem { eps, g_min: 0.5, modulated: true };
            halo_entry_check(sys, &f, 0.0, 2.0, 0.01, 0.4).unwrap_or_else(|e| fail("halo_entry", e.to_string()))
        }),
        Box::new(move |eps| {
            let f = PiecewiseFunction::constant(1.0);
            semi_slow_fast_check(SemiCase::Attractive, &f, &SmParams::with_rho(eps, -1.2), 0.5, 0.1, 1.0, 1.5)
                .unwrap_or_else(|e| fail("semi_slow_fast.attractive", e.to_string()))
        }),
        Box::new(move |eps| {
            let f = PiecewiseFunction::constant(1.0);
            semi_slow_fast_check(SemiCase::Attractive, &f, &SmParams::with_rho(eps, -1.2), 1.0, 0.1, 1.0, 1.5)
                .unwrap_or_else(|e| fail("semi_slow_fast.attractive", e.to_string()))
        }),
        Box::new(move |eps| {
            let f = PiecewiseFunction::constant(-1.0);
            semi_slow_fast_check(SemiCase::Crossing, &f, &SmParams::with_rho(eps, -0.4), 1.05, 0.1, 1.0, 0.6)
                .unwrap_or_else(|e| fail("semi_slow_fast.crossing", e.to_string()))
        }),
    ];
    let mut out = par::map(&jobs, |job| job(eps));
    let corridor_cases: Vec<(&str, f64, f64)> =
        vec![("x<0: 1; else: -1", 0.05, -0.2), ("x<0: 1; else: -1", 0.1, -0.2), ("x<0: 1; else: -1", 0.2, -0.2), ("all: -x", 0.1, -1.0)];
    out.extend(par::map(&corridor_cases, |&(spec, alpha, x0)| {
        let f = PiecewiseFunction::parse(spec).expect("valid");
        corridor_check(&f, &SmParams::with_rho(eps, -0.4), alpha, x0, 1.0, 2.0, 1e-3)
            .unwrap_or_else(|e| fail("corridor", e.to_string()))
    }));
    out
}
