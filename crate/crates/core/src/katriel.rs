//! Two coupled sink patches in a periodic environment:
//! `x_i' = r_i(νt) x_i + μ (x_j − x_i)`.
//!
//! With `ε = ν`, `m = 2μ` and `f = r₁ − r₂` the log-ratio of the patches,
//! mapped through `W = 2μ sinh V`, follows the `S_m` system. The growth rate
//! of `x₁x₂` is
//! `Δ = (1/2π)∫ r₁ + r₂ + √(m² + y²) − m` along the periodic orbit `y`.

use serde::Serialize;
use thiserror::Error;

use crate::ctraj::{exit_point, CtrajError, ExitLevel};
use crate::ode::{self, OdeError, OdeOptions};
use crate::par;
use crate::piecewise::{PiecewiseError, PiecewiseFunction};
use crate::sim::{self, Initial, Sample, SimError, SimOptions, SmParams};

pub const PERIOD: f64 = 2.0 * std::f64::consts::PI;

/// Environment difference of the worked example: `cos x` then `1 + 1.5 sin x`.
pub const EXAMPLE_D: &str = "periodic=2*pi; x<pi: cos(x); else: 1+1.5*sin(x)";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KatrielError {
    #[error("r1 and r2 must be 2π-periodic")]
    NotPeriodic,
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("periodic orbit needs m > 0")]
    ZeroCoupling,
    #[error("period map is not bracketed on [{lo}, {hi}]: displacements {d_lo:e}, {d_hi:e}")]
    NotBracketed { lo: f64, hi: f64, d_lo: f64, d_hi: f64 },
    #[error("fixed point iteration did not converge (|D| = {0:e})")]
    NotConverged(f64),
    #[error("no sign change of Δ on the scan (Δ at ends: {lo:e}, {hi:e})")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error(transparent)]
    Piecewise(#[from] PiecewiseError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Ctraj(#[from] CtrajError),
}

#[derive(Debug, Clone)]
pub struct TwoPatchModel {
    pub r1: PiecewiseFunction,
    pub r2: PiecewiseFunction,
    pub nu: f64,
    pub mu: f64,
}

impl TwoPatchModel {
    pub fn new(r1: PiecewiseFunction, r2: PiecewiseFunction, nu: f64, mu: f64) -> Result<Self, KatrielError> {
        let periodic = |r: &PiecewiseFunction| matches!(r.period(), Some(p) if (p - PERIOD).abs() < 1e-12);
        if !periodic(&r1) || !periodic(&r2) {
            return Err(KatrielError::NotPeriodic);
        }
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(KatrielError::InvalidParam(format!("nu must be positive, got {nu}")));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(KatrielError::InvalidParam(format!("mu must be non-negative, got {mu}")));
        }
        Ok(TwoPatchModel { r1, r2, nu, mu })
    }

    /// `r₁ = s + d/2`, `r₂ = s − d/2` for a common part `s` and difference `d`.
    pub fn from_mean_and_difference(s: f64, d: &PiecewiseFunction, nu: f64, mu: f64) -> Result<Self, KatrielError> {
        let half = d.scale(0.5);
        TwoPatchModel::new(half.offset(s), half.scale(-1.0).offset(s), nu, mu)
    }

    /// `s ≡ −0.1` with the example difference.
    pub fn example(nu: f64, mu: f64) -> Self {
        let d = PiecewiseFunction::parse(EXAMPLE_D).expect("built-in model parses");
        TwoPatchModel::from_mean_and_difference(-0.1, &d, nu, mu).expect("built-in model is valid")
    }

    pub fn with_mu(&self, mu: f64) -> Self {
        TwoPatchModel { mu, ..self.clone() }
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        TwoPatchModel { nu, ..self.clone() }
    }

    /// Period means of `r₁` and `r₂`.
    pub fn means(&self) -> (f64, f64) {
        (self.r1.integrate(0.0, PERIOD) / PERIOD, self.r2.integrate(0.0, PERIOD) / PERIOD)
    }

    /// Both patches are sinks and `χ > 0`.
    pub fn check_hypotheses(&self) -> Result<(), KatrielError> {
        let (a, b) = self.means();
        if !(a < 0.0 && b < 0.0) {
            return Err(KatrielError::Hypothesis(format!("patch means must be negative, got {a}, {b}")));
        }
        let c = chi(self)?;
        if !(c > 0.0) {
            return Err(KatrielError::Hypothesis(format!("chi must be positive, got {c}")));
        }
        Ok(())
    }
}

/// `(ε = ν, m = 2μ)` and `f = r₁ − r₂`.
pub fn reduce(model: &TwoPatchModel) -> Result<(SmParams, PiecewiseFunction), KatrielError> {
    let f = model.r1.try_sub(&model.r2)?;
    Ok((SmParams::with_m(model.nu, 2.0 * model.mu), f))
}

/// `χ = (1/4π)∫ r₁ + r₂ + |r₁ − r₂|`.
pub fn chi(model: &TwoPatchModel) -> Result<f64, KatrielError> {
    let sum = model.r1.integrate(0.0, PERIOD) + model.r2.integrate(0.0, PERIOD);
    let d = model.r1.try_sub(&model.r2)?;
    Ok((sum + d.integrate_abs(0.0, PERIOD)?) / (2.0 * PERIOD))
}

#[derive(Debug, Clone, Serialize)]
pub struct OrbitOptions {
    pub sim: SimOptions,
    /// Fixed point tolerance on `q = asinh(y/m)`, relative to `max(1, |q|)`.
    pub q_tol: f64,
    pub max_iter: usize,
    /// Sample spacing of the reported period.
    pub stride: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        OrbitOptions {
            sim: SimOptions { record: false, ..SimOptions::default() },
            q_tol: 1e-11,
            max_iter: 100,
            stride: PERIOD / 16384.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicOrbit {
    /// `asinh(y₀/m)` at `x = 0`.
    pub q0: f64,
    /// `y₀`, possibly underflowed to 0.
    pub y0: f64,
    pub samples: Vec<Sample>,
    /// `|y(2π; y₀) − y₀|`.
    pub residual: f64,
    /// Period-map derivative `∂y(2π)/∂y₀` from the variational equation.
    pub derivative: f64,
    pub iterations: usize,
}

/// `asinh(y/m)` from `y = sign·e^{ln_abs}`.
fn q_of(sign: f64, ln_abs: f64, ln_m: f64) -> f64 {
    if sign == 0.0 {
        return 0.0;
    }
    let l = ln_abs - ln_m;
    if l > 20.0 {
        sign * (l + std::f64::consts::LN_2 + 0.25 * (-2.0 * l).exp())
    } else {
        sign * l.exp().asinh()
    }
}

/// Initial ordinate `m sinh q`.
fn initial_of(q: f64, ln_m: f64) -> Initial {
    let a = q.abs();
    if a < 20.0 {
        Initial::MUnits(q.sinh())
    } else {
        Initial::Log { sign: q.signum(), ln_abs: ln_m + a - std::f64::consts::LN_2 + (-(-2.0 * a).exp()).ln_1p() }
    }
}

fn period_map(p: &SmParams, f: &PiecewiseFunction, q0: f64, opts: &SimOptions) -> Result<(f64, f64), SimError> {
    let ln_m = p.ln_m();
    let tr = sim::integrate(p, f, 0.0, initial_of(q0, ln_m), PERIOD, opts)?;
    Ok((q_of(tr.final_sign(), tr.final_ln_abs(), ln_m), tr.ln_sensitivity))
}

/// Fixed point of the period map at `x = 0`, by Illinois iteration on
/// `q ↦ q(2π; q) − q` over the invariant box `|y| ≤ max|f| + 1`.
pub fn periodic_orbit(p: &SmParams, f: &PiecewiseFunction, opts: &OrbitOptions) -> Result<PeriodicOrbit, KatrielError> {
    p.validate()?;
    if !matches!(f.period(), Some(per) if (per - PERIOD).abs() < 1e-12) {
        return Err(KatrielError::NotPeriodic);
    }
    let ln_m = p.ln_m();
    if !ln_m.is_finite() {
        return Err(KatrielError::ZeroCoupling);
    }
    let big = f.bounds(0.0, PERIOD)?.0 + 1.0;
    let q_big = q_of(1.0, big.ln(), ln_m);
    let disp = |q: f64| -> Result<f64, KatrielError> { Ok(period_map(p, f, q, &opts.sim)?.0 - q) };
    let (mut a, mut b) = (-q_big, q_big);
    let (mut da, mut db) = (disp(a)?, disp(b)?);
    if !(da > 0.0 && db < 0.0) {
        return Err(KatrielError::NotBracketed { lo: a, hi: b, d_lo: da, d_hi: db });
    }
    let mut side = 0i8;
    let mut iterations = 0;
    let q = loop {
        iterations += 1;
        if iterations > opts.max_iter {
            return Err(KatrielError::NotConverged(da.abs().min(db.abs())));
        }
        let mut q = (a * db - b * da) / (db - da);
        if !(q > a && q < b) {
            q = 0.5 * (a + b);
        }
        let dq = disp(q)?;
        let tol = opts.q_tol * q.abs().max(1.0);
        if dq.abs() <= tol || (b - a) <= tol {
            break q;
        }
        if dq > 0.0 {
            a = q;
            da = dq;
            if side == 1 {
                db *= 0.5;
            }
            side = 1;
        } else {
            b = q;
            db = dq;
            if side == -1 {
                da *= 0.5;
            }
            side = -1;
        }
    };
    let run = SimOptions { record: true, stride: Some(opts.stride), ..opts.sim.clone() };
    let tr = sim::integrate(p, f, 0.0, initial_of(q, ln_m), PERIOD, &run)?;
    let y0 = p.m() * q.sinh();
    let y1 = tr.final_sign() * tr.final_ln_abs().exp();
    Ok(PeriodicOrbit {
        q0: q,
        y0,
        residual: (y1 - y0).abs(),
        derivative: tr.ln_sensitivity.exp(),
        samples: tr.samples,
        iterations,
    })
}

/// `√(m² + y²) − m` without cancellation.
fn excess(m: f64, y: f64) -> f64 {
    y * y / (m.hypot(y) + m)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaEval {
    pub delta: f64,
    /// Orbit residual; 0 for the decoupled case.
    pub residual: f64,
    pub derivative: f64,
    /// False when `μ = 0`, where the periodic orbit is not unique.
    pub converged: bool,
}

/// `Δ` with the orbit diagnostics.
pub fn delta_eval(model: &TwoPatchModel, opts: &OrbitOptions) -> Result<DeltaEval, KatrielError> {
    let (a, b) = model.means();
    if model.mu == 0.0 {
        return Ok(DeltaEval { delta: a + b, residual: 0.0, derivative: f64::NAN, converged: false });
    }
    let (p, f) = reduce(model)?;
    let orbit = periodic_orbit(&p, &f, opts)?;
    let m = p.m();
    let s = &orbit.samples;
    let mut integral = 0.0;
    for w in s.windows(2) {
        let g0 = excess(m, w[0].y.unwrap_or(0.0));
        let g1 = excess(m, w[1].y.unwrap_or(0.0));
        integral += 0.5 * (g0 + g1) * (w[1].x - w[0].x);
    }
    Ok(DeltaEval { delta: a + b + integral / PERIOD, residual: orbit.residual, derivative: orbit.derivative, converged: true })
}

pub fn delta(model: &TwoPatchModel) -> Result<f64, KatrielError> {
    Ok(delta_eval(model, &OrbitOptions::default())?.delta)
}

/// Growth rate of `ln(x₁x₂)` by direct integration of `ξ_i = ln x_i` in
/// slow time `s = νt`, over `periods` periods after a burn-in of `burn`.
pub fn delta_direct(model: &TwoPatchModel, periods: usize, burn: usize) -> Result<f64, KatrielError> {
    if periods == 0 {
        return Err(KatrielError::InvalidParam("periods must be positive".into()));
    }
    let nu = model.nu;
    let ln_mu = model.mu.ln();
    let (r1, r2) = (&model.r1, &model.r2);
    let total = PERIOD * (burn + periods) as f64;
    let mut stops: Vec<f64> = r1.breaks_in(0.0, total);
    stops.extend(r2.breaks_in(0.0, total));
    stops.push(PERIOD * burn as f64);
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    let rhs = |s: f64, xi: &[f64; 2], anchor: f64| {
        let c12 = (ln_mu + xi[1] - xi[0]).min(sim::EXP_CLAMP).exp();
        let c21 = (ln_mu + xi[0] - xi[1]).min(sim::EXP_CLAMP).exp();
        [
            (r1.value_anchored(s, anchor) + c12 - model.mu) / nu,
            (r2.value_anchored(s, anchor) + c21 - model.mu) / nu,
        ]
    };
    let opts = OdeOptions { rtol: 1e-10, atol: 1e-10, h_max: 0.1, ..OdeOptions::default() };
    let t_burn = PERIOD * burn as f64;
    let mid = ode::solve(rhs, 0.0, [0.0, 0.0], t_burn, &stops, &opts, |_| ())?;
    let end = ode::solve(rhs, t_burn, mid, total, &stops, &opts, |_| ())?;
    let du = (end[0] + end[1]) - (mid[0] + mid[1]);
    Ok(nu * du / (total - t_burn))
}

#[derive(Debug, Clone, Serialize)]
pub struct ThresholdOptions {
    pub per_decade: usize,
    /// Lower end of the scan in `ln μ`; defaults to the smallest normal double.
    pub ln_mu_lo: f64,
    pub ln_mu_hi: f64,
    /// Bisection stops when the bracket is within `rel_tol·|ln μ|`.
    pub rel_tol: f64,
    pub orbit: OrbitOptions,
}

impl Default for ThresholdOptions {
    fn default() -> Self {
        ThresholdOptions {
            per_decade: 16,
            ln_mu_lo: f64::MIN_POSITIVE.ln(),
            ln_mu_hi: 0.0,
            rel_tol: 1e-3,
            orbit: OrbitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Threshold {
    pub nu: f64,
    pub mu_star: f64,
    pub ln_mu_star: f64,
    /// `(ln μ, Δ)` on the pre-scan grid.
    pub scan: Vec<(f64, f64)>,
    /// Sign changes of `Δ` along the scan; more than one means Δ is not monotone.
    pub sign_changes: usize,
}

/// `μ*(ν) = inf{μ : Δ(ν, μ) > 0}` (the `μ` of `model` is ignored).
pub fn mu_star(model: &TwoPatchModel, opts: &ThresholdOptions) -> Result<Threshold, KatrielError> {
    model.check_hypotheses()?;
    let (lo, hi) = (opts.ln_mu_lo, opts.ln_mu_hi);
    if !(lo < hi) || opts.per_decade == 0 {
        return Err(KatrielError::InvalidParam(format!("bad scan range [{lo}, {hi}]")));
    }
    let step = std::f64::consts::LN_10 / opts.per_decade as f64;
    let n = ((hi - lo) / step).ceil() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| if k == n { hi } else { lo + k as f64 * step }).collect();
    let eval = |l: f64| delta_eval(&model.with_mu(l.exp()), &opts.orbit).map(|d| d.delta);
    let values: Vec<f64> = par::map(&grid, |&l| eval(l)).into_iter().collect::<Result<_, _>>()?;
    let scan: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();
    let positive = |d: f64| d > 0.0;
    let sign_changes = values.windows(2).filter(|w| positive(w[0]) != positive(w[1])).count();
    let first = values.windows(2).position(|w| !positive(w[0]) && positive(w[1]));
    let k = match (positive(values[0]), first) {
        (false, Some(k)) => k,
        _ => return Err(KatrielError::NoSignChange { lo: values[0], hi: values[n] }),
    };
    let (mut a, mut b) = (grid[k], grid[k + 1]);
    while b - a > opts.rel_tol * b.abs().max(a.abs()).max(1e-300) {
        let c = 0.5 * (a + b);
        if positive(eval(c)?) {
            b = c;
        } else {
            a = c;
        }
    }
    let ln_mu_star = 0.5 * (a + b);
    Ok(Threshold { nu: model.nu, mu_star: ln_mu_star.exp(), ln_mu_star, scan, sign_changes })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
}

/// Least squares of `ln μ*` against `1/ν`.
pub fn decay_fit(nus: &[f64], mus: &[f64]) -> Result<DecayFit, KatrielError> {
    if nus.len() != mus.len() || nus.len() < 3 {
        return Err(KatrielError::DegenerateFit("need at least 3 paired points".into()));
    }
    if mus.iter().any(|&m| !(m > 0.0)) || nus.iter().any(|&n| !(n > 0.0)) {
        return Err(KatrielError::DegenerateFit("ν and μ* must be positive".into()));
    }
    let xs: Vec<f64> = nus.iter().map(|n| 1.0 / n).collect();
    let ys: Vec<f64> = mus.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 1e-300) {
        return Err(KatrielError::DegenerateFit("all ν equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).abs()).fold(0.0, f64::max);
    Ok(DecayFit { slope, intercept, max_residual })
}

/// Every exit of one period comes before the next sign change:
/// `S_ρ(θᵢ) < θᵢ₊₁` (cyclically).
pub fn exits_precede_next_change(f: &PiecewiseFunction, rho: f64) -> Result<bool, KatrielError> {
    let thetas: Vec<f64> = f.sign_changes(0.0, PERIOD)?.iter().map(|c| c.x).collect();
    if thetas.is_empty() {
        return Ok(true);
    }
    for (i, &t) in thetas.iter().enumerate() {
        let next = if i + 1 < thetas.len() { thetas[i + 1] } else { thetas[0] + PERIOD };
        let e = exit_point(f, rho, t, t + 2.0 * PERIOD)?;
        if e.level == ExitLevel::Unresolved || !(e.s < next) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Most negative `ρ` (to `tol`) at which exits still precede the next sign change,
/// searched on `[rho_min, 0)`.
pub fn rho_star(f: &PiecewiseFunction, rho_min: f64, tol: f64) -> Result<f64, KatrielError> {
    let ok = |r: f64| exits_precede_next_change(f, r);
    let mut good = -tol.min(1e-6);
    if !ok(good)? {
        return Err(KatrielError::Hypothesis("exits overrun the next sign change even as ρ → 0".into()));
    }
    if ok(rho_min)? {
        return Ok(rho_min);
    }
    // scan towards rho_min for the first failure, then bisect
    let n = 64;
    let mut bad = rho_min;
    for k in 1..=n {
        let r = good + (rho_min - good) * k as f64 / n as f64;
        if ok(r)? {
            good = r;
        } else {
            bad = r;
            break;
        }
    }
    while good - bad > tol {
        let c = 0.5 * (good + bad);
        if ok(c)? {
            good = c;
        } else {
            bad = c;
        }
    }
    Ok(good)
}

/// Max pointwise gap between `V` integrated directly from
/// `V' = (r₁ − r₂ − 2μ sinh V)/ν` and `asinh(W/2μ)` of the periodic orbit.
pub fn reduction_identity_residual(model: &TwoPatchModel, orbit_opts: &OrbitOptions) -> Result<f64, KatrielError> {
    if !(model.mu > 0.0) {
        return Err(KatrielError::ZeroCoupling);
    }
    let (p, f) = reduce(model)?;
    let orbit = periodic_orbit(&p, &f, orbit_opts)?;
    let two_mu = 2.0 * model.mu;
    let nu = model.nu;
    let v0 = orbit.q0;
    let times: Vec<f64> = orbit.samples.iter().map(|s| s.x).collect();
    let mut stops = f.breaks_in(0.0, PERIOD);
    stops.extend(times.iter().copied().filter(|&t| t > 0.0 && t < PERIOD));
    stops.sort_by(f64::total_cmp);
    stops.dedup();
    let mut vs: Vec<(f64, f64)> = vec![(0.0, v0)];
    let opts = OdeOptions { rtol: orbit_opts.sim.rtol, atol: orbit_opts.sim.atol, h_max: 0.02, ..OdeOptions::default() };
    ode::solve(
        |s, v: &[f64; 1], anchor| [(f.value_anchored(s, anchor) - two_mu * v[0].sinh()) / nu],
        0.0,
        [v0],
        PERIOD,
        &stops,
        &opts,
        |st| vs.push((st.t + st.h, st.y1[0])),
    )?;
    let mut worst: f64 = 0.0;
    let mut j = 0;
    for s in &orbit.samples {
        while j < vs.len() && vs[j].0 < s.x - 1e-12 {
            j += 1;
        }
        let Some(&(t, v)) = vs.get(j) else { break };
        if (t - s.x).abs() > 1e-9 {
            continue;
        }
        let Some(w) = s.y else { continue };
        worst = worst.max((v - (w / two_mu).asinh()).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
