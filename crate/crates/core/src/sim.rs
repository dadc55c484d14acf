//! Integration of `x' = 1, y' = (1/ε)·√(m²+y²)·(f(x) − y)`.
//!
//! Near the axis `y` is exponentially small and not representable, so the
//! state moves between three charts:
//!
//! * raw `y` while `|y| ≥ y_switch`;
//! * log chart `(s, w = ln|y|)` below that;
//! * axis chart `u = y/m` while `|y| < K·m`, where the trajectory can cross 0.
//!
//! The log and axis charts are both reported as the lens chart
//! `z = sgn(y)|y|^ε`. Handoffs are exact changes of variables.

use serde::Serialize;
use thiserror::Error;

use crate::ode::{dopri_step, Controller, Step};
use crate::piecewise::{PiecewiseFunction, Span};

/// Exponent saturation, in natural-log units.
pub const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step size collapsed to {h:e} at t = {t} (x = {x})")]
    StepCollapse { t: f64, x: f64, h: f64 },
    #[error("sample budget of {0} exhausted")]
    SampleBudget(usize),
    #[error("non-finite state at t = {t} (x = {x})")]
    NonFinite { t: f64, x: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MSpec {
    /// `m = exp(ρ/ε)`, kept in log form.
    Rho(f64),
    /// Explicit `m ≥ 0`.
    M(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmParams {
    pub eps: f64,
    pub m: MSpec,
}

impl SmParams {
    pub fn with_rho(eps: f64, rho: f64) -> Self {
        SmParams { eps, m: MSpec::Rho(rho) }
    }

    pub fn with_m(eps: f64, m: f64) -> Self {
        SmParams { eps, m: MSpec::M(m) }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(SimError::InvalidParams(format!("eps must be positive, got {}", self.eps)));
        }
        match self.m {
            MSpec::Rho(r) if !(r < 0.0 && r.is_finite()) => {
                Err(SimError::InvalidParams(format!("rho must be negative, got {r}")))
            }
            MSpec::M(m) if !(m >= 0.0 && m.is_finite()) => {
                Err(SimError::InvalidParams(format!("m must be non-negative, got {m}")))
            }
            _ => Ok(()),
        }
    }

    /// `ln m`; `-inf` when `m = 0`.
    pub fn ln_m(&self) -> f64 {
        match self.m {
            MSpec::Rho(r) => r / self.eps,
            MSpec::M(m) => m.ln(),
        }
    }

    /// `m`, possibly underflowed to 0.
    pub fn m(&self) -> f64 {
        match self.m {
            MSpec::Rho(r) => (r / self.eps).exp(),
            MSpec::M(m) => m,
        }
    }

    /// `ρ = ε ln m`; `-inf` when `m = 0`.
    pub fn rho(&self) -> f64 {
        match self.m {
            MSpec::Rho(r) => r,
            MSpec::M(m) => self.eps * m.ln(),
        }
    }
}

/// `sgn(y)|y|^ε`.
pub fn lens(y: f64, eps: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    y.signum() * (eps * y.abs().ln()).exp()
}

/// Lens coordinate of `sign · exp(ln_abs)`.
pub fn lens_from_ln(sign: f64, ln_abs: f64, eps: f64) -> f64 {
    if sign == 0.0 || ln_abs == f64::NEG_INFINITY {
        return 0.0;
    }
    sign * (eps * ln_abs).exp()
}

/// `sgn(z)|z|^{1/ε}`; may underflow to a signed zero.
pub fn unlens(z: f64, eps: f64) -> f64 {
    unlens_checked(z, eps).0
}

/// As [`unlens`], also reporting whether a nonzero `z` underflowed.
pub fn unlens_checked(z: f64, eps: f64) -> (f64, bool) {
    if z == 0.0 {
        return (0.0, false);
    }
    let v = z.signum() * (z.abs().ln() / eps).exp();
    (v, v == 0.0)
}

#[inline]
fn clamped_exp(a: f64) -> f64 {
    a.clamp(-EXP_CLAMP - 50.0, EXP_CLAMP).exp()
}

/// `dy/dt` in the raw chart.
pub fn rhs_raw(p: &SmParams, f: &PiecewiseFunction, x: f64, y: f64) -> f64 {
    p.m().hypot(y) * (f.value(x) - y) / p.eps
}

/// `dz/dt` under the lens, evaluated in log form with saturation at `z = 0`.
pub fn rhs_lens(p: &SmParams, f: &PiecewiseFunction, x: f64, z: f64) -> f64 {
    if z == 0.0 {
        return 0.0;
    }
    let lz = z.abs().ln();
    let rho = p.rho();
    let sq = if rho == f64::NEG_INFINITY {
        1.0
    } else {
        let two_l = (2.0 * (rho - lz) / p.eps).min(EXP_CLAMP);
        // √(1+e^{2L}) = exp(½·log1p(e^{2L}))
        let lp = if two_l > 36.0 { two_l } else { two_l.exp().ln_1p() };
        clamped_exp(0.5 * lp)
    };
    let zp = z.signum() * clamped_exp(lz / p.eps);
    z.abs() * sq * (f.value(x) - zp)
}

/// How the initial ordinate is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    Y(f64),
    /// `y = sign · exp(ln_abs)`.
    Log { sign: f64, ln_abs: f64 },
    /// `y = u · m`.
    MUnits(f64),
}

impl From<f64> for Initial {
    fn from(y: f64) -> Self {
        Initial::Y(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    Raw,
    Lens,
}

impl Chart {
    pub fn as_str(self) -> &'static str {
        match self {
            Chart::Raw => "raw",
            Chart::Lens => "lens",
        }
    }
}

/// Chart-tagged ordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum State {
    Raw(f64),
    Log { sign: f64, w: f64 },
    Axis(f64),
}

impl State {
    fn value(&self) -> f64 {
        match *self {
            State::Raw(y) => y,
            State::Log { w, .. } => w,
            State::Axis(u) => u,
        }
    }

    fn with_value(&self, v: f64) -> State {
        match *self {
            State::Raw(_) => State::Raw(v),
            State::Log { sign, .. } => State::Log { sign, w: v },
            State::Axis(_) => State::Axis(v),
        }
    }

    /// `ln|y|`.
    pub fn ln_abs(&self, ln_m: f64) -> f64 {
        match *self {
            State::Raw(y) => y.abs().ln(),
            State::Log { w, .. } => w,
            State::Axis(u) => {
                if u == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    ln_m + u.abs().ln()
                }
            }
        }
    }

    pub fn sign(&self) -> f64 {
        let s = match *self {
            State::Raw(y) => y,
            State::Log { sign, .. } => sign,
            State::Axis(u) => u,
        };
        if s > 0.0 {
            1.0
        } else if s < 0.0 {
            -1.0
        } else {
            0.0
        }
    }

    /// `y`, or `None` when it underflows.
    pub fn y(&self, ln_m: f64) -> Option<f64> {
        let s = self.sign();
        if s == 0.0 {
            return Some(0.0);
        }
        match *self {
            State::Raw(y) => Some(y),
            _ => {
                let v = s * self.ln_abs(ln_m).exp();
                (v != 0.0).then_some(v)
            }
        }
    }

    pub fn z(&self, ln_m: f64, eps: f64) -> f64 {
        match *self {
            State::Raw(y) => lens(y, eps),
            _ => lens_from_ln(self.sign(), self.ln_abs(ln_m), eps),
        }
    }

    pub fn chart(&self) -> Chart {
        match self {
            State::Raw(_) => Chart::Raw,
            _ => Chart::Lens,
        }
    }

    fn log_jacobian(&self, ln_m: f64) -> f64 {
        match *self {
            State::Raw(_) => 0.0,
            State::Log { w, .. } => -w,
            State::Axis(_) => -ln_m,
        }
    }

    fn same_chart(&self, other: &State) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    ChartSwitch,
    Breakpoint,
    LevelCross,
    SignChange,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::ChartSwitch => "chart-switch",
            EventKind::Breakpoint => "breakpoint",
            EventKind::LevelCross => "level-cross",
            EventKind::SignChange => "sign-change",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: Option<f64>,
    pub z: f64,
    pub chart: Chart,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimOptions {
    pub rtol: f64,
    pub atol: f64,
    pub y_switch: f64,
    /// Axis chart is used while `|y| < axis_factor · m`.
    pub axis_factor: f64,
    /// Exit band `|z| ≥ 1 − κ`; `None` derives κ from `halo_y`.
    pub kappa: Option<f64>,
    /// Default κ is `1 − halo_y^ε`: the band edge sits at `|y| = halo_y`.
    pub halo_y: f64,
    pub h_max: f64,
    pub c_h: f64,
    /// Sample spacing in `t`; `None` samples every accepted step.
    pub stride: Option<f64>,
    pub max_samples: usize,
    /// Keep only the initial and final samples.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            rtol: 1e-9,
            atol: 1e-12,
            y_switch: 0.05,
            axis_factor: 100.0,
            kappa: None,
            halo_y: 0.2,
            h_max: 0.02,
            c_h: 1.0,
            stride: None,
            max_samples: 2_000_000,
            record: true,
        }
    }
}

impl SimOptions {
    pub fn kappa(&self, eps: f64) -> f64 {
        self.kappa.unwrap_or_else(|| 1.0 - self.halo_y.powf(eps))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub params: SmParams,
    pub x0: f64,
    pub initial: Initial,
    pub kappa: f64,
    /// State at the final time.
    pub final_state: State,
    /// `ln |∂y(t_end)/∂y(0)|` from the variational equation.
    pub ln_sensitivity: f64,
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        self.samples.last().map(|s| s.t).unwrap_or(0.0)
    }

    /// Initial ordinate when representable.
    pub fn y0(&self) -> Option<f64> {
        self.samples.first().and_then(|s| s.y)
    }

    pub fn final_ln_abs(&self) -> f64 {
        self.final_state.ln_abs(self.params.ln_m())
    }

    pub fn final_sign(&self) -> f64 {
        self.final_state.sign()
    }
}

struct Ctx<'a> {
    f: &'a PiecewiseFunction,
    eps: f64,
    ln_m: f64,
    m: f64,
    ln_switch: f64,
    ln_axis: f64,
}

impl Ctx<'_> {
    fn preferred(&self, s: &State) -> State {
        let sign = s.sign();
        let la = s.ln_abs(self.ln_m);
        if sign == 0.0 {
            return if self.ln_m.is_finite() { State::Axis(0.0) } else { State::Raw(0.0) };
        }
        if la >= self.ln_switch {
            State::Raw(sign * la.exp())
        } else if self.ln_m.is_finite() && la < self.ln_axis {
            State::Axis(sign * (la - self.ln_m).exp())
        } else {
            State::Log { sign, w: la }
        }
    }

    /// Field and its derivative in the chart of `s`.
    #[inline]
    fn field(&self, span: &Span, x: f64, s: &State, v: f64) -> (f64, f64) {
        let fx = self.f.eval_span(span, x);
        let e = self.eps;
        match *s {
            State::Raw(_) => {
                let y = v;
                let hyp = self.m.hypot(y);
                let dh = if hyp > 0.0 { y / hyp } else { 0.0 };
                (hyp * (fx - y) / e, (dh * (fx - y) - hyp) / e)
            }
            State::Log { sign, .. } => {
                let ew = v.min(EXP_CLAMP).exp();
                let big = if self.ln_m.is_finite() { clamped_exp(2.0 * (self.ln_m - v)) } else { 0.0 };
                let sq = (1.0 + big).sqrt();
                let g = sign * fx - ew;
                (sq * g / e, (-big / sq * g - sq * ew) / e)
            }
            State::Axis(_) => {
                let u = v;
                let q = u.hypot(1.0);
                let g = fx - self.m * u;
                (q * g / e, (u / q * g - q * self.m) / e)
            }
        }
    }
}

fn find_crossing<const N: usize>(step: &Step<N>, g: impl Fn(&[f64; N]) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    let glo = g(&step.y0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let gm = g(&step.dense(mid));
        if (gm > 0.0) == (glo > 0.0) && gm != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    step.t + 0.5 * (lo + hi) * step.h
}

/// Integrates from `(x0, y0)` for a duration `t_end`.
pub fn integrate(
    p: &SmParams,
    f: &PiecewiseFunction,
    x0: f64,
    y0: impl Into<Initial>,
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    p.validate()?;
    if !(t_end > 0.0 && t_end.is_finite()) || !x0.is_finite() {
        return Err(SimError::InvalidParams("t_end must be positive and x0 finite".into()));
    }
    let initial = y0.into();
    let ln_m = p.ln_m();
    let ctx = Ctx {
        f,
        eps: p.eps,
        ln_m,
        m: if ln_m.is_finite() { ln_m.exp() } else { 0.0 },
        ln_switch: opts.y_switch.ln(),
        ln_axis: ln_m + opts.axis_factor.ln(),
    };
    let kappa = opts.kappa(p.eps);
    let levels: Vec<(f64, &str)> = {
        let mut l = vec![((1.0 - kappa).ln(), "1-kappa")];
        if ln_m.is_finite() {
            l.push((p.rho(), "e^rho"));
        }
        l
    };

    let start = match initial {
        Initial::Y(y) => State::Raw(y),
        Initial::Log { sign, ln_abs } => State::Log { sign: sign.signum(), w: ln_abs },
        Initial::MUnits(u) => {
            if ln_m.is_finite() {
                State::Axis(u)
            } else {
                State::Raw(0.0)
            }
        }
    };
    if !start.value().is_finite() && !matches!(start, State::Log { w, .. } if w == f64::NEG_INFINITY) {
        return Err(SimError::InvalidParams("initial ordinate is not finite".into()));
    }
    let mut state = ctx.preferred(&start);
    let j_start = state.log_jacobian(ln_m);

    let x_end = x0 + t_end;
    let spans = f.spans(x0, x_end);
    let mut span_i = 0;
    let mut changes = f
        .sign_changes(x0, x_end)
        .map_err(|e| SimError::InvalidParams(e.to_string()))?
        .into_iter()
        .peekable();

    let sample_of = |t: f64, s: &State| Sample {
        t,
        x: x0 + t,
        y: s.y(ln_m),
        z: s.z(ln_m, p.eps),
        chart: s.chart(),
    };
    let mut samples = vec![sample_of(0.0, &state)];
    let mut events = Vec::new();
    let mut stride_k: u64 = 1;

    let mut t = 0.0;
    let mut ell = 0.0;
    let mut ctrl = Controller::default();
    let mut h = (0.1 * p.eps).min(opts.h_max);
    let mut k1: Option<[f64; 2]> = None;

    while span_i < spans.len() {
        let span = spans[span_i];
        let t_stop = span.hi - x0;
        let frozen = state;
        let rhs = |tt: f64, v: &[f64; 2]| {
            let (fv, dv) = ctx.field(&span, x0 + tt, &frozen, v[0]);
            [fv, dv]
        };
        let v = [state.value(), ell];
        let k = match k1 {
            Some(k) => k,
            None => rhs(t, &v),
        };
        let mut hh = h.min(opts.h_max);
        if let State::Raw(y) = state {
            let fx = f.eval_span(&span, x0 + t);
            let fp = f.derivative_span(&span, x0 + t).abs();
            let scale = 1f64.max(y.abs() * fp + (fx - y).abs()).max(y.abs());
            hh = hh.min(opts.c_h * p.eps / scale);
        }
        let landing = hh >= t_stop - t;
        if landing {
            hh = t_stop - t;
        }
        let step = dopri_step(&mut |tt, vv| rhs(tt, vv), t, &v, &k, hh);
        let atol = if matches!(state, State::Raw(_)) { opts.atol } else { opts.rtol };
        let sc = atol + opts.rtol * v[0].abs().max(step.y1[0].abs());
        let (ok, fac) = ctrl.assess((step.err[0] / sc).abs());
        if !ok {
            h = hh * fac;
            k1 = Some(k);
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(SimError::StepCollapse { t, x: x0 + t, h });
            }
            continue;
        }
        if !step.y1[0].is_finite() && !(matches!(state, State::Log { .. }) && step.y1[0] == f64::NEG_INFINITY) {
            return Err(SimError::NonFinite { t, x: x0 + t });
        }
        let t_new = if landing { t_stop } else { t + hh };

        // events inside the step
        let state_at = |vv: &[f64; 2]| frozen.with_value(vv[0]);
        let mut step_events: Vec<Event> = Vec::new();
        for &(level, name) in &levels {
            let g = |vv: &[f64; 2]| p.eps * state_at(vv).ln_abs(ln_m) - level;
            let (g0, g1) = (g(&step.y0), g(&step.y1));
            if (g0 < 0.0) != (g1 < 0.0) {
                let te = find_crossing(&step, g).min(t_new);
                let dir = if g1 > g0 { "up" } else { "down" };
                step_events.push(Event { t: te, x: x0 + te, kind: EventKind::LevelCross, detail: format!("{name}:{dir}") });
            }
        }
        if !matches!(frozen, State::Log { .. }) {
            let (s0, s1) = (step.y0[0], step.y1[0]);
            if s0 != 0.0 && s1 != 0.0 && (s0 > 0.0) != (s1 > 0.0) {
                let te = find_crossing(&step, |vv| vv[0]).min(t_new);
                let dir = if s1 > 0.0 { "up" } else { "down" };
                step_events.push(Event { t: te, x: x0 + te, kind: EventKind::LevelCross, detail: format!("axis:{dir}") });
            }
        }
        while let Some(c) = changes.peek() {
            if c.x - x0 <= t_new {
                let dir = match c.direction {
                    crate::piecewise::Direction::PlusToMinus => "+-",
                    crate::piecewise::Direction::MinusToPlus => "-+",
                };
                let kind = match c.kind {
                    crate::piecewise::SignChangeKind::Jump => "jump",
                    crate::piecewise::SignChangeKind::SimpleZero => "zero",
                };
                step_events.push(Event { t: c.x - x0, x: c.x, kind: EventKind::SignChange, detail: format!("{kind}:{dir}") });
                changes.next();
            } else {
                break;
            }
        }
        step_events.sort_by(|a, b| a.t.total_cmp(&b.t));
        events.extend(step_events);

        // samples
        let mut new_state = frozen.with_value(step.y1[0]);
        if opts.record {
            match opts.stride {
                Some(stride) => loop {
                    let ts = stride_k as f64 * stride;
                    if ts > t_new + 1e-9 * stride {
                        break;
                    }
                    let ts = ts.min(t_new);
                    let vv = step.dense_at(ts);
                    samples.push(sample_of(ts, &state_at(&vv)));
                    stride_k += 1;
                },
                None => samples.push(sample_of(t_new, &new_state)),
            }
            if samples.len() > opts.max_samples {
                return Err(SimError::SampleBudget(opts.max_samples));
            }
        }

        t = t_new;
        ell = step.y1[1];
        h = hh * fac;
        if landing && fac >= 1.0 {
            h = h.max(hh);
        }
        k1 = Some(step.k7);
        if landing {
            span_i += 1;
            k1 = None;
            if span_i < spans.len() {
                events.push(Event { t, x: x0 + t, kind: EventKind::Breakpoint, detail: String::new() });
            }
        }

        let pref = ctx.preferred(&new_state);
        if !pref.same_chart(&new_state) {
            ell += pref.log_jacobian(ln_m) - new_state.log_jacobian(ln_m);
            let from = chart_name(&new_state);
            let to = chart_name(&pref);
            events.push(Event { t, x: x0 + t, kind: EventKind::ChartSwitch, detail: format!("{from}->{to}") });
            new_state = pref;
            k1 = None;
        }
        state = new_state;
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(SimError::StepCollapse { t, x: x0 + t, h });
        }
    }

    let last = sample_of(t, &state);
    match samples.last() {
        Some(s) if s.t >= t - 1e-12 => {}
        _ => samples.push(last),
    }
    if !opts.record {
        samples = vec![samples[0], last];
    }
    let ln_sensitivity = ell - state.log_jacobian(ln_m) + j_start;
    Ok(Trajectory {
        samples,
        events,
        params: *p,
        x0,
        initial,
        kappa,
        final_state: state,
        ln_sensitivity,
    })
}

fn chart_name(s: &State) -> &'static str {
    match s {
        State::Raw(_) => "raw",
        State::Log { .. } => "log",
        State::Axis(_) => "axis",
    }
}

/// Writes `t,x,y,z,chart`.
pub fn write_trajectory_csv(traj: &Trajectory, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "t,x,y,z,chart")?;
    for s in &traj.samples {
        let y = s.y.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", s.t, s.x, y, s.z, s.chart.as_str())?;
    }
    Ok(())
}

/// Writes `t,x,kind,detail`.
pub fn write_events_csv(traj: &Trajectory, out: &mut impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "t,x,kind,detail")?;
    for e in &traj.events {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.kind.as_str(), e.detail)?;
    }
    Ok(())
}
