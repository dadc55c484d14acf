//! Piecewise-C¹ scalar functions of one variable.
//!
//! Intervals are half-open `[x_n, x_{n+1})`: at a breakpoint the right piece
//! applies. A periodic function stores one period `[0, P)` and reduces every
//! argument modulo `P`.

mod expr;
mod parse;

use std::fmt;

use serde::Serialize;

pub use expr::{Expr, PieceExpr};

use crate::quad;

/// Absolute tolerance on located abscissae.
pub const TOL_ROOT: f64 = 1e-10;
/// Absolute tolerance on integrals.
pub const TOL_QUAD: f64 = 1e-10;
/// Sampling step used to bracket roots inside a piece.
const SAMPLE_STEP: f64 = 5e-3;
/// Sign changes closer than this to the query point are not "after" it.
const NEXT_EXCLUSION: f64 = 1e-8;
/// A level is counted as touched when the primitive comes this close.
const TOUCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("parse error at {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl ParseError {
    pub(crate) fn new(pos: usize, msg: &str) -> Self {
        ParseError { pos, msg: msg.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PiecewiseError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("breakpoints must be strictly increasing (at clause {clause})")]
    NonIncreasing { clause: usize },
    #[error("function has no pieces")]
    Empty,
    #[error("x = {x} is outside the domain [{lo}, {hi})")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("invalid period {0}")]
    BadPeriod(f64),
    #[error("periodic breakpoint {0} outside (0, period)")]
    BreakOutsidePeriod(f64),
    #[error("root bracket [{lo}, {hi}] did not converge")]
    RootNotConverged { lo: f64, hi: f64 },
    #[error("zero at x = {x} is not simple (f' = {slope})")]
    NonSimpleZero { x: f64, slope: f64 },
    #[error("function is not finite near x = {x}")]
    NotFinite { x: f64 },
    #[error("incompatible periods {0} and {1}")]
    PeriodMismatch(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignChangeKind {
    SimpleZero,
    Jump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    PlusToMinus,
    MinusToPlus,
}

impl Direction {
    /// Sign of the function just before the change.
    pub fn sign_before(self) -> f64 {
        match self {
            Direction::PlusToMinus => 1.0,
            Direction::MinusToPlus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignChange {
    pub x: f64,
    pub kind: SignChangeKind,
    pub direction: Direction,
}

/// One interval of constancy of the active piece, after unrolling periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub lo: f64,
    pub hi: f64,
    pub piece: usize,
    /// Offset subtracted from `x` before evaluating the piece.
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct PiecewiseFunction {
    breaks: Vec<f64>,
    pieces: Vec<PieceExpr>,
    period: Option<f64>,
    domain: (f64, f64),
    /// Sign changes of one period, reduced to `[0, P)`.
    base_changes: Vec<SignChange>,
}

impl PartialEq for PiecewiseFunction {
    fn eq(&self, other: &Self) -> bool {
        self.breaks == other.breaks
            && self.pieces == other.pieces
            && self.period == other.period
            && self.domain == other.domain
    }
}

impl PiecewiseFunction {
    /// Builds a function from breakpoints and pieces (`pieces.len() == breaks.len() + 1`).
    ///
    /// Non-periodic: the pieces cover `(-inf, b_1), [b_1, b_2), ..., [b_n, +inf)`.
    /// Periodic: they cover `[0, b_1), ..., [b_n, P)`.
    pub fn new(
        breaks: Vec<f64>,
        pieces: Vec<PieceExpr>,
        period: Option<f64>,
    ) -> Result<Self, PiecewiseError> {
        if pieces.is_empty() || pieces.len() != breaks.len() + 1 {
            return Err(PiecewiseError::Empty);
        }
        for (i, w) in breaks.windows(2).enumerate() {
            if !(w[0] < w[1]) {
                return Err(PiecewiseError::NonIncreasing { clause: i + 1 });
            }
        }
        if let Some(p) = period {
            if !(p.is_finite() && p > 0.0) {
                return Err(PiecewiseError::BadPeriod(p));
            }
            if let Some(&b) = breaks.iter().find(|&&b| !(b > 0.0 && b < p)) {
                return Err(PiecewiseError::BreakOutsidePeriod(b));
            }
        }
        let mut f = PiecewiseFunction {
            breaks,
            pieces,
            period,
            domain: (f64::NEG_INFINITY, f64::INFINITY),
            base_changes: Vec::new(),
        };
        if let Some(p) = period {
            f.base_changes = f.period_changes(p)?;
        }
        Ok(f)
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![], vec![PieceExpr::from_tree(Expr::Const(c))], None)
            .expect("constant function is valid")
    }

    /// Restricts a non-periodic function to `[lo, hi)`.
    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        if self.period.is_none() {
            self.domain = (lo, hi);
        }
        self
    }

    pub fn parse(spec: &str) -> Result<Self, PiecewiseError> {
        parse::parse_piecewise(spec)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[PieceExpr] {
        &self.pieces
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    fn check_domain(&self, x: f64) -> Result<(), PiecewiseError> {
        let (lo, hi) = self.domain;
        if self.period.is_none() && !(x >= lo && x < hi) && !(hi == f64::INFINITY && x == hi) {
            return Err(PiecewiseError::OutOfDomain { x, lo, hi });
        }
        if !x.is_finite() {
            return Err(PiecewiseError::OutOfDomain { x, lo, hi });
        }
        Ok(())
    }

    /// The span containing `x` under the half-open convention.
    pub fn locate(&self, x: f64) -> Span {
        match self.period {
            None => {
                let i = self.breaks.partition_point(|&b| b <= x);
                let lo = if i == 0 { f64::NEG_INFINITY } else { self.breaks[i - 1] };
                let hi = self.breaks.get(i).copied().unwrap_or(f64::INFINITY);
                Span { lo, hi, piece: i, shift: 0.0 }
            }
            Some(p) => {
                let mut k = (x / p).floor();
                let mut r = x - k * p;
                if r >= p {
                    k += 1.0;
                    r = x - k * p;
                }
                if r < 0.0 {
                    k -= 1.0;
                    r = x - k * p;
                }
                let i = self.breaks.partition_point(|&b| b <= r);
                let shift = k * p;
                let lo = if i == 0 { 0.0 } else { self.breaks[i - 1] } + shift;
                let hi = self.breaks.get(i).copied().unwrap_or(p) + shift;
                Span { lo, hi, piece: i, shift }
            }
        }
    }

    /// Value at `x`; the right piece applies at a breakpoint.
    pub fn eval(&self, x: f64) -> Result<f64, PiecewiseError> {
        self.check_domain(x)?;
        Ok(self.value(x))
    }

    /// Value at `x` without a domain check.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let s = self.locate(x);
        self.pieces[s.piece].eval(x - s.shift)
    }

    /// Value using the piece active at `anchor`, evaluated at `x`.
    ///
    /// Integrators use this so a step that starts in one piece keeps using it
    /// up to the breakpoint where the step ends.
    #[inline]
    pub fn value_anchored(&self, x: f64, anchor: f64) -> f64 {
        let s = self.locate(anchor);
        self.pieces[s.piece].eval(x - s.shift)
    }

    #[inline]
    pub fn eval_span(&self, s: &Span, x: f64) -> f64 {
        self.pieces[s.piece].eval(x - s.shift)
    }

    #[inline]
    pub fn derivative_span(&self, s: &Span, x: f64) -> f64 {
        self.pieces[s.piece].eval_derivative(x - s.shift)
    }

    /// Derivative of the active piece at `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        let s = self.locate(x);
        self.derivative_span(&s, x)
    }

    /// Limit from the left at `x`.
    pub fn left_limit(&self, x: f64) -> f64 {
        let s = self.locate(x);
        if s.lo == x {
            let prev = self.locate(prev_float(x));
            self.eval_span(&prev, x)
        } else {
            self.eval_span(&s, x)
        }
    }

    /// Spans covering `[a, b]`, clipped to it, in order.
    pub fn spans(&self, a: f64, b: f64) -> Vec<Span> {
        let mut out = Vec::new();
        if !(a < b) {
            return out;
        }
        let mut x = a;
        while x < b {
            let mut s = self.locate(x);
            let hi = s.hi.min(b);
            if !(hi > x) {
                // rounding at a period boundary: step to the next span
                let next = next_float(x);
                if next >= b {
                    break;
                }
                x = next;
                continue;
            }
            s.lo = x;
            s.hi = hi;
            out.push(s);
            x = hi;
        }
        out
    }

    /// Breakpoints (including period boundaries) in the open interval `(a, b)`.
    pub fn breaks_in(&self, a: f64, b: f64) -> Vec<f64> {
        let spans = self.spans(a, b);
        spans.iter().skip(1).map(|s| s.lo).collect()
    }

    /// All sign changes in `(a, b]`, ascending.
    pub fn sign_changes(&self, a: f64, b: f64) -> Result<Vec<SignChange>, PiecewiseError> {
        if !(a < b) {
            return Ok(Vec::new());
        }
        match self.period {
            None => self.scan_changes(a, b),
            Some(p) => {
                let mut out = Vec::new();
                if self.base_changes.is_empty() {
                    return Ok(out);
                }
                let mut k = (a / p).floor() - 1.0;
                loop {
                    let shift = k * p;
                    if shift > b {
                        break;
                    }
                    for c in &self.base_changes {
                        let x = c.x + shift;
                        if x > a && x <= b {
                            out.push(SignChange { x, ..*c });
                        }
                    }
                    k += 1.0;
                }
                Ok(out)
            }
        }
    }

    /// Sign changes of one period, reduced to `[0, P)`.
    fn period_changes(&self, p: f64) -> Result<Vec<SignChange>, PiecewiseError> {
        // Start a little before 0 so a change sitting exactly on the period
        // boundary is bracketed.
        let d = p * 1e-6;
        let mut out: Vec<SignChange> = self
            .scan_changes(-d, p - d)?
            .into_iter()
            .map(|mut c| {
                if c.x < 0.0 {
                    c.x += p;
                }
                if c.x >= p {
                    c.x -= p;
                }
                c
            })
            .collect();
        out.sort_by(|u, v| u.x.total_cmp(&v.x));
        Ok(out)
    }

    fn scan_changes(&self, a: f64, b: f64) -> Result<Vec<SignChange>, PiecewiseError> {
        struct Probe {
            x: f64,
            sign: f64,
            span: usize,
        }
        let spans = self.spans(a, b);
        let mut out = Vec::new();
        let mut last: Option<Probe> = None;
        for (si, s) in spans.iter().enumerate() {
            let n = (((s.hi - s.lo) / SAMPLE_STEP).ceil() as usize).max(4);
            for j in 0..=n {
                let x = if j == n { s.hi } else { s.lo + (s.hi - s.lo) * j as f64 / n as f64 };
                let v = self.eval_span(s, x);
                if !v.is_finite() {
                    return Err(PiecewiseError::NotFinite { x });
                }
                if v == 0.0 {
                    continue;
                }
                let sign = v.signum();
                if let Some(l) = &last {
                    if l.sign != sign {
                        let direction = if l.sign > 0.0 {
                            Direction::PlusToMinus
                        } else {
                            Direction::MinusToPlus
                        };
                        if l.span == si {
                            let r = bisect(|t| self.eval_span(s, t), l.x, x)?;
                            let slope = self.derivative_span(s, r);
                            if !(slope.abs() > 1e-9) {
                                return Err(PiecewiseError::NonSimpleZero { x: r, slope });
                            }
                            out.push(SignChange { x: r, kind: SignChangeKind::SimpleZero, direction });
                        } else {
                            // the change sits on the first boundary after the last sign
                            let bx = spans[l.span].hi;
                            let left = self.eval_span(&spans[l.span], bx);
                            let right = self.eval_span(&spans[l.span + 1], bx);
                            let scale = left.abs().max(right.abs()).max(1.0);
                            let kind = if (left - right).abs() > 1e-12 * scale {
                                SignChangeKind::Jump
                            } else {
                                SignChangeKind::SimpleZero
                            };
                            out.push(SignChange { x: bx, kind, direction });
                        }
                    }
                }
                // the endpoint sample of a span is a left limit: keep it tied to this span
                last = Some(Probe { x, sign, span: si });
            }
        }
        out.retain(|c| c.x > a && c.x <= b);
        Ok(out)
    }

    /// Smallest sign change strictly after `x` (beyond a 1e-8 exclusion), if any before `x_max`.
    pub fn theta_next(&self, x: f64, x_max: f64) -> Result<Option<SignChange>, PiecewiseError> {
        let start = x + NEXT_EXCLUSION;
        match self.period {
            Some(p) => {
                if self.base_changes.is_empty() {
                    return Ok(None);
                }
                let hit = self.sign_changes(start, start + p)?.into_iter().next();
                Ok(hit.filter(|c| c.x <= x_max))
            }
            None => {
                let hi = x_max.min(self.domain.1);
                if !(hi > start) {
                    return Ok(None);
                }
                Ok(self.scan_changes(start, hi)?.into_iter().next())
            }
        }
    }

    /// `∫_a^b f`, piece by piece.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        if a == b {
            return 0.0;
        }
        if a > b {
            return -self.integrate(b, a);
        }
        let spans = self.spans(a, b);
        let tol = TOL_QUAD / spans.len().max(1) as f64;
        spans
            .iter()
            .map(|s| quad::integrate(|t| self.eval_span(s, t), s.lo, s.hi, tol))
            .sum()
    }

    /// `∫_a^b |f|`, split at sign changes.
    pub fn integrate_abs(&self, a: f64, b: f64) -> Result<f64, PiecewiseError> {
        let mut cuts = vec![a];
        cuts.extend(self.sign_changes(a, b)?.iter().map(|c| c.x).filter(|&x| x < b));
        cuts.push(b);
        Ok(cuts.windows(2).map(|w| self.integrate(w[0], w[1]).abs()).sum())
    }

    /// Sup of `|f|` and `|f'|` on `[a, b]` by dense sampling.
    pub fn bounds(&self, a: f64, b: f64) -> Result<(f64, f64), PiecewiseError> {
        let mut mf: f64 = 0.0;
        let mut md: f64 = 0.0;
        for s in self.spans(a, b) {
            let n = (((s.hi - s.lo) / SAMPLE_STEP).ceil() as usize).max(4);
            for j in 0..=n {
                let x = s.lo + (s.hi - s.lo) * j as f64 / n as f64;
                let v = self.eval_span(&s, x);
                let d = self.derivative_span(&s, x);
                if !v.is_finite() || !d.is_finite() {
                    return Err(PiecewiseError::NotFinite { x });
                }
                mf = mf.max(v.abs());
                md = md.max(d.abs());
            }
        }
        Ok((mf, md))
    }

    /// Smallest `x* ∈ (x0, x_max]` with `∫_{x0}^{x*} f` in `targets`.
    pub fn first_level_crossing(
        &self,
        x0: f64,
        targets: &[f64],
        x_max: f64,
    ) -> Result<Option<(f64, f64)>, PiecewiseError> {
        if !(x0 < x_max) || targets.is_empty() {
            return Ok(None);
        }
        let mut crit: Vec<f64> = self.breaks_in(x0, x_max);
        crit.extend(
            self.sign_changes(x0 + NEXT_EXCLUSION, x_max)?
                .iter()
                .map(|c| c.x)
                .filter(|&x| x < x_max),
        );
        crit.push(x_max);
        crit.sort_by(f64::total_cmp);
        crit.dedup();

        let mut u = x0;
        let mut phi_u = 0.0;
        for &v in &crit {
            if !(v > u) {
                continue;
            }
            let phi_v = phi_u + self.integrate(u, v);
            let up = phi_v >= phi_u;
            let mut best: Option<f64> = None;
            for &l in targets {
                let hit = if up {
                    phi_u < l && l <= phi_v + TOUCH_TOL
                } else {
                    phi_v - TOUCH_TOL <= l && l < phi_u
                };
                if hit {
                    let closer = match best {
                        None => true,
                        Some(b) => (l - phi_u).abs() < (b - phi_u).abs(),
                    };
                    if closer {
                        best = Some(l);
                    }
                }
            }
            if let Some(l) = best {
                if (phi_v - l).abs() <= TOUCH_TOL {
                    return Ok(Some((v, l)));
                }
                let g = |x: f64| phi_u + self.integrate(u, x) - l;
                let r = bisect(g, u, v)?;
                return Ok(Some((r, l)));
            }
            u = v;
            phi_u = phi_v;
        }
        Ok(None)
    }

    /// Pointwise combination `self ∘ other`, merging breakpoints.
    fn combine(
        &self,
        other: &PiecewiseFunction,
        op: fn(Expr, Expr) -> Expr,
    ) -> Result<PiecewiseFunction, PiecewiseError> {
        let period = match (self.period, other.period) {
            (None, None) => None,
            (Some(p), Some(q)) if (p - q).abs() <= 1e-12 * p.abs() => Some(p),
            (Some(p), Some(q)) => return Err(PiecewiseError::PeriodMismatch(p, q)),
            (Some(p), None) | (None, Some(p)) => return Err(PiecewiseError::PeriodMismatch(p, f64::NAN)),
        };
        let mut breaks: Vec<f64> = self.breaks.iter().chain(other.breaks.iter()).copied().collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let mut pieces = Vec::with_capacity(breaks.len() + 1);
        for i in 0..=breaks.len() {
            let probe = match (i, period) {
                (0, None) => breaks.first().map(|b| b - 1.0).unwrap_or(0.0),
                (0, Some(_)) => 0.0,
                (i, _) => breaks[i - 1],
            };
            let a = &self.pieces[self.locate(probe).piece];
            let b = &other.pieces[other.locate(probe).piece];
            pieces.push(PieceExpr::from_tree(op(a.tree.clone(), b.tree.clone())));
        }
        let mut out = PiecewiseFunction::new(breaks, pieces, period)?;
        out.domain = (
            self.domain.0.max(other.domain.0),
            self.domain.1.min(other.domain.1),
        );
        Ok(out)
    }

    pub fn try_add(&self, other: &PiecewiseFunction) -> Result<PiecewiseFunction, PiecewiseError> {
        self.combine(other, expr::add)
    }

    pub fn try_sub(&self, other: &PiecewiseFunction) -> Result<PiecewiseFunction, PiecewiseError> {
        self.combine(other, expr::sub)
    }

    /// `c * f`.
    pub fn scale(&self, c: f64) -> PiecewiseFunction {
        let pieces = self
            .pieces
            .iter()
            .map(|p| PieceExpr::from_tree(expr::mul(Expr::Const(c), p.tree.clone())))
            .collect();
        let mut out = PiecewiseFunction::new(self.breaks.clone(), pieces, self.period)
            .expect("scaling preserves structure");
        out.domain = self.domain;
        out
    }

    /// `f + c`.
    pub fn offset(&self, c: f64) -> PiecewiseFunction {
        let pieces = self
            .pieces
            .iter()
            .map(|p| PieceExpr::from_tree(expr::add(p.tree.clone(), Expr::Const(c))))
            .collect();
        let mut out = PiecewiseFunction::new(self.breaks.clone(), pieces, self.period)
            .expect("offset preserves structure");
        out.domain = self.domain;
        out
    }

    /// A non-periodic copy valid on `[lo, hi)`, with periods unrolled.
    pub fn unrolled(&self, lo: f64, hi: f64) -> Result<PiecewiseFunction, PiecewiseError> {
        let Some(_) = self.period else {
            return Ok(self.clone().with_domain(lo, hi));
        };
        let spans = self.spans(lo, hi);
        let breaks = spans.iter().skip(1).map(|s| s.lo).collect();
        let pieces = spans
            .iter()
            .map(|s| PieceExpr::from_tree(expr::shifted(&self.pieces[s.piece].tree, -s.shift)))
            .collect();
        Ok(PiecewiseFunction::new(breaks, pieces, None)?.with_domain(lo, hi))
    }
}

impl fmt::Display for PiecewiseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if !first {
                write!(f, "; ")?;
            }
            first = false;
            Ok(())
        };
        if let Some(p) = self.period {
            sep(f)?;
            write!(f, "periodic={p}")?;
        }
        if self.breaks.is_empty() && self.period.is_none() {
            sep(f)?;
            return write!(f, "all: {}", self.pieces[0].tree);
        }
        for (b, piece) in self.breaks.iter().zip(&self.pieces) {
            sep(f)?;
            write!(f, "x<{b}: {}", piece.tree)?;
        }
        sep(f)?;
        write!(f, "else: {}", self.pieces[self.breaks.len()].tree)
    }
}

/// Bisection on a sign change of `g` over `[lo, hi]`.
pub(crate) fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Result<f64, PiecewiseError> {
    let mut glo = g(lo);
    let ghi = g(hi);
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if glo.signum() == ghi.signum() {
        return Err(PiecewiseError::RootNotConverged { lo, hi });
    }
    for _ in 0..200 {
        if hi - lo <= TOL_ROOT * 0.5 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm.signum() == glo.signum() {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    if hi - lo > TOL_ROOT {
        return Err(PiecewiseError::RootNotConverged { lo, hi });
    }
    Ok(0.5 * (lo + hi))
}

pub(crate) fn next_float(x: f64) -> f64 {
    if x == f64::INFINITY {
        return x;
    }
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    f64::from_bits(if x > 0.0 { bits + 1 } else { bits - 1 })
}

pub(crate) fn prev_float(x: f64) -> f64 {
    -next_float(-x)
}
