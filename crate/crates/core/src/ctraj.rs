//! C-trajectories: chains of vertical jumps, slow-curve arcs and stretches
//! along the axis.

use serde::Serialize;
use thiserror::Error;

use crate::piecewise::{Direction, PiecewiseError, PiecewiseFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtrajError {
    #[error("initial ordinate must be nonzero")]
    ZeroOrdinate,
    #[error("rho must be negative, got {0}")]
    BadRho(f64),
    #[error("x0 = {x0} must be below x_max = {x_max}")]
    EmptyRange { x0: f64, x_max: f64 },
    #[error("x = {0} is not a sign change of f")]
    NotSignChange(f64),
    #[error(transparent)]
    Piecewise(#[from] PiecewiseError),
}

/// Which target the primitive `∫f` hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExitLevel {
    /// `2ρ`
    TwoRho,
    Zero,
    /// `−2ρ`
    MinusTwoRho,
    Unresolved,
}

impl ExitLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitLevel::TwoRho => "2rho",
            ExitLevel::Zero => "0",
            ExitLevel::MinusTwoRho => "-2rho",
            ExitLevel::Unresolved => "unresolved",
        }
    }

    pub fn value(self, rho: f64) -> Option<f64> {
        match self {
            ExitLevel::TwoRho => Some(2.0 * rho),
            ExitLevel::Zero => Some(0.0),
            ExitLevel::MinusTwoRho => Some(-2.0 * rho),
            ExitLevel::Unresolved => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum CSegment {
    Vertical { x: f64, y_from: f64, y_to: f64 },
    /// Points `(s, f(s))`; ends on the axis when `x_to` is a sign change.
    Slow { x_from: f64, x_to: f64, ends_on_axis: bool },
    /// Points `(s, 0)`.
    Horizontal {
        x_from: f64,
        x_to: f64,
        entry_side: i8,
        exit_level: ExitLevel,
        /// `x_from` is not a sign change of `f`.
        off_sign_change: bool,
    },
}

impl CSegment {
    pub fn kind(&self) -> &'static str {
        match self {
            CSegment::Vertical { .. } => "vertical",
            CSegment::Slow { .. } => "slow",
            CSegment::Horizontal { .. } => "horizontal",
        }
    }

    /// Abscissa range covered.
    pub fn x_range(&self) -> (f64, f64) {
        match *self {
            CSegment::Vertical { x, .. } => (x, x),
            CSegment::Slow { x_from, x_to, .. } | CSegment::Horizontal { x_from, x_to, .. } => (x_from, x_to),
        }
    }

    pub fn start(&self, f: &PiecewiseFunction) -> (f64, f64) {
        match *self {
            CSegment::Vertical { x, y_from, .. } => (x, y_from),
            CSegment::Slow { x_from, .. } => (x_from, f.value(x_from)),
            CSegment::Horizontal { x_from, .. } => (x_from, 0.0),
        }
    }

    pub fn end(&self, f: &PiecewiseFunction) -> (f64, f64) {
        match *self {
            CSegment::Vertical { x, y_to, .. } => (x, y_to),
            CSegment::Slow { x_to, ends_on_axis: true, .. } => (x_to, 0.0),
            CSegment::Slow { x_to, .. } => (x_to, f.left_limit(x_to)),
            CSegment::Horizontal { x_to, .. } => (x_to, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitInfo {
    pub x_entry: f64,
    pub s: f64,
    pub level: ExitLevel,
    pub entry_side: i8,
    pub exit_side: i8,
    pub retard: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CTrajectory {
    pub segments: Vec<CSegment>,
    pub rho: f64,
    pub x_max: f64,
    pub origin: (f64, f64),
    #[serde(skip)]
    f: PiecewiseFunction,
}

fn sgn(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Where the axis stretch entered at `x_entry` from `entry_side` leaves it.
fn exit_from(
    f: &PiecewiseFunction,
    rho: f64,
    x_entry: f64,
    entry_side: i8,
    x_max: f64,
) -> Result<ExitInfo, CtrajError> {
    let targets = [2.0 * rho, 0.0, -2.0 * rho];
    Ok(match f.first_level_crossing(x_entry, &targets, x_max)? {
        Some((s, l)) => {
            let (level, exit_side) = if l == 0.0 {
                (ExitLevel::Zero, entry_side)
            } else if l == 2.0 * rho {
                (ExitLevel::TwoRho, -entry_side)
            } else {
                (ExitLevel::MinusTwoRho, -entry_side)
            };
            ExitInfo { x_entry, s, level, entry_side, exit_side, retard: s - x_entry }
        }
        None => ExitInfo {
            x_entry,
            s: x_max,
            level: ExitLevel::Unresolved,
            entry_side,
            exit_side: 0,
            retard: x_max - x_entry,
        },
    })
}

/// Exit point after entering the axis halo at the sign change `x_entry`.
pub fn exit_point(f: &PiecewiseFunction, rho: f64, x_entry: f64, x_max: f64) -> Result<ExitInfo, CtrajError> {
    if !(rho < 0.0) {
        return Err(CtrajError::BadRho(rho));
    }
    let near = f.sign_changes(x_entry - 1e-6, x_entry + 1e-6)?;
    let change = near
        .iter()
        .min_by(|a, b| (a.x - x_entry).abs().total_cmp(&(b.x - x_entry).abs()))
        .ok_or(CtrajError::NotSignChange(x_entry))?;
    let entry_side = match change.direction {
        Direction::PlusToMinus => 1,
        Direction::MinusToPlus => -1,
    };
    exit_from(f, rho, x_entry, entry_side, x_max)
}

const MAX_SEGMENTS: usize = 100_000;

/// Builds the C-trajectory from `(x0, y0)` up to `x_max`.
pub fn build(f: &PiecewiseFunction, rho: f64, x0: f64, y0: f64, x_max: f64) -> Result<CTrajectory, CtrajError> {
    if y0 == 0.0 || !y0.is_finite() {
        return Err(CtrajError::ZeroOrdinate);
    }
    if !(rho < 0.0) {
        return Err(CtrajError::BadRho(rho));
    }
    if !(x0 < x_max) {
        return Err(CtrajError::EmptyRange { x0, x_max });
    }
    enum Next {
        Slow(f64),
        Axis { x: f64, side: i8, off: bool },
    }
    let mut segs = Vec::new();
    let fx0 = f.eval(x0)?;
    let mut next = if fx0 != 0.0 && sgn(fx0) == sgn(y0) {
        segs.push(CSegment::Vertical { x: x0, y_from: y0, y_to: fx0 });
        Next::Slow(x0)
    } else {
        segs.push(CSegment::Vertical { x: x0, y_from: y0, y_to: 0.0 });
        let is_change = !f.sign_changes(x0 - 1e-9, x0 + 1e-9)?.is_empty();
        Next::Axis { x: x0, side: sgn(y0), off: !is_change }
    };
    while segs.len() < MAX_SEGMENTS {
        match next {
            Next::Slow(xs) => match f.theta_next(xs, x_max)? {
                Some(c) if c.x < x_max => {
                    segs.push(CSegment::Slow { x_from: xs, x_to: c.x, ends_on_axis: true });
                    next = Next::Axis { x: c.x, side: sgn(c.direction.sign_before()), off: false };
                }
                _ => {
                    segs.push(CSegment::Slow { x_from: xs, x_to: x_max, ends_on_axis: false });
                    break;
                }
            },
            Next::Axis { x, side, off } => {
                let info = exit_from(f, rho, x, side, x_max)?;
                segs.push(CSegment::Horizontal {
                    x_from: x,
                    x_to: info.s,
                    entry_side: side,
                    exit_level: info.level,
                    off_sign_change: off,
                });
                if info.level == ExitLevel::Unresolved || info.s >= x_max {
                    break;
                }
                let fs = f.value(info.s);
                segs.push(CSegment::Vertical { x: info.s, y_from: 0.0, y_to: fs });
                if fs == 0.0 {
                    next = Next::Axis { x: info.s, side: info.exit_side, off: false };
                } else {
                    next = Next::Slow(info.s);
                }
            }
        }
    }
    Ok(CTrajectory { segments: segs, rho, x_max, origin: (x0, y0), f: f.clone() })
}

impl CTrajectory {
    pub fn f(&self) -> &PiecewiseFunction {
        &self.f
    }

    /// Exit information of every resolved horizontal segment.
    pub fn exits(&self) -> Vec<ExitInfo> {
        self.segments
            .iter()
            .filter_map(|s| match *s {
                CSegment::Horizontal { x_from, x_to, entry_side, exit_level, .. }
                    if exit_level != ExitLevel::Unresolved =>
                {
                    let exit_side = if exit_level == ExitLevel::Zero { entry_side } else { -entry_side };
                    Some(ExitInfo { x_entry: x_from, s: x_to, level: exit_level, entry_side, exit_side, retard: x_to - x_from })
                }
                _ => None,
            })
            .collect()
    }

    pub fn horizontal_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, CSegment::Horizontal { .. })).count()
    }

    pub fn horizontal_length(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| match *s {
                CSegment::Horizontal { x_from, x_to, .. } => x_to - x_from,
                _ => 0.0,
            })
            .sum()
    }

    /// Densified vertex list, spacing at most `ds` along each segment.
    pub fn polyline(&self, ds: f64) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = Vec::new();
        for i in 0..self.segments.len() {
            for p in self.segment_polyline(i, ds) {
                if pts.last() != Some(&p) {
                    pts.push(p);
                }
            }
        }
        pts
    }

    /// Densified vertices of segment `i` alone.
    pub fn segment_polyline(&self, i: usize, ds: f64) -> Vec<(f64, f64)> {
        let f = &self.f;
        let seg = &self.segments[i];
        let mut pts: Vec<(f64, f64)> = Vec::new();
        let push = |p: (f64, f64), pts: &mut Vec<(f64, f64)>| {
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        };
        let (a, b) = (seg.start(f), seg.end(f));
        match *seg {
            CSegment::Vertical { .. } | CSegment::Horizontal { .. } => {
                for p in straight(a, b, ds) {
                    push(p, &mut pts);
                }
            }
            CSegment::Slow { x_from, x_to, ends_on_axis } => {
                let mut cuts = vec![x_from];
                cuts.extend(f.breaks_in(x_from, x_to));
                cuts.push(x_to);
                for (i, w) in cuts.windows(2).enumerate() {
                    if i > 0 {
                        // jump of f inside the arc
                        let prev = f.left_limit(w[0]);
                        for p in straight((w[0], prev), (w[0], f.value(w[0])), ds) {
                            push(p, &mut pts);
                        }
                    }
                    let span = f.locate(w[0]);
                    let n = ((w[1] - w[0]) / ds).ceil().max(1.0) as usize;
                    for j in 0..=n {
                        let x = if j == n { w[1] } else { w[0] + (w[1] - w[0]) * j as f64 / n as f64 };
                        push((x, f.eval_span(&span, x)), &mut pts);
                    }
                }
                if ends_on_axis {
                    let top = f.left_limit(x_to);
                    for p in straight((x_to, top), (x_to, 0.0), ds) {
                        push(p, &mut pts);
                    }
                }
            }
        }
        pts
    }

    /// Writes `kind,x_from,y_from,x_to,y_to,level,entry_side,exit_side`.
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "kind,x_from,y_from,x_to,y_to,level,entry_side,exit_side")?;
        for seg in &self.segments {
            let (a, b) = (seg.start(&self.f), seg.end(&self.f));
            let (level, entry, exit) = match *seg {
                CSegment::Horizontal { entry_side, exit_level, .. } => {
                    let exit = match exit_level {
                        ExitLevel::Unresolved => String::new(),
                        ExitLevel::Zero => entry_side.to_string(),
                        _ => (-entry_side).to_string(),
                    };
                    (exit_level.as_str().to_string(), entry_side.to_string(), exit)
                }
                _ => (String::new(), String::new(), String::new()),
            };
            writeln!(out, "{},{},{},{},{},{},{},{}", seg.kind(), a.0, a.1, b.0, b.1, level, entry, exit)?;
        }
        Ok(())
    }
}

fn straight(a: (f64, f64), b: (f64, f64), ds: f64) -> Vec<(f64, f64)> {
    let len = (b.0 - a.0).hypot(b.1 - a.1);
    let n = (len / ds).ceil().max(1.0) as usize;
    (0..=n)
        .map(|j| {
            let t = j as f64 / n as f64;
            if j == n {
                b
            } else {
                (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
            }
        })
        .collect()
}
