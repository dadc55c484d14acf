//! Comparing simulated trajectories with their C-trajectories.

use serde::Serialize;
use thiserror::Error;

use crate::ctraj::CTrajectory;
use crate::sim::{EventKind, Trajectory};

pub type Point = (f64, f64);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApproxError {
    #[error("trajectory starts at ({tx}, {ty:?}) but the C-trajectory at ({cx}, {cy})")]
    OriginMismatch { tx: f64, ty: Option<f64>, cx: f64, cy: f64 },
    #[error("empty polyline")]
    Empty,
}

/// Discrete Fréchet distance (Euclidean), `O(|a||b|)` time, `O(|b|)` memory.
pub fn frechet_distance(a: &[Point], b: &[Point]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let d = |p: Point, q: Point| (p.0 - q.0).hypot(p.1 - q.1);
    let mut prev = vec![0.0f64; b.len()];
    let mut cur = vec![0.0f64; b.len()];
    for (i, &p) in a.iter().enumerate() {
        for (j, &q) in b.iter().enumerate() {
            let here = d(p, q);
            cur[j] = match (i, j) {
                (0, 0) => here,
                (0, _) => cur[j - 1].max(here),
                (_, 0) => prev[0].max(here),
                _ => prev[j].min(prev[j - 1]).min(cur[j - 1]).max(here),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len() - 1]
}

/// Inserts points so consecutive vertices are at most `ds` apart.
pub fn densify(pts: &[Point], ds: f64) -> Vec<Point> {
    let mut out = Vec::with_capacity(pts.len());
    for (i, &p) in pts.iter().enumerate() {
        if i > 0 {
            let q = pts[i - 1];
            let len = (p.0 - q.0).hypot(p.1 - q.1);
            let n = (len / ds).ceil() as usize;
            for k in 1..n {
                let t = k as f64 / n as f64;
                out.push((q.0 + t * (p.0 - q.0), q.1 + t * (p.1 - q.1)));
            }
        }
        out.push(p);
    }
    out
}

/// `(x, y)` vertices of a trajectory; unrepresentable ordinates map to 0.
pub fn trajectory_polyline(traj: &Trajectory) -> Vec<Point> {
    traj.samples.iter().map(|s| (s.x, s.y.unwrap_or(0.0))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitObservation {
    pub x_entry: f64,
    pub x_exit: f64,
    pub side_in: i8,
    pub side_out: i8,
}

fn side(z: f64) -> i8 {
    if z > 0.0 {
        1
    } else if z < 0.0 {
        -1
    } else {
        0
    }
}

/// Passages through the axis halo `|z| < 1 − κ`, read off the lens coordinate.
///
/// A trajectory that starts inside the halo counts as entering at its first
/// abscissa. Passages still open at the end are not reported.
pub fn extract_exits(traj: &Trajectory, kappa: f64) -> Vec<ExitObservation> {
    let s = &traj.samples;
    if s.is_empty() {
        return Vec::new();
    }
    let level = (1.0 - kappa).ln();
    let use_events = (kappa - traj.kappa).abs() <= 1e-15;
    let lz = |z: f64| z.abs().ln();
    // crossing abscissae in order: (x, entering?, sample index after the crossing)
    let mut crossings: Vec<(f64, bool, usize)> = Vec::new();
    if use_events {
        let mut j = 0;
        for e in traj.events.iter().filter(|e| e.kind == EventKind::LevelCross) {
            let entering = match e.detail.as_str() {
                "1-kappa:down" => true,
                "1-kappa:up" => false,
                _ => continue,
            };
            while j < s.len() && s[j].t < e.t {
                j += 1;
            }
            crossings.push((e.x, entering, j.min(s.len() - 1)));
        }
    } else {
        for j in 1..s.len() {
            let (a, b) = (lz(s[j - 1].z) - level, lz(s[j].z) - level);
            if (a < 0.0) != (b < 0.0) {
                let x = if a.is_finite() && b.is_finite() {
                    s[j - 1].x + a / (a - b) * (s[j].x - s[j - 1].x)
                } else {
                    s[j].x
                };
                crossings.push((x, b < 0.0, j));
            }
        }
    }
    let mut out = Vec::new();
    let mut open: Option<(f64, i8)> = if lz(s[0].z) < level { Some((s[0].x, side(s[0].z))) } else { None };
    for (x, entering, j) in crossings {
        if entering {
            let before = if j > 0 { s[j - 1].z } else { s[0].z };
            open = Some((x, side(before)));
        } else if let Some((x_entry, side_in)) = open.take() {
            out.push(ExitObservation { x_entry, x_exit: x, side_in, side_out: side(s[j].z) });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentMatch {
    pub index: usize,
    pub kind: &'static str,
    pub t_start: f64,
    pub t_end: f64,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShadowReport {
    pub frechet: f64,
    pub tol: f64,
    pub ds: f64,
    pub per_segment: Vec<SegmentMatch>,
    pub exits: Vec<ExitObservation>,
    pub pass: bool,
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * vx + (p.1 - a.1) * vy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - a.0 - t * vx).hypot(p.1 - a.1 - t * vy)
}

fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => (p.0 - line[0].0).hypot(p.1 - line[0].1),
        _ => line.windows(2).map(|w| point_segment_distance(p, w[0], w[1])).fold(f64::INFINITY, f64::min),
    }
}

/// Shadowing report of `traj` against `ct`; passes when the Fréchet distance is within `tol`.
pub fn verify(traj: &Trajectory, ct: &CTrajectory, tol: f64, ds: f64) -> Result<ShadowReport, ApproxError> {
    let (cx, cy) = ct.origin;
    let ty = traj.y0();
    let y_ok = matches!(ty, Some(y) if (y - cy).abs() <= 1e-9 * cy.abs().max(1.0));
    if (traj.x0 - cx).abs() > 1e-12 || !y_ok {
        return Err(ApproxError::OriginMismatch { tx: traj.x0, ty, cx, cy });
    }
    let a = densify(&trajectory_polyline(traj), ds);
    let b = ct.polyline(ds);
    if a.is_empty() || b.is_empty() {
        return Err(ApproxError::Empty);
    }
    let frechet = frechet_distance(&a, &b);

    let x0 = traj.x0;
    let t_last = traj.t_end();
    let pieces: Vec<Vec<Point>> = (0..ct.segments.len()).map(|i| ct.segment_polyline(i, ds)).collect();
    let mut per_segment = Vec::with_capacity(ct.segments.len());
    for (i, seg) in ct.segments.iter().enumerate() {
        let (xa, xb) = seg.x_range();
        let (t_start, t_end) = ((xa - x0).clamp(0.0, t_last), (xb - x0).clamp(0.0, t_last));
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(ct.segments.len() - 1);
        let near: Vec<Point> = pieces[lo..=hi].iter().flatten().copied().collect();
        let max_deviation = traj
            .samples
            .iter()
            .filter(|s| s.t >= t_start && s.t <= t_end)
            .map(|s| point_polyline_distance((s.x, s.y.unwrap_or(0.0)), &near))
            .fold(0.0, f64::max);
        per_segment.push(SegmentMatch { index: i, kind: seg.kind(), t_start, t_end, max_deviation });
    }
    Ok(ShadowReport {
        frechet,
        tol,
        ds,
        per_segment,
        exits: extract_exits(traj, traj.kappa),
        pass: frechet <= tol,
    })
}
