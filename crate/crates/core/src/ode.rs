//! Dormand–Prince 5(4) with PI step control and dense output.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("step size collapsed to {h:e} at t = {t}")]
    StepCollapse { t: f64, h: f64 },
    #[error("step budget of {0} exhausted")]
    MaxSteps(usize),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// One attempted step: new state, embedded error estimate and the
/// coefficients of the continuous extension.
#[derive(Debug, Clone)]
pub struct Step<const N: usize> {
    pub t: f64,
    pub h: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    pub err: [f64; N],
    /// Derivative at the end of the step (FSAL).
    pub k7: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> Step<N> {
    /// State at `t + theta * h`, `theta ∈ [0, 1]`.
    pub fn dense(&self, theta: f64) -> [f64; N] {
        let t1 = 1.0 - theta;
        let r = &self.rcont;
        std::array::from_fn(|i| r[0][i] + theta * (r[1][i] + t1 * (r[2][i] + theta * (r[3][i] + t1 * r[4][i]))))
    }

    pub fn dense_at(&self, t: f64) -> [f64; N] {
        if self.h == 0.0 {
            return self.y0;
        }
        self.dense(((t - self.t) / self.h).clamp(0.0, 1.0))
    }
}

#[inline]
fn lin<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

/// One Dormand–Prince step from `(t, y)` with derivative `k1` there.
pub fn dopri_step<const N: usize>(
    rhs: &mut impl FnMut(f64, &[f64; N]) -> [f64; N],
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> Step<N> {
    let k2 = rhs(t + C2 * h, &lin(y, h, &[(A21, k1)]));
    let k3 = rhs(t + C3 * h, &lin(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = rhs(t + C4 * h, &lin(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = rhs(t + C5 * h, &lin(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = rhs(t + h, &lin(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y1 = lin(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
    let k7 = rhs(t + h, &y1);
    let err = std::array::from_fn(|i| {
        h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
    });
    let mut rcont = [[0.0; N]; 5];
    for i in 0..N {
        let ydiff = y1[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        rcont[0][i] = y[i];
        rcont[1][i] = ydiff;
        rcont[2][i] = bspl;
        rcont[3][i] = ydiff - h * k7[i] - bspl;
        rcont[4][i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    Step { t, h, y0: *y, y1, err, k7, rcont }
}

/// PI step-size controller.
#[derive(Debug, Clone)]
pub struct Controller {
    pub safety: f64,
    pub beta: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    err_old: f64,
}

impl Default for Controller {
    fn default() -> Self {
        Controller { safety: 0.9, beta: 0.04, min_factor: 0.2, max_factor: 10.0, err_old: 1e-4 }
    }
}

impl Controller {
    /// Step factor after a step with normalized error `err`; `true` if accepted.
    pub fn assess(&mut self, err: f64) -> (bool, f64) {
        if !err.is_finite() {
            return (false, self.min_factor);
        }
        if err <= 1.0 {
            let e = err.max(1e-10);
            let expo = 0.2 - 0.75 * self.beta;
            let fac = self.safety * e.powf(-expo) * self.err_old.powf(self.beta);
            self.err_old = e;
            (true, fac.clamp(self.min_factor, self.max_factor))
        } else {
            let fac = self.safety * err.powf(-0.2);
            (false, fac.clamp(self.min_factor, 1.0))
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-9, atol: 1e-12, h_init: None, h_max: f64::INFINITY, max_steps: 5_000_000 }
    }
}

/// Integrates `y' = rhs(t, y, anchor)` from `t0` to `t1`, landing exactly on
/// every time in `stops`. `anchor` is the start of the current step, so a
/// right-hand side that switches regime at the stops sees one regime per step.
/// `observer` sees every accepted step.
pub fn solve<const N: usize>(
    mut rhs: impl FnMut(f64, &[f64; N], f64) -> [f64; N],
    t0: f64,
    y0: [f64; N],
    t1: f64,
    stops: &[f64],
    opts: &OdeOptions,
    mut observer: impl FnMut(&Step<N>),
) -> Result<[f64; N], OdeError> {
    let mut t = t0;
    let mut y = y0;
    if !(t1 > t0) {
        return Ok(y);
    }
    let mut stops: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < t1).collect();
    stops.sort_by(f64::total_cmp);
    stops.push(t1);
    let mut next_stop = 0;

    let mut ctrl = Controller::default();
    let mut h = opts.h_init.unwrap_or_else(|| (1e-3 * (t1 - t0)).min(opts.h_max));
    let mut steps = 0usize;
    let mut k1 = rhs(t, &y, t);
    while t < t1 {
        let target = stops[next_stop];
        let mut hh = h.min(opts.h_max);
        let landing = hh >= target - t;
        if landing {
            hh = target - t;
        }
        let anchor = t;
        let step = dopri_step(&mut |s, v| rhs(s, v, anchor), t, &y, &k1, hh);
        steps += 1;
        if steps > opts.max_steps {
            return Err(OdeError::MaxSteps(opts.max_steps));
        }
        let err = (0..N)
            .map(|i| {
                let sc = opts.atol + opts.rtol * y[i].abs().max(step.y1[i].abs());
                (step.err[i] / sc).powi(2)
            })
            .sum::<f64>()
            / N as f64;
        let (ok, fac) = ctrl.assess(err.sqrt());
        if ok {
            if step.y1.iter().any(|v| !v.is_finite()) {
                return Err(OdeError::NonFinite { t: t + hh });
            }
            observer(&step);
            if landing {
                t = target;
                next_stop += 1;
                k1 = rhs(t, &step.y1, t);
            } else {
                t += hh;
                k1 = step.k7;
            }
            y = step.y1;
            h = hh * fac;
            if landing && fac >= 1.0 {
                // a clipped step says nothing about the natural step size
                h = h.max(hh);
            }
        } else {
            h = hh * fac;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepCollapse { t, h });
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_accuracy() {
        let y = solve(|_, y: &[f64; 1], _| [-y[0]], 0.0, [1.0], 5.0, &[], &OdeOptions::default(), |_| {}).unwrap();
        assert!((y[0] - (-5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let mut worst: f64 = 0.0;
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, ..Default::default() };
        solve(|_, y: &[f64; 2], _| [y[1], -y[0]], 0.0, [0.0, 1.0], 10.0, &[], &opts, |s| {
            for j in 0..=8 {
                let th = j as f64 / 8.0;
                let tt = s.t + th * s.h;
                let v = s.dense(th);
                worst = worst.max((v[0] - tt.sin()).abs());
            }
        })
        .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn stops_are_hit_and_anchor_is_step_start() {
        let mut ends = Vec::new();
        // y' = 1 before t = 1, -1 after: anchor-based switching gives an exact kink
        let y = solve(
            |_, _: &[f64; 1], a| [if a < 1.0 { 1.0 } else { -1.0 }],
            0.0,
            [0.0],
            3.0,
            &[1.0],
            &OdeOptions::default(),
            |s| ends.push(s.t + s.h),
        )
        .unwrap();
        assert!(ends.contains(&1.0));
        assert!((y[0] - (-1.0)).abs() < 1e-12);
    }
}
