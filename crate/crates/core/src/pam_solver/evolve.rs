//! Adaptive Dormand-Prince 5(4) integration of the normalised flow
//! `w' = Hw - (1'Hw) w`, `L' = 1'Hw`, where `u = e^L w` and `sum w = 1`.

use super::Hamiltonian;
use crate::error::{Error, Result};

pub const MIN_TOL: f64 = 1e-12;
pub const MAX_TOL: f64 = 1e-3;

const CLIP: f64 = 1e-12;
const MAX_NEG_RETRIES: u32 = 40;

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntegratorStats {
    pub steps: u64,
    pub rejected: u64,
    /// Largest accepted scaled error estimate (at most 1).
    pub max_error: f64,
    pub last_step: f64,
}

/// Normalised profile and log-mass at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pub t: f64,
    pub w: Vec<f64>,
    pub log_mass: f64,
    pub stats: IntegratorStats,
}

impl SolutionState {
    /// `u(0) = delta` at row `start`.
    pub fn point_source(h: &Hamiltonian, start: usize) -> Result<Self> {
        if start >= h.dim() {
            return Err(Error::InvalidParameter("start row outside the domain".into()));
        }
        let mut w = vec![0.0; h.dim()];
        w[start] = 1.0;
        Ok(Self {
            t: 0.0,
            w,
            log_mass: 0.0,
            stats: IntegratorStats::default(),
        })
    }

    pub fn log_u(&self, i: usize) -> f64 {
        if self.w[i] > 0.0 {
            self.log_mass + self.w[i].ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

struct Work {
    k: [Vec<f64>; 7],
    s: [f64; 7],
    y: Vec<f64>,
    w5: Vec<f64>,
}

/// `k = Hw - s w`, returns `s = 1'Hw`.
fn rhs(h: &Hamiltonian, w: &[f64], k: &mut [f64]) -> f64 {
    h.apply(w, k);
    let s: f64 = k.iter().sum();
    for (ki, wi) in k.iter_mut().zip(w) {
        *ki -= s * wi;
    }
    s
}

/// Advances `state` to `t_target` with local relative tolerance `tol`.
pub fn evolve(h: &Hamiltonian, state: &mut SolutionState, t_target: f64, tol: f64) -> Result<()> {
    if !(MIN_TOL..=MAX_TOL).contains(&tol) {
        return Err(Error::InvalidParameter(format!("tol must lie in [{MIN_TOL}, {MAX_TOL}], got {tol}")));
    }
    if !(t_target >= state.t) || !t_target.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target time {t_target} precedes current time {}",
            state.t
        )));
    }
    let n = h.dim();
    if state.w.len() != n {
        return Err(Error::InvalidParameter("state does not match the operator".into()));
    }
    let h_max = 0.5 / (h.xi_max() + f64::from(h.deg_max()) + 1.0);
    let mut dt = if state.stats.last_step > 0.0 {
        state.stats.last_step.min(h_max)
    } else {
        0.01 * h_max
    };
    let mut wk = Work {
        k: std::array::from_fn(|_| vec![0.0; n]),
        s: [0.0; 7],
        y: vec![0.0; n],
        w5: vec![0.0; n],
    };
    let mut neg_retries = 0;
    while state.t < t_target {
        let last = state.t + dt >= t_target;
        let step = if last { t_target - state.t } else { dt };
        if step < 1e-14 * state.t.max(1.0) && !last {
            return Err(Error::StepUnderflow {
                t: state.t,
                h: step,
                steps: state.stats.steps,
                rejected: state.stats.rejected,
            });
        }
        let err = try_step(h, state, step, tol, &mut wk);
        if err > 1.0 {
            state.stats.rejected += 1;
            dt = step * (0.9 * err.powf(-0.2)).max(0.2);
            continue;
        }
        let min = wk.w5.iter().copied().enumerate().fold((0, 0.0f64), |a, (i, x)| if x < a.1 { (i, x) } else { a });
        if min.1 < -CLIP {
            neg_retries += 1;
            state.stats.rejected += 1;
            if neg_retries > MAX_NEG_RETRIES {
                return Err(Error::Negativity {
                    row: min.0,
                    value: min.1,
                    t: state.t + step,
                });
            }
            dt = 0.5 * step;
            continue;
        }
        neg_retries = 0;
        let mut total = 0.0;
        for x in wk.w5.iter_mut() {
            if *x < 0.0 {
                *x = 0.0;
            }
            total += *x;
        }
        for (wi, x) in state.w.iter_mut().zip(&wk.w5) {
            *wi = x / total;
        }
        state.log_mass += step
            * (B1 * wk.s[0] + B3 * wk.s[2] + B4 * wk.s[3] + B5 * wk.s[4] + B6 * wk.s[5])
            + total.ln();
        state.t = if last { t_target } else { state.t + step };
        state.stats.steps += 1;
        state.stats.max_error = state.stats.max_error.max(err);
        state.stats.last_step = step;
        let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        dt = (step * grow).min(h_max);
        if last {
            break;
        }
    }
    Ok(())
}

/// One trial step; fills `wk.w5` with the 5th-order solution and returns
/// the scaled error norm.
fn try_step(h: &Hamiltonian, state: &SolutionState, dt: f64, tol: f64, wk: &mut Work) -> f64 {
    let w = &state.w;
    let n = w.len();
    let Work { k, s, y, w5 } = wk;
    s[0] = rhs(h, w, &mut k[0]);
    let stage = |coef: &[f64], k: &[Vec<f64>], y: &mut Vec<f64>| {
        for i in 0..n {
            let mut acc = 0.0;
            for (j, c) in coef.iter().enumerate() {
                acc += c * k[j][i];
            }
            y[i] = w[i] + dt * acc;
        }
    };
    stage(&[A21], k, y);
    s[1] = rhs(h, y, &mut k[1]);
    stage(&[A31, A32], k, y);
    s[2] = rhs(h, y, &mut k[2]);
    stage(&[A41, A42, A43], k, y);
    s[3] = rhs(h, y, &mut k[3]);
    stage(&[A51, A52, A53, A54], k, y);
    s[4] = rhs(h, y, &mut k[4]);
    stage(&[A61, A62, A63, A64, A65], k, y);
    s[5] = rhs(h, y, &mut k[5]);
    stage(&[B1, 0.0, B3, B4, B5, B6], k, w5);
    s[6] = rhs(h, w5, &mut k[6]);

    let wmax = w.iter().chain(w5.iter()).fold(0.0f64, |a, x| a.max(x.abs()));
    let atol = (1e-6 * tol).min(1e-13) * wmax;
    let mut err = 0.0f64;
    for i in 0..n {
        let e = dt * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
        let sc = tol * w[i].abs().max(w5[i].abs()) + atol;
        err = err.max(e.abs() / sc);
    }
    let l = state.log_mass;
    let el = dt * (E1 * s[0] + E3 * s[2] + E4 * s[3] + E5 * s[4] + E6 * s[5] + E7 * s[6]);
    err.max(el.abs() / (tol * l.abs().max(1.0)))
}
