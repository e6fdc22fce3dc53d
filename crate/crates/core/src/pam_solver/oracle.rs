//! Reference solutions by uniformization.
//!
//! `exp(tH) = e^{-ct} exp(tM)` with `M = H + cI` entrywise nonnegative. Each
//! substep applies a truncated Taylor series of `exp(tau M)`; every term is
//! nonnegative, so there is no cancellation. The vector is renormalised after
//! each substep and the scale is carried in log form. The result is checked
//! against a run with twice as many substeps.

use super::{Domain, Hamiltonian};
use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::potential::PotentialField;

pub const DENSE_CAP: usize = 2000;

/// Largest `tau ||M||` per substep.
const SUBSTEP_NORM: f64 = 16.0;
const SERIES_TAIL: f64 = 1e-18;
const VALIDATION_TOL: f64 = 1e-10;

/// `u = exp(log_mass) * w` with `sum w = 1`; an all-zero `u` has
/// `log_mass = -inf` and `w = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution {
    pub w: Vec<f64>,
    pub log_mass: f64,
}

impl DenseSolution {
    pub fn log_u(&self, i: usize) -> f64 {
        if self.w[i] > 0.0 {
            self.log_mass + self.w[i].ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    pub fn u(&self, i: usize) -> f64 {
        self.log_u(i).exp()
    }
}

/// Number of Taylor terms so that the Poisson-type tail of `exp(a)` beyond
/// the last term is below `SERIES_TAIL`.
fn series_terms(a: f64) -> usize {
    let mut k = 0usize;
    let mut log_term = 0.0f64; // log(a^k / k!)
    loop {
        k += 1;
        log_term += a.ln() - (k as f64).ln();
        let ratio = a / (k as f64 + 1.0);
        if ratio < 0.5 && log_term + (1.0 / (1.0 - ratio)).ln() < SERIES_TAIL.ln() {
            return k;
        }
        if a == 0.0 {
            return 1;
        }
    }
}

fn propagate(h: &Hamiltonian, x0: &[f64], log0: f64, t: f64, c: f64, m: usize, terms: usize) -> DenseSolution {
    let n = h.dim();
    let tau = t / m as f64;
    let mut x = x0.to_vec();
    let mut log_scale = log0;
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for _ in 0..m {
        acc.copy_from_slice(&x);
        term.copy_from_slice(&x);
        for k in 1..=terms {
            h.apply(&term, &mut next);
            let f = tau / k as f64;
            for i in 0..n {
                next[i] = f * (next[i] + c * term[i]);
                acc[i] += next[i];
            }
            std::mem::swap(&mut term, &mut next);
        }
        let s: f64 = acc.iter().sum();
        for (xi, ai) in x.iter_mut().zip(&acc) {
            *xi = ai / s;
        }
        log_scale += s.ln();
    }
    DenseSolution {
        w: x,
        log_mass: log_scale - c * t,
    }
}

/// `exp(tH) x0` for a nonnegative start vector.
pub fn expm_action(h: &Hamiltonian, x0: &[f64], t: f64) -> Result<DenseSolution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be finite and >= 0, got {t}")));
    }
    if x0.len() != h.dim() || x0.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidParameter("start vector must be nonnegative and match the domain".into()));
    }
    let s: f64 = x0.iter().sum();
    if s == 0.0 {
        return Ok(DenseSolution {
            w: vec![0.0; h.dim()],
            log_mass: f64::NEG_INFINITY,
        });
    }
    let x: Vec<f64> = x0.iter().map(|v| v / s).collect();
    if t == 0.0 {
        return Ok(DenseSolution { w: x, log_mass: s.ln() });
    }
    let c = h.diag().iter().fold(0.0f64, |acc, &d| acc.max(-d));
    let norm = (0..h.dim())
        .map(|i| h.diag()[i] + c + h.neighbours(i).len() as f64)
        .fold(0.0f64, f64::max);
    let m = ((t * norm / SUBSTEP_NORM).ceil() as usize).max(1);
    let coarse = propagate(h, &x, s.ln(), t, c, m, series_terms(t * norm / m as f64));
    let fine = propagate(h, &x, s.ln(), t, c, 2 * m, series_terms(t * norm / (2 * m) as f64));
    let wmax = fine.w.iter().copied().fold(0.0f64, f64::max);
    let dw = coarse
        .w
        .iter()
        .zip(&fine.w)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / wmax;
    let dl = (coarse.log_mass - fine.log_mass).abs() / fine.log_mass.abs().max(1.0);
    let discrepancy = dw.max(dl);
    if !(discrepancy <= VALIDATION_TOL) {
        return Err(Error::OracleValidation { discrepancy });
    }
    Ok(fine)
}

fn dense_hamiltonian(tree: &Tree, field: &PotentialField, domain: &Domain) -> Result<Hamiltonian> {
    if domain.len() > DENSE_CAP {
        return Err(Error::DenseTooLarge {
            size: domain.len(),
            cap: DENSE_CAP,
        });
    }
    Hamiltonian::assemble(tree, field, domain)
}

/// `exp(tH) delta_O` on a domain of at most `DENSE_CAP` vertices.
pub fn solve_oracle_dense(tree: &Tree, field: &PotentialField, domain: &Domain, t: f64) -> Result<DenseSolution> {
    let h = dense_hamiltonian(tree, field, domain)?;
    let mut x0 = vec![0.0; h.dim()];
    x0[domain.require_row(tree.root())?] = 1.0;
    expm_action(&h, &x0, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeReversal {
    /// `(exp(tH) delta_O)(v)`.
    pub forward: f64,
    /// `(exp(tH) delta_v)(O)`.
    pub backward: f64,
    pub log_forward: f64,
    pub log_backward: f64,
    /// `|forward - backward| / max(forward, backward)`, from the logs.
    pub discrepancy: f64,
}

pub fn time_reversal_check(
    tree: &Tree,
    field: &PotentialField,
    domain: &Domain,
    t: f64,
    v: VertexId,
) -> Result<TimeReversal> {
    let h = dense_hamiltonian(tree, field, domain)?;
    let o = domain.require_row(tree.root())?;
    let r = domain.require_row(v)?;
    let mut x = vec![0.0; h.dim()];
    x[o] = 1.0;
    let fwd = expm_action(&h, &x, t)?;
    x[o] = 0.0;
    x[r] = 1.0;
    let bwd = expm_action(&h, &x, t)?;
    let (lf, lb) = (fwd.log_u(r), bwd.log_u(o));
    let discrepancy = if lf == lb {
        0.0
    } else {
        -(-(lf - lb).abs()).exp_m1()
    };
    Ok(TimeReversal {
        forward: lf.exp(),
        backward: lb.exp(),
        log_forward: lf,
        log_backward: lb,
        discrepancy,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_at_zero() {
        let (tree, field) = env(2, 8, 4.0);
        let d = ball_near(&tree, 40);
        let s = solve_oracle_dense(&tree, &field, &d, 0.0).unwrap();
        assert_eq!(s.log_mass, 0.0);
        assert_eq!(s.w[0], 1.0);
        assert!(s.w[1..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn isolated_edge_closed_form() {
        // xi = 1 everywhere on an edge: exp(tH) = e^t exp(t[-1 1; 1 -1]).
        let edge = build(&[None, Some(0)]);
        let f = PotentialField::from_values(4.0, vec![1.0, 1.0]).unwrap();
        let d = Domain::ball(&edge, 0, 1).unwrap();
        for t in [0.1, 1.0, 7.5] {
            let s = solve_oracle_dense(&edge, &f, &d, t).unwrap();
            let e = (-2.0 * t).exp();
            assert_relative_eq!(s.u(0) * (-t).exp(), (1.0 + e) / 2.0, max_relative = 1e-13);
            assert_relative_eq!(s.u(1) * (-t).exp(), (1.0 - e) / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn matches_pade_exponential() {
        let (tree, field) = env(7, 10, 4.0);
        let d = ball_near(&tree, 60);
        let h = Hamiltonian::assemble(&tree, &field, &d).unwrap();
        let t = 0.7;
        let e = (h.to_dense() * t).exp();
        let s = solve_oracle_dense(&tree, &field, &d, t).unwrap();
        let norm = e.column(0).amax();
        for i in 0..d.len() {
            assert!((s.u(i) - e[(i, 0)]).abs() <= 1e-12 * norm);
        }
    }

    #[test]
    fn conserves_mass_without_potential_on_whole_tree() {
        // Whole finite tree, xi = 1 so H = Laplacian + I.
        let parents: Vec<Option<VertexId>> = (0..40u32).map(|i| if i == 0 { None } else { Some((i - 1) / 3) }).collect();
        let tree = build(&parents);
        let f = PotentialField::from_values(4.0, vec![1.0; 40]).unwrap();
        let d = Domain::rooted(&tree, (0..40).collect()).unwrap();
        for t in [0.1, 1.0, 10.0] {
            let s = solve_oracle_dense(&tree, &f, &d, t).unwrap();
            assert!((s.log_mass - t).abs() <= 1e-10 * t);
        }
    }

    #[test]
    fn time_reversal_is_symmetric() {
        let (tree, field) = env(12, 10, 4.0);
        let d = ball_near(&tree, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let root = time_reversal_check(&tree, &field, &d, 2.0, 0).unwrap();
        assert_eq!(root.discrepancy, 0.0);
        for _ in 0..20 {
            let v = d.vertices()[rng.random_range(0..d.len())];
            let t = rng.random_range(0.1..5.0);
            let r = time_reversal_check(&tree, &field, &d, t, v).unwrap();
            assert!(r.discrepancy <= 1e-10, "{r:?}");
        }
    }

    #[test]
    fn size_cap() {
        let (tree, field) = env(3, 40, 4.0);
        let d = ball_near(&tree, 5000);
        if d.len() > DENSE_CAP {
            assert!(matches!(
                solve_oracle_dense(&tree, &field, &d, 1.0),
                Err(Error::DenseTooLarge { .. })
            ));
        }
    }

    #[test]
    fn series_length() {
        assert!(series_terms(16.0) < 80);
        assert!(series_terms(1e-3) >= 1);
    }
}
