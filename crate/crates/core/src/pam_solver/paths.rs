//! Contribution of a single path to the Feynman-Kac expectation.
//!
//! For a path `v_0, ..., v_n` with `x_i = xi(v_i) - deg(v_i)`,
//! `E[exp(int xi(X_s) ds) 1{path of X on [0,t] is gamma}]` is the integral of
//! `prod_i exp(x_i s_i)` over holding times `s_0 + ... + s_n = t`. It equals
//! the `(n, 0)` entry of `exp(tJ)` with `J` lower bidiagonal (diagonal `x_i`,
//! subdiagonal 1).

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::potential::PotentialField;

#[derive(Debug, Clone, PartialEq)]
pub struct PathBounds {
    /// First index attaining `max x_i`.
    pub i_star: usize,
    /// No vertex repeats.
    pub simple: bool,
    /// Lower bound; the "+1" denominators are dropped for simple paths.
    pub log_lower: f64,
    /// Upper bound with the "+1" denominators, valid for any walk.
    pub log_upper: f64,
    /// Upper bound without "+1", for simple paths only. `+inf` when another
    /// vertex ties with the maximum.
    pub log_upper_direct: Option<f64>,
}

impl PathBounds {
    /// Tightest available upper bound.
    pub fn log_upper_best(&self) -> f64 {
        self.log_upper_direct.map_or(self.log_upper, |d| d.min(self.log_upper))
    }
}

fn path_values(tree: &Tree, field: &PotentialField, path: &[VertexId]) -> Result<Vec<f64>> {
    if path.is_empty() {
        return Err(Error::InvalidParameter("path must contain a vertex".into()));
    }
    for pair in path.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if tree.parent(a) != Some(b) && tree.parent(b) != Some(a) {
            return Err(Error::InvalidParameter(format!("{a} and {b} are not adjacent")));
        }
    }
    path.iter().map(|&v| field.adjusted(tree, v)).collect()
}

/// Bounds on the path contribution, in log form.
pub fn path_contribution_bounds(tree: &Tree, field: &PotentialField, path: &[VertexId], t: f64) -> Result<PathBounds> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be positive, got {t}")));
    }
    let x = path_values(tree, field, path)?;
    let mut sorted = path.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let simple = sorted.len() == path.len();
    Ok(bounds_from_values(&x, t, simple))
}

pub(crate) fn bounds_from_values(x: &[f64], t: f64, simple: bool) -> PathBounds {
    let n = x.len() - 1;
    let i_star = x
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > x[best] { i } else { best });
    let xs = x[i_star];
    let slice = t / n.max(1) as f64;
    let mut log_upper = t * (1.0 + xs);
    let mut log_upper_direct = t * xs;
    let mut log_lower = t * xs;
    for (i, &xi) in x.iter().enumerate() {
        if i == i_star {
            continue;
        }
        let d = xs - xi;
        log_upper -= (1.0 + d).ln();
        log_upper_direct -= d.ln();
        let numer = -(-slice * d).exp_m1();
        log_lower += if simple {
            if d == 0.0 {
                slice.ln()
            } else {
                (numer / d).ln()
            }
        } else {
            (numer / (d + 1.0)).ln()
        };
    }
    PathBounds {
        i_star,
        simple,
        log_lower,
        log_upper,
        log_upper_direct: simple.then_some(log_upper_direct),
    }
}

/// Log of the exact path contribution.
///
/// Uses `exp(tJ) = e^{t x*} e^{-tY} exp(tM)` with `M = J - x* + Y >= 0`
/// entrywise. Substeps keep `tau Y <= 1` so each truncated series is
/// accurate entry by entry, and propagating a nonnegative vector keeps
/// componentwise relative accuracy even when the entry is tiny.
pub fn path_contribution_exact(tree: &Tree, field: &PotentialField, path: &[VertexId], t: f64) -> Result<f64> {
    let x = path_values(tree, field, path)?;
    log_bidiagonal_exp(&x, t)
}

pub(crate) fn log_bidiagonal_exp(x: &[f64], t: f64) -> Result<f64> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t must be finite and >= 0, got {t}")));
    }
    let n = x.len() - 1;
    if t == 0.0 {
        return Ok(if n == 0 { 0.0 } else { f64::NEG_INFINITY });
    }
    let xs = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = x.iter().map(|&v| v - xs).collect();
    let big_y = y.iter().fold(0.0f64, |a, &v| a.max(-v));
    let diag: Vec<f64> = y.iter().map(|&v| v + big_y).collect();
    let m = ((t * (big_y + 1.0)).ceil() as usize).max(1);
    let tau = t / m as f64;
    let terms = n + 40;
    let mut v = vec![0.0; n + 1];
    v[0] = 1.0;
    let mut log_scale = 0.0;
    let mut term = vec![0.0; n + 1];
    let mut next = vec![0.0; n + 1];
    for _ in 0..m {
        term.copy_from_slice(&v);
        let mut acc = v.clone();
        for k in 1..=terms {
            let f = tau / k as f64;
            next[0] = f * diag[0] * term[0];
            for i in 1..=n {
                next[i] = f * (diag[i] * term[i] + term[i - 1]);
            }
            for i in 0..=n {
                acc[i] += next[i];
            }
            std::mem::swap(&mut term, &mut next);
        }
        let s = acc.iter().copied().fold(0.0f64, f64::max);
        for i in 0..=n {
            v[i] = acc[i] / s;
        }
        log_scale += s.ln();
    }
    Ok(t * xs - t * big_y + log_scale + v[n].ln())
}

/// Independent check of [`path_contribution_exact`]: the nested convolution
/// `f_k(s) = int_0^s f_{k-1}(u) exp(x_k (s - u)) du` on a uniform grid with
/// `intervals` trapezoid panels. Second-order accurate.
pub fn path_contribution_quadrature(
    tree: &Tree,
    field: &PotentialField,
    path: &[VertexId],
    t: f64,
    intervals: usize,
) -> Result<f64> {
    let x = path_values(tree, field, path)?;
    Ok(log_convolution_quadrature(&x, t, intervals))
}

/// Romberg extrapolation of [`path_contribution_quadrature`] over
/// `intervals`, `2 intervals` and `4 intervals` panels. Returns the log of
/// the extrapolated value and the log-scale difference from the previous
/// extrapolation level as an error estimate.
pub fn path_contribution_romberg(
    tree: &Tree,
    field: &PotentialField,
    path: &[VertexId],
    t: f64,
    intervals: usize,
) -> Result<(f64, f64)> {
    let x = path_values(tree, field, path)?;
    Ok(log_romberg(&x, t, intervals))
}

pub(crate) fn log_romberg(x: &[f64], t: f64, intervals: usize) -> (f64, f64) {
    let logs: Vec<f64> = [1, 2, 4].iter().map(|m| log_convolution_quadrature(x, t, intervals * m)).collect();
    // Work relative to the finest level so the extrapolation never overflows.
    let base = logs[2];
    let q: Vec<f64> = logs.iter().map(|l| (l - base).exp()).collect();
    let r1 = [(4.0 * q[1] - q[0]) / 3.0, (4.0 * q[2] - q[1]) / 3.0];
    let r2 = (16.0 * r1[1] - r1[0]) / 15.0;
    let value = base + r2.ln();
    (value, (r2.ln() - r1[1].ln()).abs())
}

pub(crate) fn log_convolution_quadrature(x: &[f64], t: f64, intervals: usize) -> f64 {
    let xs = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = t / intervals as f64;
    let grid = intervals + 1;
    let mut f: Vec<f64> = (0..grid).map(|j| ((x[0] - xs) * h * j as f64).exp()).collect();
    let mut g = vec![0.0; grid];
    for &xk in &x[1..] {
        let kernel: Vec<f64> = (0..grid).map(|j| ((xk - xs) * h * j as f64).exp()).collect();
        for (j, gj) in g.iter_mut().enumerate() {
            if j == 0 {
                *gj = 0.0;
                continue;
            }
            let mut s = 0.5 * (f[0] * kernel[j] + f[j] * kernel[0]);
            for i in 1..j {
                s += f[i] * kernel[j - i];
            }
            *gj = s * h;
        }
        std::mem::swap(&mut f, &mut g);
    }
    t * xs + f[intervals].ln()
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_vertex() {
        let b = bounds_from_values(&[2.0], 1.5, true);
        assert_eq!(b.log_lower, 3.0);
        assert_eq!(b.log_upper_direct, Some(3.0));
        assert_eq!(b.log_upper, 1.5 * 3.0);
        assert_relative_eq!(log_bidiagonal_exp(&[2.0], 1.5).unwrap(), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn two_vertex_direct_path() {
        let b = bounds_from_values(&[0.0, 5.0], 1.0, true);
        assert_eq!(b.i_star, 1);
        assert_relative_eq!(b.log_upper, 6.0 - 6f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(b.log_upper_direct.unwrap(), 5.0 - 5f64.ln(), max_relative = 1e-15);
        let lower = 5f64.exp() * (1.0 - (-5f64).exp()) / 5.0;
        assert_relative_eq!(b.log_lower, lower.ln(), max_relative = 1e-15);
        // Exact value: (e^5 - 1) / 5.
        let exact = log_bidiagonal_exp(&[0.0, 5.0], 1.0).unwrap();
        assert_relative_eq!(exact, ((5f64.exp() - 1.0) / 5.0).ln(), max_relative = 1e-13);
        // With two vertices the lower bound is exact.
        assert_relative_eq!(b.log_lower, exact, max_relative = 1e-13);
        assert!(exact <= b.log_upper_best());
    }

    #[test]
    fn ties_make_direct_upper_infinite() {
        let b = bounds_from_values(&[1.0, 1.0], 2.0, true);
        assert_eq!(b.log_upper_direct, Some(f64::INFINITY));
        assert_relative_eq!(b.log_lower, 2.0 + 2f64.ln(), max_relative = 1e-15);
        // Equal rates: exact = t e^{t x} .
        assert_relative_eq!(log_bidiagonal_exp(&[1.0, 1.0], 2.0).unwrap(), 2.0 + 2f64.ln(), max_relative = 1e-13);
    }

    #[test]
    fn exact_agrees_with_quadrature_and_closed_form() {
        // Three distinct rates: divided difference of exp.
        let x = [-1.0, 0.5, -2.5];
        let t = 1.7;
        let dd = |a: f64, b: f64, c: f64| {
            (a * t).exp() / ((a - b) * (a - c)) + (b * t).exp() / ((b - a) * (b - c)) + (c * t).exp() / ((c - a) * (c - b))
        };
        let e = log_bidiagonal_exp(&x, t).unwrap();
        assert_relative_eq!(e, dd(x[0], x[1], x[2]).ln(), max_relative = 1e-12);
        let q = log_convolution_quadrature(&x, t, 4000);
        assert!((e - q).abs() < 1e-6);
        let (r, err) = log_romberg(&x, t, 200);
        assert!((e - r).abs() < 1e-12 && err < 1e-9, "{} {err}", e - r);
    }

    #[test]
    fn tiny_contributions_keep_relative_accuracy() {
        // Short time, long path: value ~ t^n / n!.
        let x = vec![-1.0; 9];
        let t = 1e-3;
        let e = log_bidiagonal_exp(&x, t).unwrap();
        let expect = (-t) + 8.0 * t.ln() - (1..=8).map(|k| (k as f64).ln()).sum::<f64>();
        assert_relative_eq!(e, expect, max_relative = 1e-12);
    }

    #[test]
    fn sandwich_on_random_paths() {
        let (tree, field) = env(13, 14, 4.0);
        for s in 0..tree.backbone().len().min(10) {
            for len in 1..=8usize {
                let end = tree.backbone()[(s + len).min(tree.backbone().len() - 2)];
                let path = tree.direct_path(tree.backbone()[s], end).unwrap();
                for t in [0.5, 3.0, 20.0] {
                    let b = path_contribution_bounds(&tree, &field, &path, t).unwrap();
                    let e = path_contribution_exact(&tree, &field, &path, t).unwrap();
                    assert!(b.log_lower <= e + 1e-12 * e.abs() && e <= b.log_upper_best() + 1e-12 * e.abs());
                }
            }
        }
    }

    #[test]
    fn walk_bounds() {
        let tree = build(&[None, Some(0)]);
        let field = PotentialField::from_values(4.0, vec![3.0, 1.5]).unwrap();
        let walk = [0, 1, 0];
        let b = path_contribution_bounds(&tree, &field, &walk, 2.0).unwrap();
        assert!(!b.simple && b.log_upper_direct.is_none());
        let e = path_contribution_exact(&tree, &field, &walk, 2.0).unwrap();
        assert!(b.log_lower <= e && e <= b.log_upper);
        assert!(path_contribution_bounds(&tree, &field, &[0, 0], 1.0).is_err());
    }
}
