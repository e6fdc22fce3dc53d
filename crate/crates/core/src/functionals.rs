//! Localisation functionals and the site sets built from them.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::potential::{radius_of, top_k_by, PotentialField};
use crate::scales::ModelParams;

const PAR_CHUNK: usize = 1 << 15;

/// `n log(n / (t e))`, zero at `n = 0`.
pub fn dist_penalty(n: u32, t: f64) -> f64 {
    if n == 0 {
        0.0
    } else {
        let n = f64::from(n);
        n * (n / (t * std::f64::consts::E)).ln()
    }
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("t must be positive, got {t}")))
    }
}

/// `psi_t(v)` from `A = xi(v) - deg(v)` and `|v|`:
/// `[A - (|v|/t) log A] 1{tA >= |v|}`, with the value 0 when `A = 0`.
pub fn psi_value(a: f64, depth: u32, t: f64) -> f64 {
    let n = f64::from(depth);
    if t * a < n || a == 0.0 {
        return 0.0;
    }
    if depth == 0 {
        a
    } else {
        a - n / t * a.ln()
    }
}

pub fn psi(tree: &Tree, field: &PotentialField, t: f64, v: VertexId) -> Result<f64> {
    check_t(t)?;
    Ok(psi_value(field.adjusted(tree, v)?, tree.depth(v), t))
}

/// Supremum over `rho` in `[0, 1]` of
/// `(1 - rho) A - (|v|/t) log(|v| / (rho e t))`, in closed form.
pub fn psi_sup_value(a: f64, depth: u32, t: f64) -> f64 {
    if depth == 0 {
        return a.max(0.0);
    }
    let n = f64::from(depth);
    if a > 0.0 && n <= t * a {
        a - n / t * a.ln()
    } else {
        -dist_penalty(depth, t) / t
    }
}

pub fn psi_sup_form(tree: &Tree, field: &PotentialField, t: f64, v: VertexId) -> Result<f64> {
    check_t(t)?;
    Ok(psi_sup_value(field.adjusted(tree, v)?, tree.depth(v), t))
}

/// `t xi(v) - |v| log(|v| / (e t))`.
pub fn psi_bar(tree: &Tree, field: &PotentialField, t: f64, v: VertexId) -> Result<f64> {
    check_t(t)?;
    Ok(t * field.xi(tree, v)? - dist_penalty(tree.depth(v), t))
}

/// `xi(v) - (|v|/t) log(|v|/t)`, the variant listed among the notation.
pub fn psi_bar_table(tree: &Tree, field: &PotentialField, t: f64, v: VertexId) -> Result<f64> {
    check_t(t)?;
    let n = f64::from(tree.depth(v));
    let pen = if n == 0.0 { 0.0 } else { n / t * (n / t).ln() };
    Ok(field.xi(tree, v)? - pen)
}

/// Top-3 maximisers of `psi_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalisationSites {
    pub z: [VertexId; 3],
    pub psi: [f64; 3],
    pub gap12: f64,
    pub gap13: f64,
}

/// Parallel top-k over `0..end` with the lowest-id tie-break. Chunked
/// partial results are merged with the same total order, so the output does
/// not depend on scheduling.
pub(crate) fn top_k_prefix<F>(end: usize, k: usize, key: F) -> Result<Vec<(VertexId, f64)>>
where
    F: Fn(VertexId) -> Result<f64> + Sync,
{
    let partial: Vec<Vec<(VertexId, f64)>> = (0..end.div_ceil(PAR_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * PAR_CHUNK;
            let hi = (lo + PAR_CHUNK).min(end);
            let ids: Vec<VertexId> = (lo as VertexId..hi as VertexId).collect();
            top_k_by(&ids, k, &key)
        })
        .collect::<Result<_>>()?;
    let mut merged: Vec<(VertexId, f64)> = partial.into_iter().flatten().collect();
    merged.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    merged.truncate(k);
    Ok(merged)
}

/// Exact top-3 of `psi_t` over `B_{search_radius}`.
pub fn maximisers(tree: &Tree, field: &PotentialField, t: f64, search_radius: u32) -> Result<LocalisationSites> {
    check_t(t)?;
    let end = tree.ball(0, search_radius)?.len();
    if end < 3 {
        return Err(Error::SetTooSmall { size: end, needed: 3 });
    }
    let top = top_k_prefix(end, 3, |v| psi(tree, field, t, v))?;
    Ok(LocalisationSites {
        z: [top[0].0, top[1].0, top[2].0],
        psi: [top[0].1, top[1].1, top[2].1],
        gap12: top[0].1 - top[1].1,
        gap13: top[0].1 - top[2].1,
    })
}

/// Default search radius for the maximisers: `R(t)`.
pub fn default_search_radius(params: &ModelParams, t: f64) -> Result<u32> {
    radius_of(params.scale_big_r(t)?)
}

/// `lambda(t, v, y) = t(xi(y) - deg y) - |y| log(|y|/(te)) - |v-y| log(|v-y|/(te))`.
pub fn lambda_of(tree: &Tree, field: &PotentialField, t: f64, v: VertexId, y: VertexId) -> Result<f64> {
    check_t(t)?;
    field.xi(tree, v)?;
    let d = tree.distance(v, y)?;
    Ok(lambda_value(field.adjusted(tree, y)?, tree.depth(y), d, t))
}

fn lambda_value(a: f64, depth: u32, dist: u32, t: f64) -> f64 {
    t * a - dist_penalty(depth, t) - dist_penalty(dist, t)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxSite {
    /// Maximiser of `lambda(t, v, .)`.
    pub y: VertexId,
    /// Maximiser of `lambda(t, v, .) + t deg(.)`.
    pub y_tilde: VertexId,
    pub lambda: f64,
    pub lambda_plus: f64,
}

/// Scans `B_{search_radius}` for `Y(t, v)` and `Y~(t, v)`.
pub fn lambda_sup(tree: &Tree, field: &PotentialField, t: f64, v: VertexId, search_radius: u32) -> Result<ApproxSite> {
    check_t(t)?;
    field.xi(tree, v)?;
    let end = tree.ball(0, search_radius)?.len();
    let dist = tree.distances_to_prefix(v, end)?;
    let best = top_k_prefix(end, 1, |y| {
        Ok(lambda_value(field.adjusted(tree, y)?, tree.depth(y), dist[y as usize], t))
    })?[0];
    let best_tilde = top_k_prefix(end, 1, |y| {
        Ok(lambda_value(field.xi(tree, y)?, tree.depth(y), dist[y as usize], t))
    })?[0];
    Ok(ApproxSite {
        y: best.0,
        y_tilde: best_tilde.0,
        lambda: best.1,
        lambda_plus: best.1.max(0.0),
    })
}

/// `lambda_+(t, v)` for each `v` in `targets`, with `y` ranging over
/// `window`.
///
/// Candidates are scanned in decreasing order of `t(xi(y) - deg y) -
/// |y| log(|y|/(te))`; since the distance penalty is at least `-t`, the scan
/// stops once no remaining candidate can win.
pub fn lambda_plus_profile(
    tree: &Tree,
    field: &PotentialField,
    t: f64,
    targets: &[VertexId],
    window: &[VertexId],
) -> Result<Vec<f64>> {
    check_t(t)?;
    let mut cand = window
        .iter()
        .map(|&y| Ok((t * field.adjusted(tree, y)? - dist_penalty(tree.depth(y), t), y)))
        .collect::<Result<Vec<(f64, VertexId)>>>()?;
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    targets
        .iter()
        .map(|&v| {
            field.xi(tree, v)?;
            let mut best = f64::NEG_INFINITY;
            for &(c, y) in &cand {
                if c + t <= best {
                    break;
                }
                best = best.max(c - dist_penalty(tree.distance(v, y)?, t));
            }
            Ok(best.max(0.0))
        })
        .collect()
}

/// Default window `r(t) (log t)^m` with `m = q + 1`.
pub fn default_lambda_radius(params: &ModelParams, t: f64, m: Option<f64>) -> Result<u32> {
    let m = m.unwrap_or(params.q + 1.0);
    if m <= params.q {
        return Err(Error::InvalidParameter(format!("m must exceed q = {}, got {m}", params.q)));
    }
    radius_of(params.scale_r(t)? * t.ln().powf(m))
}

/// `{v : d(v, z) + min(|v|, |z|) <= (1 + (log t)^-exponent) |z|}`, sorted.
///
/// `d(v, z) + min(|v|, |z|)` never decreases along a path leaving `z`, so a
/// pruned breadth-first search from `z` finds the whole set.
pub fn gamma_set(tree: &Tree, z: VertexId, t: f64, exponent: f64) -> Result<Vec<VertexId>> {
    if !(t > 1.0) {
        return Err(Error::InvalidParameter(format!("t must exceed 1, got {t}")));
    }
    if !tree.contains(z) {
        return Err(Error::UnknownVertex(z));
    }
    let dz = tree.depth(z);
    let bound = (1.0 + t.ln().powf(-exponent)) * f64::from(dz);
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    queue.push_back((z, VertexId::MAX, 0u32));
    while let Some((v, from, dist)) = queue.pop_front() {
        let key = f64::from(dist + tree.depth(v).min(dz));
        if key > bound {
            continue;
        }
        out.push(v);
        for w in tree.neighbours(v)? {
            if w != from {
                queue.push_back((w, v, dist + 1));
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSets {
    pub gamma1: Vec<VertexId>,
    pub gamma2: Vec<VertexId>,
    /// `Gamma1 ∪ Gamma2`, sorted.
    pub lambda: Vec<VertexId>,
    /// `{Z1, Z2}`.
    pub omega: Vec<VertexId>,
}

pub fn gamma_sets(tree: &Tree, sites: &LocalisationSites, params: &ModelParams, t: f64) -> Result<GammaSets> {
    let gamma1 = gamma_set(tree, sites.z[0], t, params.z)?;
    let gamma2 = gamma_set(tree, sites.z[1], t, params.z)?;
    let mut lambda: Vec<VertexId> = gamma1.iter().chain(&gamma2).copied().collect();
    lambda.sort_unstable();
    lambda.dedup();
    let mut omega = vec![sites.z[0], sites.z[1]];
    omega.sort_unstable();
    Ok(GammaSets {
        gamma1,
        gamma2,
        lambda,
        omega,
    })
}
