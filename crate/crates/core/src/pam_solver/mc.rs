//! Monte Carlo estimate of `u(t, .)` from the Feynman-Kac formula.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::potential::PotentialField;
use crate::rw_sim::jump;

/// Largest `t * max xi` accepted without the override.
pub const VARIANCE_GUARD: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub n_paths: u64,
    /// `(vertex, mean, standard error)` for every vertex some path ended at,
    /// sorted by vertex.
    pub entries: Vec<(VertexId, f64, f64)>,
    /// Estimate of `sum_v u(t, v)` and its standard error.
    pub total: f64,
    pub total_se: f64,
}

impl McEstimate {
    pub fn get(&self, v: VertexId) -> (f64, f64) {
        match self.entries.binary_search_by_key(&v, |e| e.0) {
            Ok(i) => (self.entries[i].1, self.entries[i].2),
            Err(_) => (0.0, 0.0),
        }
    }
}

fn mean_se(sum: f64, sq: f64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = if n > 1 { ((sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0) } else { 0.0 };
    (mean, (var / nf).sqrt())
}

/// Averages `exp(int_0^t xi(X_s) ds) 1{X_t = v}` over `n_paths` walks from
/// the root. Refuses when `t * max xi` over the expanded vertices exceeds
/// [`VARIANCE_GUARD`] unless `allow_high_variance` is set.
pub fn feynman_kac_mc<R: Rng + ?Sized>(
    tree: &Tree,
    field: &PotentialField,
    t: f64,
    n_paths: u64,
    rng: &mut R,
    allow_high_variance: bool,
) -> Result<McEstimate> {
    if !(t > 0.0 && t.is_finite()) || n_paths == 0 {
        return Err(Error::InvalidParameter("need t > 0 and at least one path".into()));
    }
    let xi_max = field.values().iter().copied().filter(|x| !x.is_nan()).fold(f64::NEG_INFINITY, f64::max);
    if t * xi_max > VARIANCE_GUARD && !allow_high_variance {
        return Err(Error::VarianceGuard {
            value: t * xi_max,
            limit: VARIANCE_GUARD,
        });
    }
    let mut acc: BTreeMap<VertexId, (f64, f64)> = BTreeMap::new();
    let (mut total, mut total_sq) = (0.0, 0.0);
    for _ in 0..n_paths {
        let mut v = tree.root();
        let mut s = 0.0;
        let mut exponent = 0.0;
        loop {
            if tree.is_frontier(v) {
                return Err(Error::FrontierContact(v));
            }
            let (hold, next) = jump(tree, v, rng)?;
            let xi = field.xi(tree, v)?;
            if s + hold >= t {
                exponent += xi * (t - s);
                break;
            }
            exponent += xi * hold;
            s += hold;
            v = next;
        }
        let weight = f64::exp(exponent);
        let e = acc.entry(v).or_insert((0.0, 0.0));
        e.0 += weight;
        e.1 += weight * weight;
        total += weight;
        total_sq += weight * weight;
    }
    let entries = acc
        .into_iter()
        .map(|(v, (s, q))| {
            let (m, se) = mean_se(s, q, n_paths);
            (v, m, se)
        })
        .collect();
    let (total, total_se) = mean_se(total, total_sq, n_paths);
    Ok(McEstimate {
        n_paths,
        entries,
        total,
        total_se,
    })
}
