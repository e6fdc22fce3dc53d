use rand::Rng;

use super::{OffspringDistribution, Tree, TreeInfo, VertexId};
use crate::error::{Error, Result};

pub const DEFAULT_VERTEX_CAP: usize = 100_000_000;

/// Result of growing an unconditioned tree with a size cap.
#[derive(Debug, Clone)]
pub enum GwOutcome {
    Finite(Tree),
    /// The cap was exceeded; the tree has more than `cap` vertices.
    Overflow { cap: usize },
}

/// Kesten's tree up to generation `radius`.
///
/// Vertices are expanded in id order. Each expansion draws one uniform for
/// the offspring count and, for a spine vertex, one more uniform to pick the
/// special child. Vertices at depth `radius` are left unexpanded.
pub fn generate_kesten<R: Rng + ?Sized>(
    mu: &OffspringDistribution,
    radius: u32,
    rng: &mut R,
    cap: usize,
) -> Result<Tree> {
    if radius < 1 {
        return Err(Error::InvalidParameter("radius must be at least 1".into()));
    }
    let mu_star = mu.size_biased()?;
    let mut parents: Vec<Option<VertexId>> = vec![None];
    let mut depth: Vec<u32> = vec![0];
    let mut backbone = vec![true];
    let mut frontier = vec![false];
    let mut next = 0usize;
    while next < parents.len() {
        let v = next;
        next += 1;
        if depth[v] == radius {
            frontier[v] = true;
            continue;
        }
        let special = backbone[v];
        let k = if special {
            mu_star.sample(rng)
        } else {
            mu.sample(rng)
        };
        let chosen = if special {
            let u: f64 = rng.random();
            ((u * f64::from(k)) as u32).min(k - 1)
        } else {
            u32::MAX
        };
        if parents.len() + k as usize > cap {
            return Err(Error::SizeLimit { cap });
        }
        for i in 0..k {
            parents.push(Some(v as VertexId));
            depth.push(depth[v] + 1);
            backbone.push(i == chosen);
            frontier.push(false);
        }
    }
    let info = TreeInfo {
        family: mu.label().to_string(),
        seed: None,
        radius: Some(radius),
    };
    Tree::from_parents(&parents, backbone, frontier, info)
}

/// Unconditioned Galton-Watson tree, or an overflow marker once more than
/// `size_cap` vertices exist.
pub fn generate_gw<R: Rng + ?Sized>(
    mu: &OffspringDistribution,
    rng: &mut R,
    size_cap: usize,
) -> Result<GwOutcome> {
    if size_cap < 1 {
        return Err(Error::InvalidParameter("size_cap must be at least 1".into()));
    }
    if (mu.mean() - 1.0).abs() > 1e-10 {
        return Err(Error::NotCritical { mean: mu.mean() });
    }
    let mut parents: Vec<Option<VertexId>> = vec![None];
    let mut next = 0usize;
    while next < parents.len() {
        let v = next;
        next += 1;
        let k = mu.sample(rng) as usize;
        if parents.len() + k > size_cap {
            return Ok(GwOutcome::Overflow { cap: size_cap });
        }
        parents.extend(std::iter::repeat_n(Some(v as VertexId), k));
    }
    let n = parents.len();
    let info = TreeInfo {
        family: mu.label().to_string(),
        seed: None,
        radius: None,
    };
    Ok(GwOutcome::Finite(Tree::from_parents(
        &parents,
        vec![false; n],
        vec![false; n],
        info,
    )?))
}
