//! Variable-speed random walk: each incident edge is crossed at rate 1, so
//! the walk holds at `v` for an Exp(deg v) time and then jumps to a uniform
//! neighbour.
//!
//! Each jump consumes one Exp(1) draw and one uniform, in that order.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    Horizon,
    /// Stop on arrival at this vertex.
    Target(VertexId),
    /// Stop on first reaching depth `r`, i.e. on leaving `B_{r-1}`.
    ExitBall(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Horizon,
    HitTarget,
    ExitedBall,
    /// The walk arrived at an unexpanded vertex; the trajectory is invalid.
    Frontier,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start: VertexId,
    pub horizon: f64,
    /// `(vertex, arrival time)`, starting with `(start, 0)`.
    pub visits: Vec<(VertexId, f64)>,
    pub end: Termination,
}

impl Trajectory {
    pub fn is_valid(&self) -> bool {
        self.end != Termination::Frontier
    }

    /// Position at time `s <= horizon`.
    pub fn position(&self, s: f64) -> VertexId {
        let k = self.visits.partition_point(|&(_, a)| a <= s);
        self.visits[k.saturating_sub(1)].0
    }
}

/// One holding time and jump from `v`.
pub fn jump<R: Rng + ?Sized>(tree: &Tree, v: VertexId, rng: &mut R) -> Result<(f64, VertexId)> {
    let deg = tree.degree(v)?;
    let e: f64 = Exp1.sample(rng);
    let u: f64 = rng.random();
    let k = ((u * f64::from(deg)) as u32).min(deg - 1);
    let next = match tree.parent(v) {
        Some(p) if k == 0 => p,
        Some(_) => tree.children(v)[k as usize - 1],
        None => tree.children(v)[k as usize],
    };
    Ok((e / f64::from(deg), next))
}

fn stops(stop: Stop, tree: &Tree, v: VertexId) -> Option<Termination> {
    match stop {
        Stop::Target(x) if x == v => Some(Termination::HitTarget),
        Stop::ExitBall(r) if tree.depth(v) >= r => Some(Termination::ExitedBall),
        _ => None,
    }
}

pub fn simulate_vsrw<R: Rng + ?Sized>(tree: &Tree, start: VertexId, horizon: f64, rng: &mut R, stop: Stop) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    tree.degree(start)?;
    let mut visits = vec![(start, 0.0)];
    let mut v = start;
    let mut s = 0.0;
    let end = loop {
        if let Some(e) = stops(stop, tree, v) {
            break e;
        }
        if tree.is_frontier(v) {
            break Termination::Frontier;
        }
        let (hold, next) = jump(tree, v, rng)?;
        if s + hold > horizon {
            break Termination::Horizon;
        }
        s += hold;
        v = next;
        visits.push((v, s));
    };
    Ok(Trajectory {
        start,
        horizon,
        visits,
        end,
    })
}

/// Binomial proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl Proportion {
    pub fn from_counts(hits: u64, samples: u64) -> Self {
        let p = hits as f64 / samples as f64;
        Self {
            estimate: p,
            std_error: (p * (1.0 - p) / samples as f64).sqrt(),
            samples,
        }
    }
}

pub const MIN_SAMPLES: u64 = 1000;

fn check_samples(n: u64) -> Result<()> {
    if n < MIN_SAMPLES {
        return Err(Error::InvalidParameter(format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    Ok(())
}

/// First time the walk from the root is at `v`, or `None` after `horizon`.
fn hit_time<R: Rng + ?Sized>(tree: &Tree, v: VertexId, horizon: f64, rng: &mut R) -> Result<Option<f64>> {
    let tr = simulate_vsrw(tree, tree.root(), horizon, rng, Stop::Target(v))?;
    match tr.end {
        Termination::HitTarget => Ok(Some(tr.visits.last().unwrap().1)),
        Termination::Frontier => Err(Error::FrontierContact(tr.visits.last().unwrap().0)),
        _ => Ok(None),
    }
}

/// `P(H_v <= t)` from the root.
pub fn hitting_probability<R: Rng + ?Sized>(tree: &Tree, v: VertexId, t: f64, n_samples: u64, rng: &mut R) -> Result<Proportion> {
    Ok(hitting_probability_grid(tree, v, &[t], n_samples, rng)?[0])
}

/// Coupled estimates of `P(H_v <= t)` for every `t` in `ts` from the same
/// trajectories, hence nondecreasing in `t`.
pub fn hitting_probability_grid<R: Rng + ?Sized>(
    tree: &Tree,
    v: VertexId,
    ts: &[f64],
    n_samples: u64,
    rng: &mut R,
) -> Result<Vec<Proportion>> {
    check_samples(n_samples)?;
    if !tree.contains(v) {
        return Err(Error::UnknownVertex(v));
    }
    let horizon = ts.iter().copied().fold(0.0f64, f64::max);
    let mut hits = vec![0u64; ts.len()];
    for _ in 0..n_samples {
        if let Some(h) = hit_time(tree, v, horizon, rng)? {
            for (c, &t) in hits.iter_mut().zip(ts) {
                if h <= t {
                    *c += 1;
                }
            }
        }
    }
    Ok(hits.iter().map(|&c| Proportion::from_counts(c, n_samples)).collect())
}

/// `exp{-|v| ([log |v| - log t - 1] v 0)}`.
pub fn hitting_bound(depth: u32, t: f64) -> f64 {
    let n = f64::from(depth);
    if depth == 0 {
        return 1.0;
    }
    (-n * (n.ln() - t.ln() - 1.0).max(0.0)).exp()
}

/// `P(tau_{B_{r-1}} <= t)` from the root.
pub fn exit_probability<R: Rng + ?Sized>(tree: &Tree, r: u32, t: f64, n_samples: u64, rng: &mut R) -> Result<Proportion> {
    Ok(exit_probability_grid(tree, &[r], &[t], n_samples, rng)?[0][0])
}

/// Coupled exit estimates; entry `[i][j]` is for radius `rs[i]` and time
/// `ts[j]`. Shared trajectories make the table nonincreasing in `r` and
/// nondecreasing in `t`.
pub fn exit_probability_grid<R: Rng + ?Sized>(
    tree: &Tree,
    rs: &[u32],
    ts: &[f64],
    n_samples: u64,
    rng: &mut R,
) -> Result<Vec<Vec<Proportion>>> {
    check_samples(n_samples)?;
    let r_max = rs.iter().copied().max().unwrap_or(0);
    if r_max == 0 {
        return Err(Error::InvalidParameter("radii must be positive".into()));
    }
    if let Some(cap) = tree.radius() {
        if cap < r_max {
            return Err(Error::FrontierViolation {
                vertex: tree.root(),
                required_radius: u64::from(r_max),
            });
        }
    }
    let horizon = ts.iter().copied().fold(0.0f64, f64::max);
    let mut counts = vec![vec![0u64; ts.len()]; rs.len()];
    let mut first = vec![f64::INFINITY; r_max as usize + 1];
    for _ in 0..n_samples {
        first.iter_mut().for_each(|x| *x = f64::INFINITY);
        first[0] = 0.0;
        let tr = simulate_vsrw(tree, tree.root(), horizon, rng, Stop::ExitBall(r_max))?;
        if tr.end == Termination::Frontier {
            return Err(Error::FrontierContact(tr.visits.last().unwrap().0));
        }
        for &(v, s) in &tr.visits {
            let d = tree.depth(v) as usize;
            if d <= r_max as usize && first[d].is_infinite() {
                first[d] = s;
            }
        }
        for (i, &r) in rs.iter().enumerate() {
            for (j, &t) in ts.iter().enumerate() {
                if first[r as usize] <= t {
                    counts[i][j] += 1;
                }
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|row| row.into_iter().map(|c| Proportion::from_counts(c, n_samples)).collect())
        .collect())
}

/// `exp{-(r/5) log(r/(et))}` and its value clipped to 1.
pub fn exit_bound(r: u32, t: f64) -> (f64, f64) {
    let r = f64::from(r);
    let raw = (-(r / 5.0) * (r / (std::f64::consts::E * t)).ln()).exp();
    (raw, raw.min(1.0))
}

/// `prod_{u ancestor of v, u != v} 1/deg u`, the prefactor of the lower
/// hitting estimate. Reported only.
pub fn hitting_degree_prefactor(tree: &Tree, v: VertexId) -> Result<f64> {
    let mut p = 1.0;
    let mut a = v;
    while let Some(u) = tree.parent(a) {
        p /= f64::from(tree.degree(u)?);
        a = u;
    }
    Ok(p)
}
