//! Pareto potential, order statistics, gaps and the high-potential sets.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::scales::ModelParams;

/// `xi(v)` per vertex, aligned with the tree arena. Frontier vertices hold NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    alpha: f64,
    values: Vec<f64>,
}

/// Inverse CDF of the Pareto law, `u^(-1/alpha)` for `u` in `(0, 1]`.
pub fn pareto_from_uniform(u: f64, alpha: f64) -> f64 {
    u.powf(-1.0 / alpha)
}

/// Draws one Pareto(alpha) variate.
pub fn sample_pareto<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = 1.0 - rng.random::<f64>();
    pareto_from_uniform(u, alpha)
}

impl PotentialField {
    /// One draw per non-frontier vertex, in id order.
    pub fn sample<R: Rng + ?Sized>(tree: &Tree, alpha: f64, rng: &mut R) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        let values = (0..tree.len() as VertexId)
            .map(|v| {
                if tree.is_frontier(v) {
                    f64::NAN
                } else {
                    sample_pareto(alpha, rng)
                }
            })
            .collect();
        Ok(Self { alpha, values })
    }

    /// Field from explicit values; use NaN for frontier vertices.
    pub fn from_values(alpha: f64, values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| !x.is_nan() && !(**x >= 1.0 && x.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "potential values must be finite and >= 1, got {x}"
            )));
        }
        Ok(Self { alpha, values })
    }

    /// Any finite values, including ones outside the Pareto support such as
    /// `xi = 0`.
    pub fn from_any_values(alpha: f64, values: Vec<f64>) -> Result<Self> {
        if let Some(x) = values.iter().find(|x| x.is_infinite()) {
            return Err(Error::InvalidParameter(format!("potential values must be finite, got {x}")));
        }
        Ok(Self { alpha, values })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Raw value; NaN on the frontier.
    pub fn value(&self, v: VertexId) -> f64 {
        self.values[v as usize]
    }

    pub fn xi(&self, tree: &Tree, v: VertexId) -> Result<f64> {
        if !tree.contains(v) || v as usize >= self.values.len() {
            return Err(Error::UnknownVertex(v));
        }
        if tree.is_frontier(v) {
            return Err(Error::FrontierViolation {
                vertex: v,
                required_radius: u64::from(tree.depth(v)) + 1,
            });
        }
        Ok(self.values[v as usize])
    }

    /// `xi(v) - deg(v)`.
    pub fn adjusted(&self, tree: &Tree, v: VertexId) -> Result<f64> {
        Ok(self.xi(tree, v)? - f64::from(tree.degree(v)?))
    }

    pub fn max_on(&self, tree: &Tree, set: &[VertexId]) -> Result<f64> {
        let mut m = f64::NEG_INFINITY;
        for &v in set {
            m = m.max(self.xi(tree, v)?);
        }
        Ok(m)
    }
}

/// Orders by descending key, ties to the lower id.
fn better(a: (VertexId, f64), b: (VertexId, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0 < b.0)
}

/// The `k` largest `(vertex, key)` pairs in descending order.
pub fn top_k_by<F>(set: &[VertexId], k: usize, mut key: F) -> Result<Vec<(VertexId, f64)>>
where
    F: FnMut(VertexId) -> Result<f64>,
{
    let mut top: Vec<(VertexId, f64)> = Vec::with_capacity(k + 1);
    for &v in set {
        let c = (v, key(v)?);
        if top.len() == k && !better(c, top[k - 1]) {
            continue;
        }
        let pos = top.iter().position(|&x| better(c, x)).unwrap_or(top.len());
        top.insert(pos, c);
        top.truncate(k);
    }
    Ok(top)
}

pub fn top_k(tree: &Tree, field: &PotentialField, set: &[VertexId], k: usize) -> Result<Vec<(VertexId, f64)>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    top_k_by(set, k, |v| field.xi(tree, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// Argmax of `xi`.
    pub z: VertexId,
    /// `xi(z)` minus the runner-up.
    pub gap: f64,
    /// Argmax of `xi - deg`.
    pub z_tilde: VertexId,
    pub gap_tilde: f64,
    /// Highest values of `xi`, descending.
    pub top: Vec<(VertexId, f64)>,
}

/// Gap report over an arbitrary vertex set.
pub fn gap_report_on(tree: &Tree, field: &PotentialField, set: &[VertexId], k: usize) -> Result<GapReport> {
    let needed = (k + 1).max(2);
    if set.len() < needed {
        return Err(Error::SetTooSmall { size: set.len(), needed });
    }
    let top = top_k(tree, field, set, k.max(2))?;
    let adj = top_k_by(set, 2, |v| field.adjusted(tree, v))?;
    Ok(GapReport {
        z: top[0].0,
        gap: top[0].1 - top[1].1,
        z_tilde: adj[0].0,
        gap_tilde: adj[0].1 - adj[1].1,
        top: top.into_iter().take(k).collect(),
    })
}

/// Gap report over `B_r`.
pub fn gap_report(tree: &Tree, field: &PotentialField, r: u32, k: usize) -> Result<GapReport> {
    gap_report_on(tree, field, &tree.ball(0, r)?, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HighSets {
    pub radius: u32,
    pub f_threshold: f64,
    pub g_threshold: f64,
    pub f: Vec<VertexId>,
    pub e: Vec<VertexId>,
    pub g: Vec<VertexId>,
}

/// `F_t`, `E_t` and `G_t(delta)` inside `B_{R(t)}`, with `R(t)` floored to an
/// integer radius.
pub fn high_sets(tree: &Tree, field: &PotentialField, params: &ModelParams, t: f64, delta: f64) -> Result<HighSets> {
    if !(delta > 0.0 && delta < params.delta_max()) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in (0, {}), got {delta}",
            params.delta_max()
        )));
    }
    let big_r = params.scale_big_r(t)?;
    let radius = radius_of(big_r)?;
    let f_threshold = big_r.powf(params.d / params.alpha) * t.ln().powf(-params.c);
    let g_threshold = big_r.powf(params.d / params.alpha - delta);
    high_sets_with(tree, field, radius, f_threshold, g_threshold)
}

/// Same sets with explicit radius and thresholds.
pub fn high_sets_with(
    tree: &Tree,
    field: &PotentialField,
    radius: u32,
    f_threshold: f64,
    g_threshold: f64,
) -> Result<HighSets> {
    let ball = tree.ball(0, radius)?;
    let mut f = Vec::new();
    let mut g = Vec::new();
    let mut min_f_adj = f64::INFINITY;
    for &v in &ball {
        let x = field.xi(tree, v)?;
        if x >= f_threshold {
            f.push(v);
            min_f_adj = min_f_adj.min(x - f64::from(tree.degree(v)?));
        }
        if x >= g_threshold {
            g.push(v);
        }
    }
    let mut e = Vec::new();
    if !f.is_empty() {
        for &v in &ball {
            if f.binary_search(&v).is_err() && field.adjusted(tree, v)? >= min_f_adj {
                e.push(v);
            }
        }
    }
    Ok(HighSets {
        radius,
        f_threshold,
        g_threshold,
        f,
        e,
        g,
    })
}

pub(crate) fn radius_of(x: f64) -> Result<u32> {
    if !(x >= 0.0) || x >= f64::from(u32::MAX) {
        return Err(Error::InvalidParameter(format!("radius {x} out of range")));
    }
    Ok(x.floor() as u32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapTailBound {
    pub raw: f64,
    pub clipped: f64,
}

/// `(n y^-alpha + 1) exp(-y^-alpha (n - 1))`, the stated bound on
/// `P(g_n <= y)` for `n` i.i.d. Pareto values.
pub fn gap_tail_bound(n: u64, y: f64, alpha: f64) -> Result<GapTailBound> {
    if n < 2 || !(y > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "gap bound needs n >= 2, y > 0, alpha > 0 (got n={n}, y={y}, alpha={alpha})"
        )));
    }
    let s = y.powf(-alpha);
    let raw = (n as f64 * s + 1.0) * (-s * (n - 1) as f64).exp();
    Ok(GapTailBound {
        raw,
        clipped: raw.clamp(0.0, 1.0),
    })
}

/// Gap between the two largest of `n` fresh Pareto draws.
pub fn sample_gap<R: Rng + ?Sized>(n: u64, alpha: f64, rng: &mut R) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..n {
        let x = sample_pareto(alpha, rng);
        if x > a {
            b = a;
            a = x;
        } else if x > b {
            b = x;
        }
    }
    a - b
}

pub const FIELD_MAGIC: &str = "# field";

/// Appends `# field alpha=<a>` and one `id value` line per non-frontier
/// vertex. Values carry 17 significant digits, which round-trips binary64.
pub fn write_field<W: Write>(field: &PotentialField, out: &mut W) -> Result<()> {
    writeln!(out, "{FIELD_MAGIC} alpha={:.16e}", field.alpha)?;
    for (v, x) in field.values.iter().enumerate() {
        if !x.is_nan() {
            writeln!(out, "{v} {x:.16e}")?;
        }
    }
    Ok(())
}

/// Writes a tree followed by its field.
pub fn write_environment<W: Write>(tree: &Tree, field: &PotentialField, out: &mut W) -> Result<()> {
    crate::gw_tree::write_tree(tree, out)?;
    write_field(field, out)
}

/// Reads a tree and, if present, the field section after it.
pub fn read_environment<R: BufRead>(input: &mut R) -> Result<(Tree, Option<PotentialField>)> {
    let (tree, rest) = crate::gw_tree::io_read_prefix(input)?;
    let Some((hl, header)) = rest else {
        return Ok((tree, None));
    };
    let perr = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let alpha: f64 = header
        .strip_prefix(FIELD_MAGIC)
        .and_then(|s| s.trim().strip_prefix("alpha="))
        .ok_or_else(|| perr(hl, "expected field header"))?
        .parse()
        .map_err(|_| perr(hl, "bad alpha"))?;
    let mut values = vec![f64::NAN; tree.len()];
    let mut seen = 0usize;
    for (i, line) in input.lines().enumerate() {
        let line_no = hl + 1 + i;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, x) = line.split_once(' ').ok_or_else(|| perr(line_no, "expected `id value`"))?;
        let id: usize = id.parse().map_err(|_| perr(line_no, "bad id"))?;
        let x: f64 = x.trim().parse().map_err(|_| perr(line_no, "bad value"))?;
        if id >= tree.len() || tree.is_frontier(id as VertexId) || !values[id].is_nan() {
            return Err(perr(line_no, "id out of range, on the frontier, or repeated"));
        }
        values[id] = x;
        seen += 1;
    }
    let expected = (0..tree.len() as VertexId).filter(|&v| !tree.is_frontier(v)).count();
    if seen != expected {
        return Err(perr(hl, "field does not cover every expanded vertex"));
    }
    Ok((tree, Some(PotentialField::from_values(alpha, values)?)))
}
