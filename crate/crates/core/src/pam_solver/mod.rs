//! Solutions of `du/dt = Hu` from a point source on finite vertex sets,
//! with `(Hf)(v) = sum_{y ~ v, y in domain} f(y) - deg(v) f(v) + xi(v) f(v)`
//! and degrees taken from the full tree.

mod evolve;
mod mc;
mod oracle;
mod paths;
mod restricted;

pub use evolve::{evolve, IntegratorStats, SolutionState, MAX_TOL, MIN_TOL};
pub use mc::{feynman_kac_mc, McEstimate, VARIANCE_GUARD};
pub use oracle::{expm_action, solve_oracle_dense, time_reversal_check, DenseSolution, TimeReversal, DENSE_CAP};
pub use paths::{
    path_contribution_bounds, path_contribution_exact, path_contribution_quadrature, path_contribution_romberg, PathBounds,
};
pub use restricted::{adaptive_domain, restricted_solution, AdaptiveDomain, RestrictedSolution};

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gw_tree::{Tree, VertexId};
use crate::potential::PotentialField;

const NO_ROW: u32 = u32::MAX;

/// A finite vertex set with a row numbering. Vertices are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    vertices: Vec<VertexId>,
    index: Vec<u32>,
}

impl Domain {
    /// Any nonempty set of expanded vertices; need not be connected.
    pub fn new(tree: &Tree, mut vertices: Vec<VertexId>) -> Result<Self> {
        vertices.sort_unstable();
        vertices.dedup();
        if vertices.is_empty() {
            return Err(Error::InvalidDomain("empty vertex set".into()));
        }
        let top = *vertices.last().unwrap();
        if !tree.contains(top) {
            return Err(Error::UnknownVertex(top));
        }
        let mut index = vec![NO_ROW; top as usize + 1];
        for (i, &v) in vertices.iter().enumerate() {
            if tree.is_frontier(v) {
                return Err(Error::FrontierViolation {
                    vertex: v,
                    required_radius: u64::from(tree.depth(v)) + 1,
                });
            }
            index[v as usize] = i as u32;
        }
        Ok(Self { vertices, index })
    }

    /// A connected set containing the root, as used for the point-source
    /// problem.
    pub fn rooted(tree: &Tree, vertices: Vec<VertexId>) -> Result<Self> {
        let d = Self::new(tree, vertices)?;
        if !d.contains(tree.root()) {
            return Err(Error::InvalidDomain("domain must contain the root".into()));
        }
        if !d.is_connected(tree) {
            return Err(Error::InvalidDomain("domain must be connected".into()));
        }
        Ok(d)
    }

    /// `B(center, r)`; every member must be expanded, so the tree needs
    /// generation depth beyond `depth(center) + r`.
    pub fn ball(tree: &Tree, center: VertexId, r: u32) -> Result<Self> {
        Self::new(tree, tree.ball(center, r)?)
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn row(&self, v: VertexId) -> Option<usize> {
        match self.index.get(v as usize) {
            Some(&r) if r != NO_ROW => Some(r as usize),
            _ => None,
        }
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.row(v).is_some()
    }

    pub fn require_row(&self, v: VertexId) -> Result<usize> {
        self.row(v).ok_or(Error::NotInDomain(v))
    }

    /// Connected component of `v` inside the domain.
    pub fn component_of(&self, tree: &Tree, v: VertexId) -> Result<Self> {
        self.require_row(v)?;
        let mut seen = vec![false; self.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::from([v]);
        seen[self.row(v).unwrap()] = true;
        while let Some(x) = queue.pop_front() {
            out.push(x);
            for y in tree.neighbours(x)? {
                if let Some(r) = self.row(y) {
                    if !seen[r] {
                        seen[r] = true;
                        queue.push_back(y);
                    }
                }
            }
        }
        Self::new(tree, out)
    }

    pub fn is_connected(&self, tree: &Tree) -> bool {
        self.component_of(tree, self.vertices[0])
            .map(|c| c.len() == self.len())
            .unwrap_or(false)
    }

    /// The domain minus `removed`; `None` if nothing is left.
    pub fn without(&self, tree: &Tree, removed: &[VertexId]) -> Result<Option<Self>> {
        let rest: Vec<VertexId> = self
            .vertices
            .iter()
            .copied()
            .filter(|v| !removed.contains(v))
            .collect();
        if rest.is_empty() {
            Ok(None)
        } else {
            Self::new(tree, rest).map(Some)
        }
    }
}

/// Sparse symmetric Anderson Hamiltonian on a domain.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    domain: Domain,
    diag: Vec<f64>,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    xi_max: f64,
    deg_max: u32,
}

const PAR_ROWS: usize = 1 << 14;

impl Hamiltonian {
    pub fn assemble(tree: &Tree, field: &PotentialField, domain: &Domain) -> Result<Self> {
        let n = domain.len();
        let mut diag = Vec::with_capacity(n);
        let mut row_start = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut xi_max = f64::NEG_INFINITY;
        let mut deg_max = 0;
        row_start.push(0);
        for &v in domain.vertices() {
            let xi = field.xi(tree, v)?;
            let deg = tree.degree(v)?;
            xi_max = xi_max.max(xi);
            deg_max = deg_max.max(deg);
            diag.push(xi - f64::from(deg));
            for y in tree.neighbours(v)? {
                if let Some(r) = domain.row(y) {
                    cols.push(r as u32);
                }
            }
            row_start.push(cols.len());
        }
        Ok(Self {
            domain: domain.clone(),
            diag,
            row_start,
            cols,
            xi_max,
            deg_max,
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal columns of row `i` (all entries equal 1).
    pub fn neighbours(&self, i: usize) -> &[u32] {
        &self.cols[self.row_start[i]..self.row_start[i + 1]]
    }

    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    pub fn deg_max(&self) -> u32 {
        self.deg_max
    }

    /// `max_z xi(z) - deg(z)`.
    pub fn max_diag(&self) -> f64 {
        self.diag.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `y = H x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let row = |(i, yi): (usize, &mut f64)| {
            let mut s = self.diag[i] * x[i];
            for &j in self.neighbours(i) {
                s += x[j as usize];
            }
            *yi = s;
        };
        if self.dim() >= 4 * PAR_ROWS {
            y.par_iter_mut().enumerate().with_min_len(PAR_ROWS).for_each(row);
        } else {
            y.iter_mut().enumerate().for_each(row);
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for &j in self.neighbours(i) {
                m[(i, j as usize)] = 1.0;
            }
        }
        m
    }
}

/// Writes `vertex_id,depth,xi,deg,w,log_u`; `log_u = L + log w`, left empty
/// where `w = 0`.
pub fn write_profile_csv<W: Write>(
    tree: &Tree,
    field: &PotentialField,
    domain: &Domain,
    w: &[f64],
    log_mass: f64,
    out: &mut W,
) -> Result<()> {
    writeln!(out, "vertex_id,depth,xi,deg,w,log_u")?;
    for (i, &v) in domain.vertices().iter().enumerate() {
        let log_u = if w[i] > 0.0 {
            format!("{:.16e}", log_mass + w[i].ln())
        } else {
            String::new()
        };
        writeln!(
            out,
            "{v},{},{:.16e},{},{:.16e},{log_u}",
            tree.depth(v),
            field.xi(tree, v)?,
            tree.degree(v)?,
            w[i]
        )?;
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;

    #[test]
    fn single_vertex_and_edge() {
        let t = build(&[None, Some(0), Some(0)]);
        let f = PotentialField::from_values(4.0, vec![3.0, 1.0, 2.0]).unwrap();
        let d = Domain::new(&t, vec![1]).unwrap();
        let h = Hamiltonian::assemble(&t, &f, &d).unwrap();
        assert_eq!(h.diag(), &[0.0]);
        assert!(h.neighbours(0).is_empty());

        let edge = build(&[None, Some(0)]);
        let ones = PotentialField::from_values(4.0, vec![1.0, 1.0]).unwrap();
        let d = Domain::ball(&edge, 0, 1).unwrap();
        let h = Hamiltonian::assemble(&edge, &ones, &d).unwrap();
        // xi = 1 keeps values in the Pareto support; subtract 1 to compare
        // with the zero-potential matrix.
        let m = h.to_dense() - nalgebra::DMatrix::identity(2, 2);
        assert_eq!(m, nalgebra::DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
    }

    #[test]
    fn symmetric_and_uses_full_degrees() {
        let (tree, field) = env(4, 12, 4.0);
        let d = ball_near(&tree, 150);
        let h = Hamiltonian::assemble(&tree, &field, &d).unwrap();
        let m = h.to_dense();
        assert_eq!(m, m.transpose());
        for (i, &v) in d.vertices().iter().enumerate() {
            let expect = field.xi(&tree, v).unwrap() - f64::from(tree.degree(v).unwrap());
            assert_eq!(m[(i, i)], expect);
        }
    }

    #[test]
    fn domain_validation() {
        let (tree, _) = env(1, 6, 4.0);
        let s6 = tree.backbone()[6];
        assert!(matches!(Domain::new(&tree, vec![0, s6]), Err(Error::FrontierViolation { .. })));
        assert!(Domain::new(&tree, vec![]).is_err());
        let far = tree.backbone()[3];
        assert!(Domain::rooted(&tree, vec![0, far]).is_err());
        let d = Domain::new(&tree, vec![0, far]).unwrap();
        assert!(!d.is_connected(&tree));
        assert_eq!(d.component_of(&tree, far).unwrap().vertices(), &[far]);
    }
}
